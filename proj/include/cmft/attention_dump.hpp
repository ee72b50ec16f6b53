// Copyright 2026 The CMFT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CMFT_ATTENTION_DUMP_HPP_
#define CMFT_ATTENTION_DUMP_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "cmft/detector.hpp"
#include "cmft/image.hpp"
#include "cmft/synth.hpp"

namespace cmft {

// One row per line, values printed with 9 significant digits.
std::string attention_csv(const Tensor<float>& alpha);

struct Heatmap {
  Image image;  // 1 channel, linear min-max scaled
  double min = 0;
  double max = 0;
};

// pixel = round(255 (a - min) / (max - min)); all zero for a flat matrix.
Heatmap attention_heatmap(const Tensor<float>& alpha);

// Writes stage<s>_block<b>_head<h>.{csv,pgm,txt} for every fusion stage of
// a CFT-mode model and returns the written paths in order. The .txt sidecar
// records the scaling and the RGB/thermal quadrant boundary.
std::vector<std::filesystem::path> dump_attention(const Detector<float>& model, const ModelInput<float>& input,
                                                  const std::filesystem::path& out_dir);

}  // namespace cmft

#endif  // CMFT_ATTENTION_DUMP_HPP_
