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

#ifndef CMFT_SYNTH_HPP_
#define CMFT_SYNTH_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmft/box.hpp"
#include "cmft/image.hpp"
#include "cmft/io.hpp"
#include "cmft/tensor.hpp"

namespace cmft {

enum class Visibility { kRgbOnly, kThermalOnly, kBoth };

// Class ids: 0 person (tall ellipse), 1 car (wide rectangle), 2 bicycle
// (small diamond).
inline constexpr std::size_t kNumSynthClasses = 3;

struct ObjectSpec {
  int class_id = 0;
  Box box;  // integer pixel bounds, [x1, x2) x [y1, y2)
  Visibility visibility = Visibility::kBoth;
  double contrast = 1.0;  // blend weight of the object over the background
};

struct PairSample {
  Image rgb;      // 3 channels
  Image thermal;  // 1 channel, same extents
  std::vector<GroundTruth> annotations;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t count = 500;
  std::size_t image_size = 64;
  // Probabilities of rgb_only, thermal_only, both.
  std::array<double, 3> visibility_probs = {0.35, 0.35, 0.30};
  double night_fraction = 0.5;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;

  // Throws ContractError: probabilities negative or not summing to 1,
  // image_size < 16, bad object counts, night_fraction outside [0, 1].
  void validate() const;
};

struct SyntheticSample {
  PairSample pair;
  std::vector<ObjectSpec> objects;
  bool night = false;
};

// Sample `index` of the stream seeded by cfg.seed. Pure: every sample draws
// from its own sub-seed, so samples can be produced in any order.
SyntheticSample synthesize(const SynthConfig& cfg, std::size_t index);

// Writes <root>/<split>/{rgb/NNNNNN.ppm, thermal/NNNNNN.pgm, annotations.csv,
// manifest.txt}. Directory or write failures throw std::runtime_error.
void generate(const SynthConfig& cfg, const std::filesystem::path& root, const std::string& split);

// "image_id,class_id,x1,y1,x2,y2" with a header line. Coordinates must be
// integral.
std::string encode_annotations(const std::vector<std::vector<GroundTruth>>& per_image);
// Throws FormatError on a bad header, a malformed line or an image id >= num_images.
std::vector<std::vector<GroundTruth>> decode_annotations(const std::string& csv, std::size_t num_images);

void write_pair(const PairSample& sample, const std::filesystem::path& rgb_path,
                const std::filesystem::path& thermal_path);
// Throws FormatError for malformed files and DimensionError when the two
// images are not aligned (different extents) or have the wrong channel count.
PairSample load_pair(const std::filesystem::path& rgb_path, const std::filesystem::path& thermal_path,
                     std::vector<GroundTruth> annotations = {});

struct Dataset {
  std::string split;
  KeyValues manifest;
  std::vector<PairSample> samples;
};

// Loads a split written by generate(). Throws std::runtime_error when the
// directory is missing and FormatError when the manifest and files disagree.
Dataset load_split(const std::filesystem::path& root, const std::string& split);

template <class S>
struct ModelInput {
  Tensor<S> rgb;      // [3 x H x W]
  Tensor<S> thermal;  // [1 x H x W]
};

// Pixels scaled by 1/255, no mean subtraction.
template <class S>
ModelInput<S> to_model_input(const PairSample& sample);

}  // namespace cmft

#endif  // CMFT_SYNTH_HPP_
