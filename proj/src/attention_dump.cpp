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

#include "cmft/attention_dump.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cmft/io.hpp"

namespace cmft {

std::string attention_csv(const Tensor<float>& alpha) {
  if (alpha.rank() != 2) throw DimensionError("attention_csv: expected a matrix, got " + shape_str(alpha.shape()));
  const std::size_t rows = alpha.dim(0), cols = alpha.dim(1);
  const auto a = alpha.data();
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(a[i * cols + j]));
      if (j) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

Heatmap attention_heatmap(const Tensor<float>& alpha) {
  if (alpha.rank() != 2) throw DimensionError("attention_heatmap: expected a matrix");
  const auto a = alpha.data();
  Heatmap h;
  h.image = Image(alpha.dim(1), alpha.dim(0), 1);
  const auto [lo, hi] = std::minmax_element(a.begin(), a.end());
  h.min = *lo;
  h.max = *hi;
  const double range = h.max - h.min;
  if (range > 0) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      h.image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (a[i] - h.min) / range));
    }
  }
  return h;
}

std::vector<std::filesystem::path> dump_attention(const Detector<float>& model, const ModelInput<float>& input,
                                                  const std::filesystem::path& out_dir) {
  if (model.config().mode != FusionMode::kCft) {
    throw ContractError("dump-attn needs a cft-mode model, got " + to_string(model.config().mode));
  }
  NoGradGuard no_grad;
  ForwardOptions opts;
  opts.capture_attention = true;
  const auto out = model.forward(input.rgb, input.thermal, opts);
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t s = 0; s < out.fusion.size(); ++s) {
    for (const auto& m : out.fusion[s].attention) {
      char stem[64];
      std::snprintf(stem, sizeof(stem), "stage%zu_block%zu_head%zu", s, m.block, m.head);
      const std::filesystem::path base = out_dir / stem;
      const Heatmap h = attention_heatmap(m.alpha);
      const std::size_t n = m.alpha.dim(0);
      char sidecar[512];
      std::snprintf(sidecar, sizeof(sidecar),
                    "stage=%zu\nblock=%zu\nhead=%zu\nsize=%zu\nmin=%.9g\nmax=%.9g\nscale=%.9g\n"
                    "quadrant_boundary=%zu\nquadrants=rows/cols [0,%zu) rgb tokens, [%zu,%zu) thermal tokens\n",
                    s, m.block, m.head, n, h.min, h.max, h.max > h.min ? 255.0 / (h.max - h.min) : 0.0, n / 2,
                    n / 2, n / 2, n);
      write_text(base.string() + ".csv", attention_csv(m.alpha));
      write_pnm(base.string() + ".pgm", h.image);
      write_text(base.string() + ".txt", sidecar);
      written.push_back(base.string() + ".csv");
      written.push_back(base.string() + ".pgm");
      written.push_back(base.string() + ".txt");
    }
  }
  return written;
}

}  // namespace cmft
