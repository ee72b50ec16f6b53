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

#ifndef CMFT_LOSSES_HPP_
#define CMFT_LOSSES_HPP_

#include <array>
#include <cstdint>
#include <vector>

#include "cmft/box.hpp"
#include "cmft/detector.hpp"
#include "cmft/tensor.hpp"

namespace cmft {

// Responsible cells of one scale. Cells are indexed row-major (gy * S + gx).
struct ScaleTargets {
  std::size_t grid = 0;
  std::size_t stride = 0;
  std::vector<std::uint8_t> obj_mask;  // S*S, complement is the noobj mask
  std::vector<std::size_t> cells;      // positive cells in ascending order
  std::vector<int> class_ids;          // parallel to cells
  std::vector<Box> boxes;              // parallel to cells
};

struct TargetAssignment {
  std::array<ScaleTargets, kNumScales> scales;
};

// Every ground truth is assigned, at every scale, to the cell containing its
// center. When two objects share a cell, the earlier one in `gts` keeps it.
// Throws ContractError for boxes that are degenerate or leave the image.
TargetAssignment assign_targets(const std::vector<GroundTruth>& gts,
                                const std::array<std::size_t, kNumScales>& grid_sizes, double image_size);

// Cross-entropy with one-hot targets: sum over rows with obj_mask set of
// -log(clamp(probs[row][targets[row]], eps, 1 - eps)). probs: [n x K].
inline constexpr double kProbEpsilon = 1e-7;

template <class S>
Tensor<S> classification_loss(const Tensor<S>& probs, const std::vector<int>& targets,
                              const std::vector<std::uint8_t>& obj_mask);

// conf: predicted confidences (any shape); obj_mask same length. Returns
// {sum over obj cells of (1 - c)^2, sum over noobj cells of c^2}.
template <class S>
std::array<Tensor<S>, 2> confidence_losses(const Tensor<S>& conf, const std::vector<std::uint8_t>& obj_mask);

// Sum over rows of 1 - GIoU(pred[row], targets[row]); pred is [n x 4]
// holding x1, y1, x2, y2 with positive extents.
template <class S>
Tensor<S> giou_loss(const Tensor<S>& pred, const std::vector<Box>& targets);

// Differentiable head decode of selected cells: raw is [n x 4] (tx, ty, tw,
// th) and the result [n x 4] corner boxes in pixels.
template <class S>
Tensor<S> decode_box_tensor(const Tensor<S>& raw, const std::vector<std::size_t>& cells, std::size_t grid,
                            std::size_t stride);

struct LossGains {
  double box = 1.0;
  double cls = 1.0;
  double obj = 1.0;
  double noobj = 1.0;
};

template <class S>
struct LossBreakdown {
  Tensor<S> box;
  Tensor<S> cls;
  Tensor<S> obj;
  Tensor<S> noobj;
  Tensor<S> total;  // box + cls + obj + noobj
};

// Composite objective over all scales; components already include gains.
template <class S>
LossBreakdown<S> total_loss(const std::array<Tensor<S>, kNumScales>& heads, const TargetAssignment& targets,
                            const LossGains& gains = {});

}  // namespace cmft

#endif  // CMFT_LOSSES_HPP_
