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

#ifndef CMFT_DETECTOR_HPP_
#define CMFT_DETECTOR_HPP_

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmft/box.hpp"
#include "cmft/cft.hpp"
#include "cmft/params.hpp"
#include "cmft/tensor.hpp"

namespace cmft {

enum class FusionMode {
  kCft,          // two streams + fusion transformer after every stage
  kTwoStream,    // two streams, merged only at the pyramid inputs
  kRgbOnly,
  kThermalOnly,
};

std::string to_string(FusionMode mode);
// Accepts "cft", "two_stream", "rgb_only", "thermal_only".
FusionMode parse_fusion_mode(std::string_view text);

inline constexpr std::size_t kNumScales = 3;
inline constexpr std::array<std::size_t, kNumScales> kScaleStrides = {4, 8, 16};
// Per-cell head layout: tx, ty, tw, th, objectness, class logits...
inline constexpr std::size_t kHeadBoxChannels = 5;

struct StageSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 2;
  std::size_t kernel = 3;
};

struct DetectorConfig {
  FusionMode mode = FusionMode::kCft;
  std::size_t image_size = 64;
  std::size_t num_classes = 3;
  // Stem width followed by the three stage widths.
  std::array<std::size_t, 4> widths = {8, 16, 32, 64};
  // Template for the three fusion modules. `channels` is replaced by the
  // stage width and `pooled_size` is capped at the stage extent.
  CftConfig cft;
  // Build the fusion modules but skip their deltas (residual-identity ablation).
  bool zero_fusion = false;

  void validate() const;
  std::array<StageSpec, kNumScales> stages() const;
  CftConfig stage_cft(std::size_t stage) const;
  std::size_t grid_size(std::size_t scale) const { return image_size / kScaleStrides[scale]; }
};

template <class S>
struct PyramidFeatures {
  std::array<Tensor<S>, kNumScales> levels;  // P1..P3 at strides 4, 8, 16
};

template <class S>
struct DetectorOutput {
  PyramidFeatures<S> pyramid;
  // Raw head maps [(5 + num_classes) x S x S] per scale.
  std::array<Tensor<S>, kNumScales> heads;
  // Branch features after fusion, per stage (undefined for an absent branch).
  std::array<Tensor<S>, kNumScales> rgb_features;
  std::array<Tensor<S>, kNumScales> thermal_features;
  // Fusion outputs per stage, CFT mode only.
  std::vector<CftOutput<S>> fusion;
};

struct ForwardOptions {
  // Skip adding the fusion deltas (the residual identity).
  bool zero_fusion = false;
  bool capture_attention = false;
};

// Toy two-stream backbone with a fusion module after each of three stages,
// a concat + 1x1 merge into the pyramid inputs and a per-scale grid head.
template <class S>
class Detector {
 public:
  Detector(DetectorConfig config, std::uint64_t seed);

  // rgb: [3 x H x W], thermal: [1 x H x W], H = W = image_size. The branch
  // not used by a mono-modality mode may be undefined.
  DetectorOutput<S> forward(const Tensor<S>& rgb, const Tensor<S>& thermal,
                            const ForwardOptions& options = {}) const;

  const DetectorConfig& config() const { return config_; }
  ParameterStore<S>& params() { return store_; }
  const ParameterStore<S>& params() const { return store_; }
  const CftParams<S>& fusion_params(std::size_t stage) const { return fusion_.at(stage); }

 private:
  struct Conv {
    Tensor<S> weight;
    Tensor<S> bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
  };

  struct Branch {
    Conv stem;
    std::array<Conv, kNumScales> down;
    std::array<Conv, kNumScales> refine;
  };

  Conv make_conv(const std::string& id, std::size_t cin, std::size_t cout, std::size_t k,
                 std::size_t stride);
  Branch make_branch(const std::string& prefix, std::size_t in_channels);
  static Tensor<S> apply(const Conv& conv, const Tensor<S>& x);
  static Tensor<S> apply_act(const Conv& conv, const Tensor<S>& x);

  bool has_rgb() const;
  bool has_thermal() const;

  DetectorConfig config_;
  ParameterStore<S> store_;
  Branch rgb_;
  Branch thermal_;
  std::vector<CftParams<S>> fusion_;
  std::array<Conv, kNumScales> merge_;
  std::array<Conv, kNumScales> head_hidden_;
  std::array<Conv, kNumScales> head_out_;
};

// Head decode for one scale. `head` is [(5 + K) x S x S] in channel-major
// order. center = (cell + sigmoid(t_xy)) * stride, size = exp(t_wh) * stride
// (t_wh clamped to [-10, 10]), confidence = sigmoid(obj) * max softmax(cls).
// Detections below `score_threshold` are dropped; boxes are clipped to the
// image and dropped if clipping leaves no area.
std::vector<Detection> decode_boxes(std::span<const float> head, std::size_t grid, std::size_t num_classes,
                                    std::size_t stride, double score_threshold, double image_size);

template <class S>
std::vector<Detection> decode_boxes(const Tensor<S>& head, std::size_t stride, double score_threshold,
                                    double image_size);

// Greedy per-class non-maximum suppression in descending confidence order
// (ties keep input order). A detection is dropped when its IoU with an
// already kept detection of the same class is >= iou_threshold.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

inline constexpr double kDefaultNmsIou = 0.45;
inline constexpr double kDefaultScoreThreshold = 0.25;

extern template class Detector<float>;
extern template class Detector<double>;

}  // namespace cmft

#endif  // CMFT_DETECTOR_HPP_
