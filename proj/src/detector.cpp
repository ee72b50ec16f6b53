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

#include "cmft/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmft/ops.hpp"

namespace cmft {

namespace {
// Objectness bias prior: sigmoid(-4) ~ 0.018, so the many empty cells start
// near their target.
constexpr float kObjectnessPrior = -4.0f;
}  // namespace

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kCft:
      return "cft";
    case FusionMode::kTwoStream:
      return "two_stream";
    case FusionMode::kRgbOnly:
      return "rgb_only";
    case FusionMode::kThermalOnly:
      return "thermal_only";
  }
  return "unknown";
}

FusionMode parse_fusion_mode(std::string_view text) {
  if (text == "cft") return FusionMode::kCft;
  if (text == "two_stream") return FusionMode::kTwoStream;
  if (text == "rgb_only") return FusionMode::kRgbOnly;
  if (text == "thermal_only") return FusionMode::kThermalOnly;
  throw std::invalid_argument("unknown mode '" + std::string(text) +
                              "' (expected cft, two_stream, rgb_only or thermal_only)");
}

void DetectorConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) {
    throw DimensionError("image_size must be a positive multiple of 16, got " + std::to_string(image_size));
  }
  if (num_classes < 1) throw ContractError("num_classes must be >= 1");
  for (std::size_t w : widths) {
    if (w < 1) throw ContractError("channel widths must be >= 1");
  }
  if (mode == FusionMode::kCft) {
    for (std::size_t s = 0; s < kNumScales; ++s) stage_cft(s).validate();
  }
}

std::array<StageSpec, kNumScales> DetectorConfig::stages() const {
  std::array<StageSpec, kNumScales> out;
  for (std::size_t s = 0; s < kNumScales; ++s) out[s] = StageSpec{widths[s], widths[s + 1], 2, 3};
  return out;
}

CftConfig DetectorConfig::stage_cft(std::size_t stage) const {
  CftConfig c = cft;
  c.channels = widths[stage + 1];
  c.pooled_size = std::min(cft.pooled_size, grid_size(stage));
  return c;
}

template <class S>
typename Detector<S>::Conv Detector<S>::make_conv(const std::string& id, std::size_t cin, std::size_t cout,
                                                  std::size_t k, std::size_t stride) {
  Conv c;
  c.weight = store_.create(id + ".w", {cout, cin, k, k}, Init::kXavierUniform, cin * k * k, cout * k * k);
  c.bias = store_.create(id + ".b", {cout}, Init::kZeros);
  c.stride = stride;
  c.padding = k / 2;
  return c;
}

template <class S>
typename Detector<S>::Branch Detector<S>::make_branch(const std::string& prefix, std::size_t in_channels) {
  Branch b;
  b.stem = make_conv(prefix + ".stem", in_channels, config_.widths[0], 3, 2);
  const auto stages = config_.stages();
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const std::string p = prefix + ".stage" + std::to_string(s + 1);
    b.down[s] = make_conv(p + ".down", stages[s].in_channels, stages[s].out_channels, stages[s].kernel,
                          stages[s].stride);
    b.refine[s] = make_conv(p + ".refine", stages[s].out_channels, stages[s].out_channels, 3, 1);
  }
  return b;
}

template <class S>
Detector<S>::Detector(DetectorConfig config, std::uint64_t seed) : config_(std::move(config)), store_(seed) {
  config_.validate();
  if (has_rgb()) rgb_ = make_branch("rgb", 3);
  if (has_thermal()) thermal_ = make_branch("thermal", 1);
  if (config_.mode == FusionMode::kCft) {
    for (std::size_t s = 0; s < kNumScales; ++s) {
      fusion_.push_back(make_cft_params(store_, "cft" + std::to_string(s + 1) + ".", config_.stage_cft(s)));
    }
  }
  const std::size_t branches = (has_rgb() ? 1 : 0) + (has_thermal() ? 1 : 0);
  const std::size_t outputs = kHeadBoxChannels + config_.num_classes;
  for (std::size_t s = 0; s < kNumScales; ++s) {
    const std::size_t w = config_.widths[s + 1];
    const std::string n = std::to_string(s + 1);
    merge_[s] = make_conv("merge" + n, branches * w, w, 1, 1);
    head_hidden_[s] = make_conv("head" + n + ".hidden", w, w, 3, 1);
    head_out_[s] = make_conv("head" + n + ".out", w, outputs, 1, 1);
    head_out_[s].bias.mutable_data()[4] = static_cast<S>(kObjectnessPrior);
  }
}

template <class S>
bool Detector<S>::has_rgb() const {
  return config_.mode != FusionMode::kThermalOnly;
}

template <class S>
bool Detector<S>::has_thermal() const {
  return config_.mode != FusionMode::kRgbOnly;
}

template <class S>
Tensor<S> Detector<S>::apply(const Conv& conv, const Tensor<S>& x) {
  return conv2d(x, conv.weight, conv.bias, conv.stride, conv.padding);
}

template <class S>
Tensor<S> Detector<S>::apply_act(const Conv& conv, const Tensor<S>& x) {
  return silu(apply(conv, x));
}

template <class S>
DetectorOutput<S> Detector<S>::forward(const Tensor<S>& rgb, const Tensor<S>& thermal,
                                       const ForwardOptions& options) const {
  const std::size_t n = config_.image_size;
  auto check = [n](const Tensor<S>& t, std::size_t channels, const char* what) {
    if (!t.defined() || t.shape() != Shape{channels, n, n}) {
      throw DimensionError(std::string(what) + " input must be " +
                           shape_str(Shape{channels, n, n}) +
                           (t.defined() ? ", got " + shape_str(t.shape()) : ", got none"));
    }
  };
  if (has_rgb()) check(rgb, 3, "rgb");
  if (has_thermal()) check(thermal, 1, "thermal");

  DetectorOutput<S> out;
  Tensor<S> fr, ft;
  if (has_rgb()) fr = apply_act(rgb_.stem, rgb);
  if (has_thermal()) ft = apply_act(thermal_.stem, thermal);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    if (has_rgb()) fr = apply_act(rgb_.refine[s], apply_act(rgb_.down[s], fr));
    if (has_thermal()) ft = apply_act(thermal_.refine[s], apply_act(thermal_.down[s], ft));
    if (config_.mode == FusionMode::kCft && !options.zero_fusion && !config_.zero_fusion) {
      auto fused = fuse(fr, ft, config_.stage_cft(s), fusion_[s], options.capture_attention);
      fr = add(fr, fused.delta_r);
      ft = add(ft, fused.delta_t);
      out.fusion.push_back(std::move(fused));
    }
    out.rgb_features[s] = fr;
    out.thermal_features[s] = ft;
    Tensor<S> merged;
    if (has_rgb() && has_thermal()) {
      merged = concat0<S>({fr, ft});
    } else {
      merged = has_rgb() ? fr : ft;
    }
    out.pyramid.levels[s] = apply_act(merge_[s], merged);
    out.heads[s] = apply(head_out_[s], apply_act(head_hidden_[s], out.pyramid.levels[s]));
  }
  return out;
}

template class Detector<float>;
template class Detector<double>;

namespace {

double sigmoid_d(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<Detection> decode_boxes(std::span<const float> head, std::size_t grid, std::size_t num_classes,
                                    std::size_t stride, double score_threshold, double image_size) {
  const std::size_t channels = kHeadBoxChannels + num_classes;
  if (head.size() != channels * grid * grid) {
    throw DimensionError("decode_boxes: head map size does not match grid and class count");
  }
  const std::size_t cells = grid * grid;
  auto at = [&](std::size_t ch, std::size_t cell) { return static_cast<double>(head[ch * cells + cell]); };
  std::vector<Detection> dets;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double obj = sigmoid_d(at(4, cell));
    if (!(obj >= score_threshold) || obj == 0.0) continue;
    double mx = at(kHeadBoxChannels, cell);
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c) {
      if (at(kHeadBoxChannels + c, cell) > mx) {
        mx = at(kHeadBoxChannels + c, cell);
        best = c;
      }
    }
    double denom = 0;
    for (std::size_t c = 0; c < num_classes; ++c) denom += std::exp(at(kHeadBoxChannels + c, cell) - mx);
    const double conf = obj / denom;
    if (!std::isfinite(conf) || conf < score_threshold) continue;

    const double gx = static_cast<double>(cell % grid);
    const double gy = static_cast<double>(cell / grid);
    const double st = static_cast<double>(stride);
    const double cx = (gx + sigmoid_d(at(0, cell))) * st;
    const double cy = (gy + sigmoid_d(at(1, cell))) * st;
    const double w = std::exp(std::clamp(at(2, cell), -10.0, 10.0)) * st;
    const double h = std::exp(std::clamp(at(3, cell), -10.0, 10.0)) * st;
    Box b{std::clamp(cx - 0.5 * w, 0.0, image_size), std::clamp(cy - 0.5 * h, 0.0, image_size),
          std::clamp(cx + 0.5 * w, 0.0, image_size), std::clamp(cy + 0.5 * h, 0.0, image_size)};
    if (!b.valid()) continue;
    dets.push_back(Detection{b, static_cast<int>(best), conf});
  }
  return dets;
}

template <class S>
std::vector<Detection> decode_boxes(const Tensor<S>& head, std::size_t stride, double score_threshold,
                                    double image_size) {
  if (head.rank() != 3 || head.dim(1) != head.dim(2) || head.dim(0) <= kHeadBoxChannels) {
    throw DimensionError("decode_boxes: expected [(5+K) x S x S], got " + shape_str(head.shape()));
  }
  std::vector<float> values(head.data().begin(), head.data().end());
  return decode_boxes(values, head.dim(1), head.dim(0) - kHeadBoxChannels, stride, score_threshold,
                      image_size);
}

template std::vector<Detection> decode_boxes(const Tensor<float>&, std::size_t, double, double);
template std::vector<Detection> decode_boxes(const Tensor<double>&, std::size_t, double, double);

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].confidence > detections[b].confidence;
  });
  std::vector<Detection> kept;
  for (std::size_t i : order) {
    const Detection& d = detections[i];
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace cmft
