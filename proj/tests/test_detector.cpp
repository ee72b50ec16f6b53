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


#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "cmft/detector.hpp"
#include "cmft/rng.hpp"

using namespace cmft;

namespace {

DetectorConfig config_for(FusionMode mode) {
  DetectorConfig cfg;
  cfg.mode = mode;
  cfg.cft.blocks = 1;
  return cfg;
}

Tensor<float> random_image(Rng& rng, std::size_t channels, std::size_t n) {
  std::vector<float> v(channels * n * n);
  for (float& x : v) x = static_cast<float>(rng.uniform(0, 1));
  return Tensor<float>::from({channels, n, n}, std::move(v));
}

double box_iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
}

double sig(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

TEST_CASE("forward shapes for every mode") {
  Rng rng(1);
  const auto rgb = random_image(rng, 3, 64);
  const auto th = random_image(rng, 1, 64);
  for (FusionMode mode :
       {FusionMode::kCft, FusionMode::kTwoStream, FusionMode::kRgbOnly, FusionMode::kThermalOnly}) {
    CAPTURE(to_string(mode));
    const Detector<float> det(config_for(mode), 3);
    const auto out = det.forward(rgb, th);
    const std::size_t grids[] = {16, 8, 4};
    const std::size_t widths[] = {16, 32, 64};
    for (std::size_t s = 0; s < kNumScales; ++s) {
      CHECK(out.heads[s].shape() == Shape{8, grids[s], grids[s]});
      CHECK(out.pyramid.levels[s].shape() == Shape{widths[s], grids[s], grids[s]});
      CHECK(out.rgb_features[s].defined() == (mode != FusionMode::kThermalOnly));
      CHECK(out.thermal_features[s].defined() == (mode != FusionMode::kRgbOnly));
    }
    CHECK(out.fusion.size() == (mode == FusionMode::kCft ? 3u : 0u));
    CHECK(parse_fusion_mode(to_string(mode)) == mode);
  }
  CHECK_THROWS(parse_fusion_mode("early"));
}

TEST_CASE("fusion starts as the identity") {
  Rng rng(2);
  const auto rgb = random_image(rng, 3, 64);
  const auto th = random_image(rng, 1, 64);
  const Detector<float> cft(config_for(FusionMode::kCft), 11);
  const Detector<float> two(config_for(FusionMode::kTwoStream), 11);
  const auto a = cft.forward(rgb, th);
  const auto skipped = cft.forward(rgb, th, ForwardOptions{.zero_fusion = true});
  const auto b = two.forward(rgb, th);
  for (std::size_t s = 0; s < kNumScales; ++s) {
    for (std::size_t i = 0; i < a.heads[s].numel(); ++i) {
      CHECK(a.heads[s][i] == skipped.heads[s][i]);
      CHECK(a.heads[s][i] == b.heads[s][i]);
    }
  }
}

TEST_CASE("input validation") {
  DetectorConfig cfg = config_for(FusionMode::kTwoStream);
  cfg.image_size = 40;
  CHECK_THROWS_AS(Detector<float>(cfg, 0), DimensionError);
  const Detector<float> det(config_for(FusionMode::kTwoStream), 0);
  CHECK_THROWS_AS(det.forward(Tensor<float>::zeros({3, 32, 32}), Tensor<float>::zeros({1, 32, 32})), DimensionError);
  CHECK_THROWS_AS(det.forward(Tensor<float>::zeros({3, 64, 64}), Tensor<float>()), DimensionError);
  const Detector<float> mono(config_for(FusionMode::kRgbOnly), 0);
  CHECK_NOTHROW(mono.forward(Tensor<float>::zeros({3, 64, 64}), Tensor<float>()));
  DetectorConfig heads = config_for(FusionMode::kCft);
  heads.cft.heads = 3;
  CHECK_THROWS_AS(Detector<float>(heads, 0), ContractError);
}

TEST_CASE("decode_boxes worked examples") {
  // Grid 2, K = 2, stride 8. Cell 1 (gx = 1, gy = 0) holds the object.
  std::vector<float> head(7 * 4, 0.0f);
  auto set = [&](std::size_t ch, std::size_t cell, float v) { head[ch * 4 + cell] = v; };
  for (std::size_t cell = 0; cell < 4; ++cell) set(4, cell, -20.0f);
  set(4, 1, 3.0f);
  set(5, 1, -30.0f);
  set(6, 1, 30.0f);
  const auto dets = decode_boxes(head, 2, 2, 8, 0.25, 64);
  REQUIRE(dets.size() == 1);
  CHECK(dets[0].class_id == 1);
  CHECK(dets[0].confidence == doctest::Approx(0.9526).epsilon(1e-4));
  CHECK(dets[0].confidence == doctest::Approx(sig(3.0)).epsilon(1e-12));
  // Centre (12, 4), side 8, so the box spans x 8..16 and y 0..8.
  CHECK(dets[0].box == Box{8, 0, 16, 8});

  // Offsets and log sizes, clipped at the image border.
  set(0, 1, 1.0f);
  set(1, 1, -1.0f);
  set(2, 1, std::log(2.0f));
  set(3, 1, 0.0f);
  set(5, 1, 0.0f);
  set(6, 1, 0.0f);
  const auto d2 = decode_boxes(head, 2, 2, 8, 0.0, 16);
  REQUIRE(d2.size() >= 1);
  const auto& best = *std::max_element(d2.begin(), d2.end(),
                                       [](const Detection& a, const Detection& b) { return a.confidence < b.confidence; });
  const double cx = (1 + sig(1.0)) * 8, cy = sig(-1.0) * 8;
  CHECK(best.confidence == doctest::Approx(sig(3.0) * 0.5).epsilon(1e-7));
  CHECK(best.class_id == 0);  // ties go to the first class
  CHECK(best.box.x1 == doctest::Approx(cx - 8).epsilon(1e-6));
  CHECK(best.box.x2 == doctest::Approx(16.0));
  CHECK(best.box.y1 == doctest::Approx(0.0));
  CHECK(best.box.y2 == doctest::Approx(cy + 4).epsilon(1e-6));

  CHECK_THROWS_AS(decode_boxes(std::vector<float>(10), 2, 2, 8, 0.25, 64), DimensionError);
  CHECK(decode_boxes(Tensor<float>::from({7, 2, 2}, head), 8, 0.25, 64).size() == 1);
}

TEST_CASE("nms matches a brute-force reference") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    const int n = 1 + static_cast<int>(rng.next() % 25);
    for (int i = 0; i < n; ++i) {
      const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
      const double w = rng.uniform(4, 20), h = rng.uniform(4, 20);
      dets.push_back({Box{x, y, x + w, y + h}, static_cast<int>(rng.next() % 3), rng.uniform(0, 1)});
    }
    // Reference: repeatedly take the best remaining and strike same-class overlaps.
    std::vector<bool> alive(dets.size(), true);
    std::vector<Detection> ref;
    while (true) {
      int best = -1;
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (alive[i] && (best < 0 || dets[i].confidence > dets[best].confidence)) best = static_cast<int>(i);
      }
      if (best < 0) break;
      ref.push_back(dets[best]);
      alive[best] = false;
      for (std::size_t i = 0; i < dets.size(); ++i) {
        if (alive[i] && dets[i].class_id == dets[best].class_id && box_iou(dets[i].box, dets[best].box) >= 0.45) {
          alive[i] = false;
        }
      }
    }
    const auto got = nms(dets, 0.45);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].box == ref[i].box);
      CHECK(got[i].class_id == ref[i].class_id);
    }
  }
}

TEST_CASE("nms keeps overlapping boxes of different classes") {
  const std::vector<Detection> dets = {{Box{0, 0, 10, 10}, 0, 0.9}, {Box{0, 0, 10, 10}, 1, 0.8},
                                       {Box{1, 0, 11, 10}, 0, 0.7}};
  const auto kept = nms(dets, 0.45);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].class_id == 0);
  CHECK(kept[1].class_id == 1);
}
