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
#include "cmft/metrics.hpp"
#include "cmft/rng.hpp"
#include "cmft/tensor.hpp"
#include "metric_oracle.hpp"

using namespace cmft;
using namespace cmft::testing;

TEST_CASE("average precision fixture") {
  // TP, FP, TP over two ground truths: 1/2 * 1 + 1/2 * 2/3.
  CHECK(std::abs(average_precision({true, false, true}, 2) - 5.0 / 6.0) < 1e-9);
  CHECK(average_precision({true, true}, 2) == 1.0);
  CHECK(average_precision({false, false}, 2) == 0.0);
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({true}, 0) == 0.0);
  CHECK(average_precision({true, true}, 4) == doctest::Approx(0.5).epsilon(1e-15));
  // Sampled variant: envelope 1 up to recall 0.5, 2/3 beyond (51 and 50 samples).
  CHECK(average_precision({true, false, true}, 2, ApInterpolation::kCoco101) ==
        doctest::Approx((51 * 1.0 + 50 * 2.0 / 3.0) / 101.0).epsilon(1e-12));

  const auto c = pr_curve({true, false, true}, {0.9, 0.8, 0.7}, 2);
  CHECK(c.recall == std::vector<double>{0.5, 0.5, 1.0});
  CHECK(c.precision[1] == 0.5);
  CHECK_THROWS_AS(pr_curve({true}, {}, 1), DimensionError);
}

TEST_CASE("IoU thresholds") {
  const auto t = iou_thresholds();
  CHECK(t[0] == 0.5);
  CHECK(t[5] == 0.75);
  CHECK(t[9] == 0.95);
}

TEST_CASE("mAP suite equals a brute-force evaluator") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const Fixture f = random_fixture(seed);
    const MapResult r = map_suite(f.dets, f.gts, 3);
    const auto thresholds = iou_thresholds();
    double s50 = 0, s75 = 0, sall = 0;
    int included = 0;
    for (int c = 0; c < 3; ++c) {
      std::size_t n_gt = 0;
      double mean = 0;
      for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
        const double ap = brute_force_ap(f.dets, f.gts, c, thresholds[t], &n_gt);
        CHECK(std::abs(r.per_class_ap[c][t] - ap) < 1e-9);
        mean += ap / kNumIouThresholds;
      }
      CHECK(r.class_gt_count[c] == n_gt);
      if (n_gt == 0) continue;
      ++included;
      s50 += 100 * brute_force_ap(f.dets, f.gts, c, 0.5, &n_gt);
      s75 += 100 * brute_force_ap(f.dets, f.gts, c, 0.75, &n_gt);
      sall += 100 * mean;
    }
    REQUIRE(included > 0);
    CHECK(std::abs(r.map50 - s50 / included) < 1e-9);
    CHECK(std::abs(r.map75 - s75 / included) < 1e-9);
    CHECK(std::abs(r.map - sall / included) < 1e-9);
  }
}

TEST_CASE("perfect and empty detectors") {
  const Fixture f = random_fixture(9);
  std::vector<std::vector<Detection>> perfect;
  for (const auto& image : f.gts) {
    std::vector<Detection> d;
    for (const auto& g : image) d.push_back({g.box, g.class_id, 1.0});
    perfect.push_back(d);
  }
  const MapResult p = map_suite(perfect, f.gts, 3);
  CHECK(p.map50 == 100.0);
  CHECK(p.map75 == 100.0);
  CHECK(p.map == doctest::Approx(100.0).epsilon(1e-12));
  const MapResult z = map_suite(std::vector<std::vector<Detection>>(f.gts.size()), f.gts, 3);
  CHECK(z.map50 == 0.0);
  CHECK(z.map75 == 0.0);
  CHECK(z.map == 0.0);
}

TEST_CASE("classes without ground truth are excluded from the means") {
  const std::vector<std::vector<GroundTruth>> gts = {{{Box{0, 0, 10, 10}, 0}}};
  const std::vector<std::vector<Detection>> dets = {{{Box{0, 0, 10, 10}, 0, 0.9}, {Box{20, 20, 30, 30}, 2, 0.8}}};
  const MapResult r = map_suite(dets, gts, 3);
  CHECK(r.class_included == std::vector<bool>{true, false, false});
  CHECK(r.map50 == 100.0);
  CHECK_THROWS_AS(map_suite(dets, {}, 3), DimensionError);
  CHECK_THROWS_AS(map_suite({{{Box{0, 0, 1, 1}, 5, 0.5}}}, gts, 3), ContractError);
}

TEST_CASE("detection order within an image does not matter") {
  Fixture f = random_fixture(11);
  const MapResult a = map_suite(f.dets, f.gts, 3);
  Rng rng(5);
  for (auto& image : f.dets) {
    for (std::size_t i = image.size(); i > 1; --i) std::swap(image[i - 1], image[rng.next() % i]);
  }
  const MapResult b = map_suite(f.dets, f.gts, 3);
  CHECK(a.per_class_ap == b.per_class_ap);
  CHECK(a.map == b.map);
}

TEST_CASE("true positives at a stricter threshold need not be a subset") {
  // A (0.9) overlaps the ground truth at IoU 0.6, B (0.8) at IoU 0.8.
  const std::vector<GroundTruth> gts = {{Box{0, 0, 10, 10}, 0}};
  const std::vector<Detection> dets = {{Box{0, 0, 10, 6}, 0, 0.9}, {Box{0, 0, 10, 8}, 0, 0.8}};
  const auto loose = match(dets, gts, 0.5);
  const auto strict = match(dets, gts, 0.7);
  CHECK(loose.true_positive == std::vector<bool>{true, false});
  CHECK(strict.true_positive == std::vector<bool>{false, true});
  CHECK(strict.matched_gt == std::vector<int>{-1, 0});
  CHECK(loose.false_negatives == 0);
  CHECK(match({}, gts, 0.5).false_negatives == 1);
}

TEST_CASE("greedy matching prefers the highest IoU and respects classes") {
  const std::vector<GroundTruth> gts = {{Box{0, 0, 10, 10}, 0}, {Box{2, 0, 12, 10}, 0}, {Box{0, 0, 10, 10}, 1}};
  const auto m = match({{Box{2, 0, 12, 10}, 0, 0.5}, {Box{0, 0, 10, 10}, 1, 0.4}}, gts, 0.5);
  CHECK(m.matched_gt == std::vector<int>{1, 2});
  CHECK(m.false_negatives == 1);
}

TEST_CASE("report format") {
  const std::vector<std::vector<GroundTruth>> gts = {{{Box{0, 0, 10, 10}, 0}}};
  const MapResult r = map_suite({{{Box{0, 0, 10, 10}, 0, 0.9}}}, gts, 2);
  const std::string text = format_map_report(r);
  CHECK(text ==
        "# evaluation report\n"
        "num_classes=2\n"
        "class,gt_count,included,ap@0.50,ap@0.55,ap@0.60,ap@0.65,ap@0.70,ap@0.75,ap@0.80,ap@0.85,ap@0.90,ap@0.95\n"
        "0,1,1,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000,1.0000\n"
        "1,0,0,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000,0.0000\n"
        "mAP50=100.0000\nmAP75=100.0000\nmAP=100.0000\n");
}
