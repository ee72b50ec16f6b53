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

#ifndef CMFT_METRICS_HPP_
#define CMFT_METRICS_HPP_

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "cmft/box.hpp"

namespace cmft {

// COCO-style IoU thresholds 0.50, 0.55, ..., 0.95.
inline constexpr std::size_t kNumIouThresholds = 10;
std::array<double, kNumIouThresholds> iou_thresholds();

struct MatchResult {
  std::vector<bool> true_positive;  // per detection, input order
  std::vector<int> matched_gt;      // per detection, -1 when unmatched
  std::size_t false_negatives = 0;  // ground truths left unmatched
};

// Greedy matching for one image. Detections are visited by descending
// confidence (ties by input index); each takes the unmatched ground truth of
// its class with the highest IoU >= threshold (ties by lower GT index).
MatchResult match(const std::vector<Detection>& detections, const std::vector<GroundTruth>& gts,
                  double iou_threshold);

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<double> confidence;
};

// One point per detection prefix. `flags` and `confidences` must already be
// sorted by descending confidence.
PrCurve pr_curve(const std::vector<bool>& flags, const std::vector<double>& confidences, std::size_t num_gt);

enum class ApInterpolation {
  // Exact area under the monotone precision envelope.
  kAllPoints,
  // Mean envelope precision sampled at recall 0, 0.01, ..., 1.
  kCoco101,
};

// AP of detections sorted by descending confidence. 0 when num_gt == 0.
double average_precision(const std::vector<bool>& flags, std::size_t num_gt,
                         ApInterpolation interp = ApInterpolation::kAllPoints);

struct MapResult {
  std::size_t num_classes = 0;
  // per_class_ap[c][t]: AP of class c at iou_thresholds()[t], in [0, 1].
  std::vector<std::array<double, kNumIouThresholds>> per_class_ap;
  // Classes without any ground truth are excluded from the means.
  std::vector<bool> class_included;
  std::vector<std::size_t> class_gt_count;
  // Summary values in percent.
  double map50 = 0;
  double map75 = 0;
  double map = 0;
};

MapResult map_suite(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruth>>& gts, std::size_t num_classes,
                    ApInterpolation interp = ApInterpolation::kAllPoints);

// Fixed-order text report with 4 decimal places.
std::string format_map_report(const MapResult& result);

}  // namespace cmft

#endif  // CMFT_METRICS_HPP_
