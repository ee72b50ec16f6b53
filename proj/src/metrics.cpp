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

#include "cmft/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "cmft/tensor.hpp"

namespace cmft {

std::array<double, kNumIouThresholds> iou_thresholds() {
  std::array<double, kNumIouThresholds> t{};
  for (std::size_t i = 0; i < kNumIouThresholds; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

namespace {

std::vector<std::size_t> confidence_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].confidence > dets[b].confidence; });
  return order;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

MatchResult match(const std::vector<Detection>& detections, const std::vector<GroundTruth>& gts,
                  double iou_threshold) {
  MatchResult r;
  r.true_positive.assign(detections.size(), false);
  r.matched_gt.assign(detections.size(), -1);
  std::vector<bool> taken(gts.size(), false);
  for (std::size_t di : confidence_order(detections)) {
    const Detection& d = detections[di];
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].class_id != d.class_id) continue;
      const double v = iou(d.box, gts[g].box);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      taken[static_cast<std::size_t>(best)] = true;
      r.true_positive[di] = true;
      r.matched_gt[di] = best;
    }
  }
  r.false_negatives = static_cast<std::size_t>(std::count(taken.begin(), taken.end(), false));
  return r;
}

PrCurve pr_curve(const std::vector<bool>& flags, const std::vector<double>& confidences, std::size_t num_gt) {
  if (flags.size() != confidences.size()) throw DimensionError("pr_curve: length mismatch");
  PrCurve c;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) ++tp;
    c.recall.push_back(num_gt ? static_cast<double>(tp) / static_cast<double>(num_gt) : 0.0);
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    c.confidence.push_back(confidences[i]);
  }
  return c;
}

double average_precision(const std::vector<bool>& flags, std::size_t num_gt, ApInterpolation interp) {
  if (num_gt == 0 || flags.empty()) return 0.0;
  const PrCurve c = pr_curve(flags, std::vector<double>(flags.size(), 0.0), num_gt);
  std::vector<double> envelope = c.precision;
  for (std::size_t i = envelope.size() - 1; i-- > 0;) envelope[i] = std::max(envelope[i], envelope[i + 1]);

  if (interp == ApInterpolation::kAllPoints) {
    double ap = 0, prev_recall = 0;
    for (std::size_t i = 0; i < envelope.size(); ++i) {
      ap += (c.recall[i] - prev_recall) * envelope[i];
      prev_recall = c.recall[i];
    }
    return ap;
  }
  double total = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    const auto it = std::lower_bound(c.recall.begin(), c.recall.end(), r);
    if (it != c.recall.end()) total += envelope[static_cast<std::size_t>(it - c.recall.begin())];
  }
  return total / 101.0;
}

MapResult map_suite(const std::vector<std::vector<Detection>>& detections,
                    const std::vector<std::vector<GroundTruth>>& gts, std::size_t num_classes,
                    ApInterpolation interp) {
  if (detections.size() != gts.size()) throw DimensionError("map_suite: image count mismatch");
  MapResult r;
  r.num_classes = num_classes;
  r.per_class_ap.assign(num_classes, {});
  r.class_gt_count.assign(num_classes, 0);
  for (const auto& image : gts) {
    for (const auto& g : image) {
      if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= num_classes) {
        throw ContractError("map_suite: ground-truth class id out of range");
      }
      ++r.class_gt_count[static_cast<std::size_t>(g.class_id)];
    }
  }
  r.class_included.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) r.class_included[c] = r.class_gt_count[c] > 0;

  // Detections of every image in global (image, index) order.
  struct Entry {
    std::size_t image;
    std::size_t index;
  };
  std::vector<std::vector<Entry>> by_class(num_classes);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    for (std::size_t j = 0; j < detections[i].size(); ++j) {
      const int c = detections[i][j].class_id;
      if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
        throw ContractError("map_suite: detection class id out of range");
      }
      by_class[static_cast<std::size_t>(c)].push_back({i, j});
    }
  }
  for (auto& entries : by_class) {
    std::stable_sort(entries.begin(), entries.end(), [&](const Entry& a, const Entry& b) {
      return detections[a.image][a.index].confidence > detections[b.image][b.index].confidence;
    });
  }

  const auto thresholds = iou_thresholds();
  for (std::size_t t = 0; t < kNumIouThresholds; ++t) {
    std::vector<MatchResult> matches;
    matches.reserve(detections.size());
    for (std::size_t i = 0; i < detections.size(); ++i) matches.push_back(match(detections[i], gts[i], thresholds[t]));
    for (std::size_t c = 0; c < num_classes; ++c) {
      std::vector<bool> flags;
      flags.reserve(by_class[c].size());
      for (const Entry& e : by_class[c]) flags.push_back(matches[e.image].true_positive[e.index]);
      r.per_class_ap[c][t] = average_precision(flags, r.class_gt_count[c], interp);
    }
  }

  const std::size_t included = static_cast<std::size_t>(std::count(r.class_included.begin(), r.class_included.end(), true));
  if (included == 0) return r;
  double s50 = 0, s75 = 0, sall = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!r.class_included[c]) continue;
    s50 += r.per_class_ap[c][0];
    s75 += r.per_class_ap[c][5];
    double mean = 0;
    for (double v : r.per_class_ap[c]) mean += v;
    sall += mean / static_cast<double>(kNumIouThresholds);
  }
  const double n = static_cast<double>(included);
  r.map50 = 100.0 * s50 / n;
  r.map75 = 100.0 * s75 / n;
  r.map = 100.0 * sall / n;
  return r;
}

std::string format_map_report(const MapResult& result) {
  std::ostringstream os;
  os << "# evaluation report\n";
  os << "num_classes=" << result.num_classes << "\n";
  os << "class,gt_count,included";
  for (double t : iou_thresholds()) os << ",ap@" << fixed4(t).substr(0, 4);
  os << "\n";
  for (std::size_t c = 0; c < result.num_classes; ++c) {
    os << c << "," << result.class_gt_count[c] << "," << (result.class_included[c] ? 1 : 0);
    for (double v : result.per_class_ap[c]) os << "," << fixed4(v);
    os << "\n";
  }
  os << "mAP50=" << fixed4(result.map50) << "\n";
  os << "mAP75=" << fixed4(result.map75) << "\n";
  os << "mAP=" << fixed4(result.map) << "\n";
  return os.str();
}

}  // namespace cmft
