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


#ifndef CMFT_TESTS_METRIC_ORACLE_HPP_
#define CMFT_TESTS_METRIC_ORACLE_HPP_

#include <algorithm>
#include <vector>

#include "cmft/box.hpp"
#include "cmft/rng.hpp"

namespace cmft::testing {

inline double overlap(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  return iw * ih / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - iw * ih);
}

// Straightforward evaluator: per class and threshold, match every image
// greedily, pool the detections by confidence and integrate the envelope.
inline double brute_force_ap(const std::vector<std::vector<Detection>>& dets,
                             const std::vector<std::vector<GroundTruth>>& gts, int cls, double thr, std::size_t* n_gt) {
  struct Scored {
    double conf;
    bool tp;
  };
  std::vector<Scored> pool;
  std::size_t total_gt = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::vector<const GroundTruth*> g;
    for (const auto& x : gts[i]) {
      if (x.class_id == cls) g.push_back(&x);
    }
    total_gt += g.size();
    std::vector<const Detection*> d;
    for (const auto& x : dets[i]) {
      if (x.class_id == cls) d.push_back(&x);
    }
    std::sort(d.begin(), d.end(), [](auto* a, auto* b) { return a->confidence > b->confidence; });
    std::vector<bool> used(g.size(), false);
    for (const Detection* x : d) {
      int best = -1;
      double best_iou = thr;
      for (std::size_t k = 0; k < g.size(); ++k) {
        const double v = overlap(x->box, g[k]->box);
        if (!used[k] && v >= best_iou && (best < 0 || v > best_iou)) {
          best = static_cast<int>(k);
          best_iou = v;
        }
      }
      if (best >= 0) used[best] = true;
      pool.push_back({x->confidence, best >= 0});
    }
  }
  *n_gt = total_gt;
  if (total_gt == 0) return 0.0;
  std::sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) { return a.conf > b.conf; });
  // Each true positive adds 1/n_gt recall at the best precision reachable
  // from its rank onwards.
  double ap = 0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    if (!pool[k].tp) continue;
    ++tp;
    double best_p = 0;
    std::size_t tp_j = tp;
    for (std::size_t j = k; j < pool.size(); ++j) {
      if (j > k && pool[j].tp) ++tp_j;
      best_p = std::max(best_p, static_cast<double>(tp_j) / static_cast<double>(j + 1));
    }
    ap += best_p / static_cast<double>(total_gt);
  }
  return ap;
}

struct Fixture {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
};

inline Fixture random_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  for (int img = 0; img < 10; ++img) {
    std::vector<GroundTruth> g;
    std::vector<Detection> d;
    const int n = static_cast<int>(rng.next() % 5);
    for (int k = 0; k < n; ++k) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      const Box b{x, y, x + rng.uniform(4, 16), y + rng.uniform(4, 16)};
      const int c = static_cast<int>(rng.next() % 3);
      g.push_back({b, c});
      // Jittered copies with varying quality, some with the wrong class.
      const int copies = static_cast<int>(rng.next() % 3);
      for (int j = 0; j < copies; ++j) {
        const double s = rng.uniform(0, 4);
        Box p{b.x1 + rng.uniform(-s, s), b.y1 + rng.uniform(-s, s), b.x2 + rng.uniform(-s, s), b.y2 + rng.uniform(-s, s)};
        if (!p.valid()) p = b;
        d.push_back({p, rng.uniform() < 0.15 ? static_cast<int>(rng.next() % 3) : c, rng.uniform()});
      }
    }
    const int clutter = static_cast<int>(rng.next() % 3);
    for (int k = 0; k < clutter; ++k) {
      const double x = rng.uniform(0, 48), y = rng.uniform(0, 48);
      d.push_back({Box{x, y, x + rng.uniform(4, 16), y + rng.uniform(4, 16)}, static_cast<int>(rng.next() % 3),
                   rng.uniform()});
    }
    f.gts.push_back(std::move(g));
    f.dets.push_back(std::move(d));
  }
  return f;
}

}  // namespace cmft::testing

#endif  // CMFT_TESTS_METRIC_ORACLE_HPP_
