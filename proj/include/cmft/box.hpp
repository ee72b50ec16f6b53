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

#ifndef CMFT_BOX_HPP_
#define CMFT_BOX_HPP_

#include <algorithm>

namespace cmft {

// Axis-aligned box in pixels, corners (x1, y1) top-left and (x2, y2)
// bottom-right.
struct Box {
  double x1 = 0;
  double y1 = 0;
  double x2 = 0;
  double y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  Box box;
  int class_id = 0;
  double confidence = 0;
};

struct GroundTruth {
  Box box;
  int class_id = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

// Intersection over union in [0, 1]. Throws ContractError on zero-area input.
double iou(const Box& a, const Box& b);

// IoU minus |hull \ (a u b)| / |hull|, in (-1, 1]. Throws ContractError on
// zero-area input.
double giou(const Box& a, const Box& b);

}  // namespace cmft

#endif  // CMFT_BOX_HPP_
