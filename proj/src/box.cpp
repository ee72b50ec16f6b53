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

#include "cmft/box.hpp"

#include "cmft/tensor.hpp"

namespace cmft {

namespace {

void require_positive_area(const Box& b, const char* fn) {
  if (!(b.valid())) throw ContractError(std::string(fn) + ": degenerate box");
}

double intersection(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require_positive_area(a, "iou");
  require_positive_area(b, "iou");
  const double inter = intersection(a, b);
  return inter / (a.area() + b.area() - inter);
}

double giou(const Box& a, const Box& b) {
  require_positive_area(a, "giou");
  require_positive_area(b, "giou");
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                      (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace cmft
