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

#ifndef CMFT_TESTS_GRADCHECK_HPP_
#define CMFT_TESTS_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmft/ops.hpp"
#include "cmft/rng.hpp"
#include "cmft/tensor.hpp"

namespace cmft::testing {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdTolerance = 1e-4;

// |a - n| / max(|a|, |n|, floor). The floor keeps gradients that are zero
// up to rounding from dominating the ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_err = 0;
  std::size_t checked = 0;
  std::string worst;  // "leaf[i] element j"
};

// Central differences of a scalar function over every element of every
// leaf, compared with one reverse pass.
inline GradCheck gradcheck(std::vector<Tensor<double>> leaves, const std::function<Tensor<double>()>& f,
                           double h = kFdStep) {
  for (auto& l : leaves) l.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& l : leaves) {
    analytic.emplace_back(l.has_grad() ? std::vector<double>(l.grad().begin(), l.grad().end())
                                       : std::vector<double>(l.numel(), 0.0));
  }
  GradCheck r;
  NoGradGuard no_grad;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double up = f().item();
      data[j] = saved - h;
      const double down = f().item();
      data[j] = saved;
      const double err = relative_error(analytic[li][j], (up - down) / (2 * h));
      ++r.checked;
      if (err > r.max_rel_err) {
        r.max_rel_err = err;
        r.worst = "leaf[" + std::to_string(li) + "] element " + std::to_string(j);
      }
    }
  }
  return r;
}

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double lo = -1, double hi = 1, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Fixed random weights so a non-scalar output becomes a generic scalar.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.uniform(-1, 1);
  return sum(mul(y, Tensor<double>::from(y.shape(), std::move(w))));
}

}  // namespace cmft::testing

#endif  // CMFT_TESTS_GRADCHECK_HPP_
