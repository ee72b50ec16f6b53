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

#ifndef CMFT_OPS_HPP_
#define CMFT_OPS_HPP_

#include <cstddef>
#include <optional>
#include <vector>

#include "cmft/tensor.hpp"

// Differentiable operation set. Every op validates shapes (DimensionError),
// checks its output for NaN/Inf (NumericError) and registers a gradient rule
// when any input requires grad and recording is enabled.
//
// Broadcasting is limited to scalar-with-tensor (scale, add_scalar) and
// bias-row-with-matrix (add_row_bias).
namespace cmft {

// [m x k] . [k x n] -> [m x n]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

// 2-D transpose.
template <class S>
Tensor<S> transpose(const Tensor<S>& a);

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
// Elementwise product.
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor);
template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S value);
template <class S>
Tensor<S> square(const Tensor<S>& a);

// x: [m x n], bias: [n]; adds bias to every row.
template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& bias);

// Sum / mean of all elements as a rank-0 tensor.
template <class S>
Tensor<S> sum(const Tensor<S>& a);
template <class S>
Tensor<S> mean(const Tensor<S>& a);

// Numerically stable softmax along `axis` (max subtracted per slice).
template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis);

// Tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <class S>
Tensor<S> gelu(const Tensor<S>& x);
template <class S>
Tensor<S> silu(const Tensor<S>& x);
template <class S>
Tensor<S> sigmoid(const Tensor<S>& x);
template <class S>
Tensor<S> exp(const Tensor<S>& x);
// Natural log; inputs must be positive.
template <class S>
Tensor<S> log(const Tensor<S>& x);
// Elementwise clamp; gradient passes only where the input lies inside.
template <class S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi);

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape);

// Concatenates along axis 0; trailing extents must agree.
template <class S>
Tensor<S> concat0(const std::vector<Tensor<S>>& parts);
// Rows [begin, end) along axis 0.
template <class S>
Tensor<S> slice0(const Tensor<S>& x, std::size_t begin, std::size_t end);
// 2-D column block [begin, end).
template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t end);
// 2-D concatenation along columns.
template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts);
// 2-D row gather; indices may repeat.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::size_t>& rows);

// Cross-correlation. x: [Cin x H x W], weight: [Cout x Cin x k x k],
// bias: [Cout] or undefined. Output extents floor((H + 2p - k)/s) + 1.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 std::size_t stride, std::size_t padding);

// [C x H x W] -> [C x out_h x out_w]. Window for output i spans
// [floor(i H / out), ceil((i + 1) H / out)), which equals the integer
// partition floor(i H / out) .. floor((i + 1) H / out) whenever out divides H.
template <class S>
Tensor<S> adaptive_avg_pool(const Tensor<S>& x, std::size_t out_h, std::size_t out_w);

// Half-pixel-center bilinear resize: src = (dst + 0.5) * (in / out) - 0.5,
// clamped to [0, in - 1].
template <class S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, std::size_t out_h, std::size_t out_w);

// Per-row layer normalization with affine gamma/beta of length n.
template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          S eps = S(1e-5));

// Scaled dot-product attention over `heads` equal column groups.
// q, k, v: [T x D] with D divisible by heads; each head uses D/heads columns
// and scale 1/sqrt(D/heads). Returns the concatenated head outputs [T x D].
// When `alphas` is non-null it receives one row-stochastic [T x T] weight
// matrix per head (detached).
template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               std::size_t heads, std::vector<Tensor<S>>* alphas = nullptr);

}  // namespace cmft

#endif  // CMFT_OPS_HPP_
