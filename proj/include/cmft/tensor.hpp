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

#ifndef CMFT_TENSOR_HPP_
#define CMFT_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmft {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Shape or extent violation (mismatched operands, empty axes, bad sizes).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller broke a documented precondition (non-scalar loss, missing grad, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// An operation produced NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class S>
struct Node {
  Shape shape;
  std::vector<S> data;
  std::vector<S> grad;  // lazily allocated, same length as data
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads self.grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  std::vector<S>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), S(0));
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor with shared, immutable storage.
//
// Copies are cheap handles to the same node. Operations in ops.hpp build new
// tensors and, while gradient recording is enabled, link them into a tape
// that backward() walks in reverse topological order.
template <class S>
class Tensor {
 public:
  using Scalar = S;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<S> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const S> data() const { return node().data; }
  S item() const;
  S operator[](std::size_t flat) const { return node().data[flat]; }

  bool requires_grad() const { return node().requires_grad; }
  bool is_leaf() const { return node().is_leaf; }
  bool has_grad() const { return node().grad.size() == node().data.size(); }
  // Empty span when no gradient has been accumulated.
  std::span<const S> grad() const { return node().grad; }
  void zero_grad();

  // In-place access for leaf tensors only (parameter updates, init).
  std::span<S> mutable_data();
  std::span<S> mutable_grad();

  // Same values, no tape history.
  Tensor detach() const;
  Tensor clone() const;

  // Wraps an existing node; used by ops.
  explicit Tensor(std::shared_ptr<detail::Node<S>> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node<S>>& node_ptr() const { return node_; }

 private:
  detail::Node<S>& node() const;

  std::shared_ptr<detail::Node<S>> node_;
};

// Runs reverse-mode accumulation from a scalar loss. Leaf gradients
// accumulate across calls; intermediate gradients are reset every call.
template <class S>
void backward(const Tensor<S>& loss);

// Gradient recording switch (thread local). Enabled by default.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace cmft

#endif  // CMFT_TENSOR_HPP_
