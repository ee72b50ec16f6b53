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

#include "cmft/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace cmft {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class S>
Tensor<S> Tensor<S>::from(Shape shape, std::vector<S> values, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  for (const S v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in tensor data");
  }
  auto node = std::make_shared<detail::Node<S>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <class S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), S(0), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  validate_shape(shape);
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<S>(n, value), requires_grad);
}

template <class S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return from(Shape{}, std::vector<S>{value}, requires_grad);
}

template <class S>
detail::Node<S>& Tensor<S>::node() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return *node_;
}

template <class S>
std::size_t Tensor<S>::dim(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape()));
  return node().shape[axis];
}

template <class S>
S Tensor<S>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node().data[0];
}

template <class S>
void Tensor<S>::zero_grad() {
  auto& n = node();
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), S(0));
}

template <class S>
std::span<S> Tensor<S>::mutable_data() {
  auto& n = node();
  if (!n.is_leaf) throw ContractError("mutable_data() on a non-leaf tensor");
  return n.data;
}

template <class S>
std::span<S> Tensor<S>::mutable_grad() {
  auto& n = node();
  if (!n.is_leaf) throw ContractError("mutable_grad() on a non-leaf tensor");
  return n.ensure_grad();
}

template <class S>
Tensor<S> Tensor<S>::detach() const {
  return from(shape(), node().data, false);
}

template <class S>
Tensor<S> Tensor<S>::clone() const {
  return from(shape(), node().data, requires_grad() && is_leaf());
}

template <class S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  }
  using NodeT = detail::Node<S>;
  NodeT* root = loss.node_ptr().get();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (NodeT* n : order) {
    if (!n->is_leaf) n->grad.assign(n->data.size(), S(0));
  }
  root->ensure_grad()[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (!n->is_leaf && n->backward) n->backward(*n);
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace cmft
