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

#include "cmft/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cmft/flop_trace.hpp"

namespace cmft {

namespace {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapC = Eigen::Map<const Mat<S>>;
template <class S>
using MapM = Eigen::Map<Mat<S>>;
using Stride = Eigen::OuterStride<>;
template <class S>
using StridedC = Eigen::Map<const Mat<S>, 0, Stride>;
template <class S>
using StridedM = Eigen::Map<Mat<S>, 0, Stride>;

template <class S>
using NodeT = detail::Node<S>;
template <class S>
using BackwardFn = std::function<void(NodeT<S>&)>;

template <class S>
void check_finite(const std::vector<S>& data, const char* op) {
  for (S v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

// Builds the op result and links it into the tape when needed. Parents keep
// the order of `inputs` so backward rules can index them.
template <class S>
Tensor<S> make_op(const char* name, Shape shape, std::vector<S> data,
                  std::initializer_list<const Tensor<S>*> inputs, BackwardFn<S> fn) {
  check_finite(data, name);
  auto node = std::make_shared<NodeT<S>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (grad_enabled()) {
    for (const Tensor<S>* t : inputs) {
      if (t->defined() && t->requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const Tensor<S>* t : inputs) node->parents.push_back(t->node_ptr());
    node->backward = std::move(fn);
  }
  return Tensor<S>(std::move(node));
}

template <class S>
Tensor<S> make_op_n(const char* name, Shape shape, std::vector<S> data,
                    const std::vector<Tensor<S>>& inputs, BackwardFn<S> fn) {
  check_finite(data, name);
  auto node = std::make_shared<NodeT<S>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward = std::move(fn);
  }
  return Tensor<S>(std::move(node));
}

// Gradient buffer of parent i, or nullptr when it does not need one.
template <class S>
std::vector<S>* parent_grad(NodeT<S>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <class S>
void require_rank(const Tensor<S>& a, std::size_t rank, const char* op) {
  require(a.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()));
}

template <class S>
std::vector<S> copy_data(const Tensor<S>& t) {
  return std::vector<S>(t.data().begin(), t.data().end());
}

// Unary elementwise op with derivative dy/dx evaluated from (x, y).
template <class S, class F, class D>
Tensor<S> unary(const char* name, const Tensor<S>& x, F f, D dfdx, std::uint64_t cost) {
  const auto xs = x.data();
  std::vector<S> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  trace_op(name, 0, cost * xs.size());
  return make_op<S>(name, x.shape(), std::move(out), {&x}, [dfdx](NodeT<S>& self) {
    auto* gx = parent_grad(self, 0);
    if (!gx) return;
    const auto& xd = self.parents[0]->data;
    for (std::size_t i = 0; i < xd.size(); ++i) (*gx)[i] += self.grad[i] * dfdx(xd[i], self.data[i]);
  });
}

}  // namespace

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner extents differ " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
  std::vector<S> out(m * n);
  MapM<S>(out.data(), m, n).noalias() =
      MapC<S>(a.data().data(), m, k) * MapC<S>(b.data().data(), k, n);
  trace_op("matmul", m * k * n, 0);
  return make_op<S>("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](NodeT<S>& self) {
    MapC<S> dc(self.grad.data(), m, n);
    if (auto* ga = parent_grad(self, 0)) {
      MapM<S>(ga->data(), m, k).noalias() += dc * MapC<S>(self.parents[1]->data.data(), k, n).transpose();
    }
    if (auto* gb = parent_grad(self, 1)) {
      MapM<S>(gb->data(), k, n).noalias() += MapC<S>(self.parents[0]->data.data(), m, k).transpose() * dc;
    }
  });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<S> out(m * n);
  MapM<S>(out.data(), n, m) = MapC<S>(a.data().data(), m, n).transpose();
  return make_op<S>("transpose", {n, m}, std::move(out), {&a}, [m, n](NodeT<S>& self) {
    if (auto* ga = parent_grad(self, 0)) {
      MapM<S>(ga->data(), m, n) += MapC<S>(self.grad.data(), n, m).transpose();
    }
  });
}

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  std::vector<S> out = copy_data(a);
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bs[i];
  trace_op("add", 0, out.size());
  return make_op<S>("add", a.shape(), std::move(out), {&a, &b}, [](NodeT<S>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  std::vector<S> out = copy_data(a);
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bs[i];
  trace_op("sub", 0, out.size());
  return make_op<S>("sub", a.shape(), std::move(out), {&a, &b}, [](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  std::vector<S> out = copy_data(a);
  const auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bs[i];
  trace_op("mul", 0, out.size());
  return make_op<S>("mul", a.shape(), std::move(out), {&a, &b}, [](NodeT<S>& self) {
    const auto& ad = self.parents[0]->data;
    const auto& bd = self.parents[1]->data;
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bd[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * ad[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  std::vector<S> out = copy_data(a);
  for (S& v : out) v *= factor;
  trace_op("scale", 0, out.size());
  return make_op<S>("scale", a.shape(), std::move(out), {&a}, [factor](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
    }
  });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S value) {
  std::vector<S> out = copy_data(a);
  for (S& v : out) v += value;
  trace_op("add_scalar", 0, out.size());
  return make_op<S>("add_scalar", a.shape(), std::move(out), {&a}, [](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <class S>
Tensor<S> square(const Tensor<S>& a) {
  return unary<S>(
      "square", a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; }, 1);
}

template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& bias) {
  require_rank(x, 2, "add_row_bias");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(bias.numel() == n && bias.rank() == 1,
          "add_row_bias: bias " + shape_str(bias.shape()) + " vs matrix " + shape_str(x.shape()));
  std::vector<S> out = copy_data(x);
  const auto bs = bias.data();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bs[c];
  }
  trace_op("add_row_bias", 0, m * n);
  return make_op<S>("add_row_bias", x.shape(), std::move(out), {&x, &bias}, [m, n](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
    if (auto* g = parent_grad(self, 1)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < n; ++c) (*g)[c] += self.grad[r * n + c];
      }
    }
  });
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = 0;
  for (S v : a.data()) total += v;
  trace_op("sum", 0, a.numel());
  return make_op<S>("sum", Shape{}, std::vector<S>{total}, {&a}, [](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (S& v : *g) v += self.grad[0];
    }
  });
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.numel()));
}

template <class S>
Tensor<S> softmax(const Tensor<S>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) + " invalid for " +
                               shape_str(x.shape()));
  const Shape& sh = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sh[i];
  for (std::size_t i = axis + 1; i < sh.size(); ++i) inner *= sh[i];
  const std::size_t n = sh[axis];
  const auto xs = x.data();
  std::vector<S> out(xs.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      S mx = xs[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xs[base + i * inner]);
      S total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const S e = std::exp(xs[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  trace_op("softmax", 0, 4 * xs.size());
  return make_op<S>("softmax", sh, std::move(out), {&x}, [outer, inner, n](NodeT<S>& self) {
    auto* g = parent_grad(self, 0);
    if (!g) return;
    const auto& y = self.data;
    const auto& dy = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * n * inner + j;
        S dot = 0;
        for (std::size_t i = 0; i < n; ++i) dot += dy[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t idx = base + i * inner;
          (*g)[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr S kC = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  constexpr S kA = static_cast<S>(0.044715);
  return unary<S>(
      "gelu", x,
      [](S v) { return S(0.5) * v * (S(1) + std::tanh(kC * (v + kA * v * v * v))); },
      [](S v, S) {
        const S t = std::tanh(kC * (v + kA * v * v * v));
        return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * kC * (S(1) + S(3) * kA * v * v);
      },
      8);
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary<S>(
      "sigmoid", x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](S, S y) { return y * (S(1) - y); }, 4);
}

template <class S>
Tensor<S> silu(const Tensor<S>& x) {
  return unary<S>(
      "silu", x, [](S v) { return v / (S(1) + std::exp(-v)); },
      [](S v, S) {
        const S s = S(1) / (S(1) + std::exp(-v));
        return s * (S(1) + v * (S(1) - s));
      },
      5);
}

template <class S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary<S>(
      "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; }, 1);
}

template <class S>
Tensor<S> log(const Tensor<S>& x) {
  return unary<S>(
      "log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; }, 1);
}

template <class S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  return unary<S>(
      "clamp", x, [lo, hi](S v) { return std::clamp(v, lo, hi); },
      [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); }, 1);
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  for (std::size_t e : shape) require(e > 0, "reshape: zero extent");
  return make_op<S>("reshape", std::move(shape), copy_data(x), {&x}, [](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

template <class S>
Tensor<S> concat0(const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), "concat0: no inputs");
  Shape sh = parts[0].shape();
  require(!sh.empty(), "concat0: rank-0 input");
  std::size_t rows = 0;
  std::vector<S> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require(p.rank() == sh.size() && std::equal(sh.begin() + 1, sh.end(), p.shape().begin() + 1),
            "concat0: trailing extents differ");
    rows += p.dim(0);
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  sh[0] = rows;
  return make_op_n<S>("concat0", sh, std::move(out), parts, [offsets](NodeT<S>& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      if (auto* g = parent_grad(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[offsets[p] + i];
      }
    }
  });
}

template <class S>
Tensor<S> slice0(const Tensor<S>& x, std::size_t begin, std::size_t end) {
  require(x.rank() >= 1 && begin < end && end <= x.dim(0), "slice0: bad range");
  Shape sh = x.shape();
  const std::size_t row = x.numel() / sh[0];
  sh[0] = end - begin;
  std::vector<S> out(x.data().begin() + begin * row, x.data().begin() + end * row);
  const std::size_t off = begin * row;
  return make_op<S>("slice0", sh, std::move(out), {&x}, [off](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[off + i] += self.grad[i];
    }
  });
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(begin < end && end <= n, "slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<S> out(m * w);
  const auto xs = x.data();
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(xs.begin() + r * n + begin, w, out.begin() + r * w);
  }
  return make_op<S>("slice_cols", {m, w}, std::move(out), {&x}, [m, n, w, begin](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < w; ++c) (*g)[r * n + begin + c] += self.grad[r * w + c];
      }
    }
  });
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0].dim(0);
  std::vector<std::size_t> widths, starts;
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == m, "concat_cols: row counts differ");
    starts.push_back(n);
    widths.push_back(p.dim(1));
    n += p.dim(1);
  }
  std::vector<S> out(m * n);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto ps = parts[p].data();
    for (std::size_t r = 0; r < m; ++r) {
      std::copy_n(ps.begin() + r * widths[p], widths[p], out.begin() + r * n + starts[p]);
    }
  }
  return make_op_n<S>("concat_cols", {m, n}, std::move(out), parts,
                      [m, n, widths, starts](NodeT<S>& self) {
                        for (std::size_t p = 0; p < self.parents.size(); ++p) {
                          auto* g = parent_grad(self, p);
                          if (!g) continue;
                          for (std::size_t r = 0; r < m; ++r) {
                            for (std::size_t c = 0; c < widths[p]; ++c) {
                              (*g)[r * widths[p] + c] += self.grad[r * n + starts[p] + c];
                            }
                          }
                        }
                      });
}

template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::size_t>& rows) {
  require_rank(x, 2, "gather_rows");
  require(!rows.empty(), "gather_rows: empty index list");
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<S> out(rows.size() * n);
  const auto xs = x.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m, "gather_rows: index out of range");
    std::copy_n(xs.begin() + rows[i] * n, n, out.begin() + i * n);
  }
  return make_op<S>("gather_rows", {rows.size(), n}, std::move(out), {&x}, [rows, n](NodeT<S>& self) {
    if (auto* g = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < n; ++c) (*g)[rows[i] * n + c] += self.grad[i * n + c];
      }
    }
  });
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias,
                 std::size_t stride, std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == cin, "conv2d: weight expects " + std::to_string(weight.dim(1)) +
                                    " input channels, got " + std::to_string(cin));
  require(weight.dim(3) == k, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(h + 2 * padding >= k && w + 2 * padding >= k, "conv2d: output extent < 1");
  if (bias.defined()) require(bias.rank() == 1 && bias.dim(0) == cout, "conv2d: bad bias shape");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const std::size_t kk = cin * k * k, npix = ho * wo;

  // im2col: rows indexed by (c, ky, kx), columns by output pixel.
  auto cols = std::make_shared<std::vector<S>>(kk * npix, S(0));
  const auto xs = x.data();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        S* row = cols->data() + ((c * k + ky) * k + kx) * npix;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                    static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            row[oy * wo + ox] = xs[(c * h + iy) * w + ix];
          }
        }
      }
    }
  }
  std::vector<S> out(cout * npix);
  MapM<S> y(out.data(), cout, npix);
  y.noalias() = MapC<S>(weight.data().data(), cout, kk) * MapC<S>(cols->data(), kk, npix);
  if (bias.defined()) {
    const auto bs = bias.data();
    for (std::size_t o = 0; o < cout; ++o) y.row(o).array() += bs[o];
  }
  trace_op("conv2d", cout * kk * npix, bias.defined() ? cout * npix : 0);
  const bool has_bias = bias.defined();
  auto fn = [=](NodeT<S>& self) {
    MapC<S> dy(self.grad.data(), cout, npix);
    if (auto* gw = parent_grad(self, 1)) {
      MapM<S>(gw->data(), cout, kk).noalias() += dy * MapC<S>(cols->data(), kk, npix).transpose();
    }
    if (has_bias) {
      if (auto* gb = parent_grad(self, 2)) {
        // Plain loop: Eigen's vectorized sum peels by address alignment,
        // which would make the rounding depend on the heap layout.
        for (std::size_t o = 0; o < cout; ++o) {
          S acc = 0;
          for (std::size_t p = 0; p < npix; ++p) acc += dy(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(p));
          (*gb)[o] += acc;
        }
      }
    }
    if (auto* gx = parent_grad(self, 0)) {
      Mat<S> dcols = MapC<S>(self.parents[1]->data.data(), cout, kk).transpose() * dy;
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const S* row = dcols.data() + ((c * k + ky) * k + kx) * npix;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t ox = 0; ox < wo; ++ox) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                (*gx)[(c * h + iy) * w + ix] += row[oy * wo + ox];
              }
            }
          }
        }
      }
    }
  };
  if (has_bias) return make_op<S>("conv2d", {cout, ho, wo}, std::move(out), {&x, &weight, &bias}, fn);
  return make_op<S>("conv2d", {cout, ho, wo}, std::move(out), {&x, &weight}, fn);
}

namespace {

struct Window {
  std::size_t begin;
  std::size_t end;
};

std::vector<Window> pool_windows(std::size_t in, std::size_t out) {
  std::vector<Window> wins(out);
  for (std::size_t i = 0; i < out; ++i) {
    wins[i].begin = (i * in) / out;
    wins[i].end = ((i + 1) * in + out - 1) / out;
  }
  return wins;
}

struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;  // weight of `hi`
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    taps[d].lo = lo;
    taps[d].hi = std::min(lo + 1, in - 1);
    taps[d].frac = src - static_cast<double>(lo);
  }
  return taps;
}

}  // namespace

template <class S>
Tensor<S> adaptive_avg_pool(const Tensor<S>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "adaptive_avg_pool");
  require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool: output size must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto wy = pool_windows(h, out_h);
  const auto wx = pool_windows(w, out_w);
  std::vector<S> out(c * out_h * out_w);
  const auto xs = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        S total = 0;
        for (std::size_t y = wy[oy].begin; y < wy[oy].end; ++y) {
          for (std::size_t x0 = wx[ox].begin; x0 < wx[ox].end; ++x0) total += xs[(ch * h + y) * w + x0];
        }
        const auto count = static_cast<S>((wy[oy].end - wy[oy].begin) * (wx[ox].end - wx[ox].begin));
        out[(ch * out_h + oy) * out_w + ox] = total / count;
      }
    }
  }
  trace_op("adaptive_avg_pool", 0, x.numel());
  return make_op<S>("adaptive_avg_pool", {c, out_h, out_w}, std::move(out), {&x},
                    [=](NodeT<S>& self) {
                      auto* g = parent_grad(self, 0);
                      if (!g) return;
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t oy = 0; oy < out_h; ++oy) {
                          for (std::size_t ox = 0; ox < out_w; ++ox) {
                            const auto count = static_cast<S>((wy[oy].end - wy[oy].begin) *
                                                              (wx[ox].end - wx[ox].begin));
                            const S gv = self.grad[(ch * out_h + oy) * out_w + ox] / count;
                            for (std::size_t y = wy[oy].begin; y < wy[oy].end; ++y) {
                              for (std::size_t x0 = wx[ox].begin; x0 < wx[ox].end; ++x0) {
                                (*g)[(ch * h + y) * w + x0] += gv;
                              }
                            }
                          }
                        }
                      }
                    });
}

template <class S>
Tensor<S> bilinear_upsample(const Tensor<S>& x, std::size_t out_h, std::size_t out_w) {
  require_rank(x, 3, "bilinear_upsample");
  require(out_h >= 1 && out_w >= 1, "bilinear_upsample: output size must be >= 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<S> out(c * out_h * out_w);
  const auto xs = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S* src = xs.data() + ch * h * w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto fy = static_cast<S>(ty[oy].frac);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto fx = static_cast<S>(tx[ox].frac);
        const S top = src[ty[oy].lo * w + tx[ox].lo] * (S(1) - fx) + src[ty[oy].lo * w + tx[ox].hi] * fx;
        const S bot = src[ty[oy].hi * w + tx[ox].lo] * (S(1) - fx) + src[ty[oy].hi * w + tx[ox].hi] * fx;
        out[(ch * out_h + oy) * out_w + ox] = top * (S(1) - fy) + bot * fy;
      }
    }
  }
  trace_op("bilinear_upsample", 0, 6 * c * out_h * out_w);
  return make_op<S>("bilinear_upsample", {c, out_h, out_w}, std::move(out), {&x},
                    [=](NodeT<S>& self) {
                      auto* g = parent_grad(self, 0);
                      if (!g) return;
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        S* dst = g->data() + ch * h * w;
                        for (std::size_t oy = 0; oy < out_h; ++oy) {
                          const auto fy = static_cast<S>(ty[oy].frac);
                          for (std::size_t ox = 0; ox < out_w; ++ox) {
                            const auto fx = static_cast<S>(tx[ox].frac);
                            const S gv = self.grad[(ch * out_h + oy) * out_w + ox];
                            dst[ty[oy].lo * w + tx[ox].lo] += gv * (S(1) - fy) * (S(1) - fx);
                            dst[ty[oy].lo * w + tx[ox].hi] += gv * (S(1) - fy) * fx;
                            dst[ty[oy].hi * w + tx[ox].lo] += gv * fy * (S(1) - fx);
                            dst[ty[oy].hi * w + tx[ox].hi] += gv * fy * fx;
                          }
                        }
                      }
                    });
}

template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  require_rank(x, 2, "layer_norm_rows");
  const std::size_t m = x.dim(0), n = x.dim(1);
  require(gamma.numel() == n && beta.numel() == n, "layer_norm_rows: affine length mismatch");
  auto xhat = std::make_shared<std::vector<S>>(m * n);
  auto inv_std = std::make_shared<std::vector<S>>(m);
  std::vector<S> out(m * n);
  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  for (std::size_t r = 0; r < m; ++r) {
    S mu = 0;
    for (std::size_t c = 0; c < n; ++c) mu += xs[r * n + c];
    mu /= static_cast<S>(n);
    S var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (xs[r * n + c] - mu) * (xs[r * n + c] - mu);
    var /= static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const S xh = (xs[r * n + c] - mu) * is;
      (*xhat)[r * n + c] = xh;
      out[r * n + c] = xh * gs[c] + bs[c];
    }
  }
  trace_op("layer_norm", 0, 8 * m * n);
  return make_op<S>("layer_norm_rows", x.shape(), std::move(out), {&x, &gamma, &beta},
                    [=](NodeT<S>& self) {
                      const auto& gam = self.parents[1]->data;
                      if (auto* gg = parent_grad(self, 1)) {
                        for (std::size_t i = 0; i < m * n; ++i) (*gg)[i % n] += self.grad[i] * (*xhat)[i];
                      }
                      if (auto* gb = parent_grad(self, 2)) {
                        for (std::size_t i = 0; i < m * n; ++i) (*gb)[i % n] += self.grad[i];
                      }
                      auto* gx = parent_grad(self, 0);
                      if (!gx) return;
                      for (std::size_t r = 0; r < m; ++r) {
                        S mean_d = 0, mean_dx = 0;
                        for (std::size_t c = 0; c < n; ++c) {
                          const S d = self.grad[r * n + c] * gam[c];
                          mean_d += d;
                          mean_dx += d * (*xhat)[r * n + c];
                        }
                        mean_d /= static_cast<S>(n);
                        mean_dx /= static_cast<S>(n);
                        for (std::size_t c = 0; c < n; ++c) {
                          const S d = self.grad[r * n + c] * gam[c];
                          (*gx)[r * n + c] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + c] * mean_dx);
                        }
                      }
                    });
}

template <class S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                               std::size_t heads, std::vector<Tensor<S>>* alphas) {
  require_rank(q, 2, "multi_head_attention");
  require_same_shape(q, k, "multi_head_attention");
  require_same_shape(q, v, "multi_head_attention");
  const std::size_t t = q.dim(0), d_model = q.dim(1);
  require(heads >= 1 && d_model % heads == 0,
          "multi_head_attention: width " + std::to_string(d_model) + " not divisible by " +
              std::to_string(heads) + " heads");
  const std::size_t d = d_model / heads;
  const S sc = S(1) / std::sqrt(static_cast<S>(d));

  auto weights = std::make_shared<std::vector<Mat<S>>>(heads);
  std::vector<S> out(t * d_model);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    StridedC<S> qh(q.data().data() + hd * d, t, d, Stride(d_model));
    StridedC<S> kh(k.data().data() + hd * d, t, d, Stride(d_model));
    StridedC<S> vh(v.data().data() + hd * d, t, d, Stride(d_model));
    Mat<S>& a = (*weights)[hd];
    a.noalias() = (qh * kh.transpose()) * sc;
    for (std::size_t r = 0; r < t; ++r) {
      auto row = a.row(r);
      const S mx = row.maxCoeff();
      row = (row.array() - mx).exp();
      row /= row.sum();
    }
    StridedM<S>(out.data() + hd * d, t, d, Stride(d_model)).noalias() = a * vh;
  }
  trace_op("attention_scores", heads * t * t * d, 0);
  trace_op("attention_softmax", 0, 4 * heads * t * t);
  trace_op("attention_values", heads * t * t * d, 0);
  if (alphas) {
    alphas->clear();
    for (const auto& a : *weights) {
      alphas->push_back(Tensor<S>::from({t, t}, std::vector<S>(a.data(), a.data() + t * t)));
    }
  }
  return make_op<S>(
      "multi_head_attention", {t, d_model}, std::move(out), {&q, &k, &v}, [=](NodeT<S>& self) {
        auto* gq = parent_grad(self, 0);
        auto* gk = parent_grad(self, 1);
        auto* gv = parent_grad(self, 2);
        const S* qd = self.parents[0]->data.data();
        const S* kd = self.parents[1]->data.data();
        const S* vd = self.parents[2]->data.data();
        for (std::size_t hd = 0; hd < heads; ++hd) {
          const Mat<S>& a = (*weights)[hd];
          StridedC<S> dz(self.grad.data() + hd * d, t, d, Stride(d_model));
          if (gv) {
            StridedM<S>(gv->data() + hd * d, t, d, Stride(d_model)).noalias() += a.transpose() * dz;
          }
          if (!gq && !gk) continue;
          Mat<S> da = dz * StridedC<S>(vd + hd * d, t, d, Stride(d_model)).transpose();
          for (std::size_t r = 0; r < t; ++r) {
            const S dot = da.row(r).dot(a.row(r));
            da.row(r) = (a.row(r).array() * (da.row(r).array() - dot)).matrix();
          }
          da *= sc;
          if (gq) {
            StridedM<S>(gq->data() + hd * d, t, d, Stride(d_model)).noalias() +=
                da * StridedC<S>(kd + hd * d, t, d, Stride(d_model));
          }
          if (gk) {
            StridedM<S>(gk->data() + hd * d, t, d, Stride(d_model)).noalias() +=
                da.transpose() * StridedC<S>(qd + hd * d, t, d, Stride(d_model));
          }
        }
      });
}

#define CMFT_INSTANTIATE_OPS(S)                                                                    \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                   \
  template Tensor<S> transpose(const Tensor<S>&);                                                  \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                      \
  template Tensor<S> scale(const Tensor<S>&, S);                                                   \
  template Tensor<S> add_scalar(const Tensor<S>&, S);                                              \
  template Tensor<S> square(const Tensor<S>&);                                                     \
  template Tensor<S> add_row_bias(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> sum(const Tensor<S>&);                                                        \
  template Tensor<S> mean(const Tensor<S>&);                                                       \
  template Tensor<S> softmax(const Tensor<S>&, std::size_t);                                       \
  template Tensor<S> gelu(const Tensor<S>&);                                                       \
  template Tensor<S> silu(const Tensor<S>&);                                                       \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                    \
  template Tensor<S> exp(const Tensor<S>&);                                                        \
  template Tensor<S> log(const Tensor<S>&);                                                        \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                                \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                             \
  template Tensor<S> concat0(const std::vector<Tensor<S>>&);                                       \
  template Tensor<S> slice0(const Tensor<S>&, std::size_t, std::size_t);                           \
  template Tensor<S> slice_cols(const Tensor<S>&, std::size_t, std::size_t);                       \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);                                   \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<std::size_t>&);               \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, std::size_t,     \
                            std::size_t);                                                          \
  template Tensor<S> adaptive_avg_pool(const Tensor<S>&, std::size_t, std::size_t);                \
  template Tensor<S> bilinear_upsample(const Tensor<S>&, std::size_t, std::size_t);                \
  template Tensor<S> layer_norm_rows(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);     \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,    \
                                          std::size_t, std::vector<Tensor<S>>*);

CMFT_INSTANTIATE_OPS(float)
CMFT_INSTANTIATE_OPS(double)

}  // namespace cmft
