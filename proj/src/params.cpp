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

#include "cmft/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "cmft/rng.hpp"

namespace cmft {

template <class S>
Tensor<S> ParameterStore<S>::create(const std::string& id, Shape shape, Init init,
                                    std::size_t fan_in, std::size_t fan_out) {
  if (contains(id)) throw ContractError("duplicate parameter id '" + id + "'");
  std::vector<S> values(shape_numel(shape), S(0));
  if (init == Init::kXavierUniform) {
    if (fan_in + fan_out == 0) throw ContractError("xavier init needs fan_in + fan_out > 0");
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(mix_seed(seed_, hash_string(id)));
    for (S& v : values) v = static_cast<S>(rng.uniform(-a, a));
  }
  Tensor<S> t = Tensor<S>::from(std::move(shape), std::move(values), true);
  index_[id] = params_.size();
  params_.push_back(Parameter<S>{id, t, {}});
  return t;
}

template <class S>
Parameter<S>& ParameterStore<S>::at(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw ContractError("unknown parameter id '" + id + "'");
  return params_[it->second];
}

template <class S>
const Parameter<S>& ParameterStore<S>::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ContractError("unknown parameter id '" + id + "'");
  return params_[it->second];
}

template <class S>
std::size_t ParameterStore<S>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <class S>
void ParameterStore<S>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <class S>
void ParameterStore<S>::sgd_step(S lr, S momentum, S weight_decay) {
  for (auto& p : params_) {
    if (!p.value.has_grad()) throw ContractError("sgd_step: parameter '" + p.id + "' has no gradient");
  }
  for (auto& p : params_) {
    auto w = p.value.mutable_data();
    auto g = p.value.grad();
    if (p.momentum.size() != w.size()) p.momentum.assign(w.size(), S(0));
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.momentum[i] = momentum * p.momentum[i] + (g[i] + weight_decay * w[i]);
      w[i] -= lr * p.momentum[i];
    }
  }
}

template <class S>
double ParameterStore<S>::clip_grad_norm(double max_norm) {
  double sq = 0;
  for (const auto& p : params_) {
    if (!p.value.has_grad()) continue;
    for (S g : p.value.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const S f = static_cast<S>(max_norm / norm);
    for (auto& p : params_) {
      if (!p.value.has_grad()) continue;
      for (S& g : p.value.mutable_grad()) g *= f;
    }
  }
  return norm;
}

template class ParameterStore<float>;
template class ParameterStore<double>;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<float>& store) {
  std::vector<std::uint8_t> out{'C', 'M', 'F', 'T'};
  put_u32(out, kCheckpointVersion);
  for (const auto& p : store.all()) {
    put_u32(out, static_cast<std::uint32_t>(p.id.size()));
    out.insert(out.end(), p.id.begin(), p.id.end());
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

void save_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != "CMFT") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  std::vector<CheckpointEntry> entries;
  while (!r.done()) {
    CheckpointEntry e;
    e.id = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint: implausible rank for '" + e.id + "'");
    for (std::uint32_t i = 0; i < rank; ++i) e.shape.push_back(r.u32());
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = std::bit_cast<float>(r.u32());
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void load_checkpoint(ParameterStore<float>& store, const std::filesystem::path& path) {
  load_checkpoint(store, read_checkpoint(path));
}

void load_checkpoint(ParameterStore<float>& store, const std::vector<CheckpointEntry>& entries) {
  std::set<std::string> seen;
  if (entries.size() != store.size()) {
    throw FormatError("checkpoint has " + std::to_string(entries.size()) + " tensors, model expects " +
                      std::to_string(store.size()));
  }
  for (const auto& e : entries) {
    if (!store.contains(e.id)) throw FormatError("checkpoint tensor '" + e.id + "' not in model");
    if (!seen.insert(e.id).second) throw FormatError("checkpoint tensor '" + e.id + "' repeated");
    auto& p = store.at(e.id);
    if (p.value.shape() != e.shape) {
      throw FormatError("checkpoint tensor '" + e.id + "' has shape " + shape_str(e.shape) +
                        ", model expects " + shape_str(p.value.shape()));
    }
    auto dst = p.value.mutable_data();
    std::copy(e.values.begin(), e.values.end(), dst.begin());
    p.momentum.clear();
  }
}

}  // namespace cmft
