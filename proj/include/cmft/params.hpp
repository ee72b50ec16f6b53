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

#ifndef CMFT_PARAMS_HPP_
#define CMFT_PARAMS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cmft/tensor.hpp"

namespace cmft {

template <class S>
struct Parameter {
  std::string id;
  Tensor<S> value;            // leaf, requires_grad
  std::vector<S> momentum;    // empty until the first sgd_step
};

enum class Init {
  kZeros,
  // uniform(-a, a), a = sqrt(6 / (fan_in + fan_out))
  kXavierUniform,
};

// Ordered registry of trainable tensors. Each parameter draws its initial
// values from a stream seeded by (seed, id), so adding or removing other
// parameters never changes the initialization of the rest.
template <class S>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : seed_(seed) {}

  Tensor<S> create(const std::string& id, Shape shape, Init init, std::size_t fan_in = 0,
                   std::size_t fan_out = 0);

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  Parameter<S>& at(const std::string& id);
  const Parameter<S>& at(const std::string& id) const;

  std::vector<Parameter<S>>& all() { return params_; }
  const std::vector<Parameter<S>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();

  // v <- momentum * v + (grad + weight_decay * w); w <- w - lr * v.
  // Throws ContractError when a parameter has no gradient.
  void sgd_step(S lr, S momentum, S weight_decay);

  // Scales all gradients so their global L2 norm is at most max_norm.
  // Returns the norm before scaling.
  double clip_grad_norm(double max_norm);

 private:
  std::uint64_t seed_;
  std::vector<Parameter<S>> params_;
  std::map<std::string, std::size_t> index_;
};

// Checkpoint layout, all integers u32 little-endian:
//   "CMFT" | version | { id_len | id bytes | rank | extents... | f32 LE values }*
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<float>& store);
void save_checkpoint(const ParameterStore<float>& store, const std::filesystem::path& path);

struct CheckpointEntry {
  std::string id;
  Shape shape;
  std::vector<float> values;
};

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into matching parameters. Every store parameter
// must be present with an identical shape; extra entries are an error too.
void load_checkpoint(ParameterStore<float>& store, const std::filesystem::path& path);
void load_checkpoint(ParameterStore<float>& store, const std::vector<CheckpointEntry>& entries);

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace cmft

#endif  // CMFT_PARAMS_HPP_
