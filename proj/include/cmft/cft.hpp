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

#ifndef CMFT_CFT_HPP_
#define CMFT_CFT_HPP_

#include <cstddef>
#include <string>
#include <vector>

#include "cmft/params.hpp"
#include "cmft/tensor.hpp"

namespace cmft {

// Cross-modality fusion transformer.
//
// Both modality feature maps are average-pooled to P x P, flattened into P^2
// tokens each, concatenated (RGB tokens first) and offset by a learned
// positional embedding of shape 2P^2 x C. A stack of attention + MLP blocks
// lets every token attend over both modalities at once. The result passes
// through a zero-initialised output projection, is split back per modality,
// reshaped and bilinearly resized to the input resolution. The caller adds the
// two deltas to the branch features, so an all-zero delta is the identity.
struct CftConfig {
  std::size_t channels = 64;
  std::size_t heads = 4;
  std::size_t blocks = 8;
  std::size_t pooled_size = 8;
  std::size_t mlp_ratio = 2;
  // Per-head C x C projections and W^O of shape (h C) x C instead of C/h-wide heads.
  bool paper_literal_heads = false;
  // Pre-norm LayerNorm ablation.
  bool use_layernorm = false;

  std::size_t tokens() const { return 2 * pooled_size * pooled_size; }
  // Throws ContractError on inconsistent settings.
  void validate() const;
};

template <class S>
struct CftBlockParams {
  Tensor<S> wq, wk, wv;                    // C x C
  Tensor<S> wq_heads, wk_heads, wv_heads;  // C x hC, literal heads only
  Tensor<S> wo;                            // C x C, or hC x C for literal heads
  Tensor<S> fc1_w, fc1_b;                  // C x rC, rC
  Tensor<S> fc2_w, fc2_b;                  // rC x C, C
  Tensor<S> ln1_g, ln1_b, ln2_g, ln2_b;    // layernorm only
};

template <class S>
struct CftParams {
  std::vector<CftBlockParams<S>> blocks;
  Tensor<S> pos_embedding;  // 2P^2 x C
  Tensor<S> out_proj;       // C x C, zero at init
};

// Registers all CFT parameters under `prefix` ("cft1." etc.). The last
// block's W^O and the output projection start at zero.
template <class S>
CftParams<S> make_cft_params(ParameterStore<S>& store, const std::string& prefix, const CftConfig& cfg);

// Row-stochastic attention weights of one head of one block.
template <class S>
struct CorrelationMatrix {
  std::size_t block = 0;
  std::size_t head = 0;
  Tensor<S> alpha;  // 2P^2 x 2P^2
};

template <class S>
struct CftOutput {
  Tensor<S> delta_r;
  Tensor<S> delta_t;
  std::vector<CorrelationMatrix<S>> attention;  // filled when requested
};

// [C x P x P] -> [P^2 x C]; token y*P + x holds the channel vector at (y, x).
template <class S>
Tensor<S> tokenize(const Tensor<S>& feature_map);

// Inverse of tokenize: [P^2 x C] -> [C x P x P].
template <class S>
Tensor<S> detokenize(const Tensor<S>& tokens, std::size_t side);

template <class S>
struct BlockOutput {
  Tensor<S> out;
  std::vector<Tensor<S>> alphas;  // one per head
};

// Z' = MultiHead(I), Z'' = Z' + I, O = FC2(GELU(FC1(Z''))) + Z''.
template <class S>
BlockOutput<S> attention_block(const Tensor<S>& input, const CftBlockParams<S>& block,
                               const CftConfig& cfg, bool capture_attention = false);

template <class S>
CftOutput<S> fuse(const Tensor<S>& rgb_features, const Tensor<S>& thermal_features,
                  const CftConfig& cfg, const CftParams<S>& params, bool capture_attention = false);

template <class S>
struct CorrelationBlocks {
  Tensor<S> rr;  // RGB -> RGB
  Tensor<S> rt;  // RGB rows, thermal columns
  Tensor<S> tr;
  Tensor<S> tt;
};

// Splits a 2n x 2n matrix into its four n x n quadrants.
template <class S>
CorrelationBlocks<S> correlation_blocks(const Tensor<S>& alpha);

template <class S>
Tensor<S> assemble_correlation(const CorrelationBlocks<S>& blocks);

struct ResidualReport {
  double feature_min = 0;
  double feature_max = 0;
  double delta_min = 0;
  double delta_max = 0;
  // max|delta| / max|feature|; 0 when delta is all zero.
  double ratio = 0;

  std::string to_text() const;
};

template <class S>
ResidualReport residual_magnitude_report(const Tensor<S>& feature, const Tensor<S>& delta);

}  // namespace cmft

#endif  // CMFT_CFT_HPP_
