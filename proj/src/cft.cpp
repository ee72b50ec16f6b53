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

#include "cmft/cft.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cmft/flop_trace.hpp"
#include "cmft/ops.hpp"

namespace cmft {

void CftConfig::validate() const {
  if (channels < 1) throw ContractError("cft: channels must be >= 1");
  if (heads < 1) throw ContractError("cft: heads must be >= 1");
  if (blocks < 1) throw ContractError("cft: blocks must be >= 1");
  if (pooled_size < 1) throw ContractError("cft: pooled_size must be >= 1");
  if (mlp_ratio < 1) throw ContractError("cft: mlp_ratio must be >= 1");
  if (!paper_literal_heads && channels % heads != 0) {
    throw ContractError("cft: channels " + std::to_string(channels) + " not divisible by " +
                        std::to_string(heads) + " heads");
  }
}

template <class S>
CftParams<S> make_cft_params(ParameterStore<S>& store, const std::string& prefix, const CftConfig& cfg) {
  cfg.validate();
  const std::size_t c = cfg.channels, h = cfg.heads, hidden = cfg.mlp_ratio * c;
  CftParams<S> params;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string p = prefix + "block" + std::to_string(b) + ".";
    CftBlockParams<S> blk;
    blk.wq = store.create(p + "wq", {c, c}, Init::kXavierUniform, c, c);
    blk.wk = store.create(p + "wk", {c, c}, Init::kXavierUniform, c, c);
    blk.wv = store.create(p + "wv", {c, c}, Init::kXavierUniform, c, c);
    const bool last = b + 1 == cfg.blocks;
    const Init wo_init = last ? Init::kZeros : Init::kXavierUniform;
    if (cfg.paper_literal_heads) {
      blk.wq_heads = store.create(p + "wq_heads", {c, h * c}, Init::kXavierUniform, c, c);
      blk.wk_heads = store.create(p + "wk_heads", {c, h * c}, Init::kXavierUniform, c, c);
      blk.wv_heads = store.create(p + "wv_heads", {c, h * c}, Init::kXavierUniform, c, c);
      blk.wo = store.create(p + "wo", {h * c, c}, wo_init, h * c, c);
    } else {
      blk.wo = store.create(p + "wo", {c, c}, wo_init, c, c);
    }
    blk.fc1_w = store.create(p + "fc1.w", {c, hidden}, Init::kXavierUniform, c, hidden);
    blk.fc1_b = store.create(p + "fc1.b", {hidden}, Init::kZeros);
    blk.fc2_w = store.create(p + "fc2.w", {hidden, c}, Init::kXavierUniform, hidden, c);
    blk.fc2_b = store.create(p + "fc2.b", {c}, Init::kZeros);
    if (cfg.use_layernorm) {
      blk.ln1_g = store.create(p + "ln1.g", {c}, Init::kZeros);
      blk.ln1_b = store.create(p + "ln1.b", {c}, Init::kZeros);
      blk.ln2_g = store.create(p + "ln2.g", {c}, Init::kZeros);
      blk.ln2_b = store.create(p + "ln2.b", {c}, Init::kZeros);
      for (Tensor<S>* g : {&blk.ln1_g, &blk.ln2_g}) {
        for (S& v : g->mutable_data()) v = S(1);
      }
    }
    params.blocks.push_back(std::move(blk));
  }
  params.pos_embedding =
      store.create(prefix + "pos_embedding", {cfg.tokens(), c}, Init::kXavierUniform, cfg.tokens(), c);
  params.out_proj = store.create(prefix + "out_proj", {c, c}, Init::kZeros);
  return params;
}

template <class S>
Tensor<S> tokenize(const Tensor<S>& feature_map) {
  if (feature_map.rank() != 3 || feature_map.dim(1) != feature_map.dim(2)) {
    throw DimensionError("tokenize: expected C x P x P, got " + shape_str(feature_map.shape()));
  }
  const std::size_t c = feature_map.dim(0), side = feature_map.dim(1);
  return transpose(reshape(feature_map, {c, side * side}));
}

template <class S>
Tensor<S> detokenize(const Tensor<S>& tokens, std::size_t side) {
  if (tokens.rank() != 2 || tokens.dim(0) != side * side) {
    throw DimensionError("detokenize: expected " + std::to_string(side * side) + " x C tokens, got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t c = tokens.dim(1);
  return reshape(transpose(tokens), {c, side, side});
}

template <class S>
BlockOutput<S> attention_block(const Tensor<S>& input, const CftBlockParams<S>& block,
                               const CftConfig& cfg, bool capture_attention) {
  if (input.rank() != 2 || input.dim(1) != cfg.channels) {
    throw DimensionError("attention_block: expected T x " + std::to_string(cfg.channels) + ", got " +
                         shape_str(input.shape()));
  }
  BlockOutput<S> result;
  const Tensor<S> x = cfg.use_layernorm ? layer_norm_rows(input, block.ln1_g, block.ln1_b) : input;
  Tensor<S> q, k, v;
  {
    FlopLabel label("qkv");
    q = matmul(x, block.wq);
    k = matmul(x, block.wk);
    v = matmul(x, block.wv);
    if (cfg.paper_literal_heads) {
      q = matmul(q, block.wq_heads);
      k = matmul(k, block.wk_heads);
      v = matmul(v, block.wv_heads);
    }
  }
  Tensor<S> z;
  {
    FlopLabel label("attention");
    z = multi_head_attention(q, k, v, cfg.heads, capture_attention ? &result.alphas : nullptr);
  }
  Tensor<S> z1;
  {
    FlopLabel label("out_proj");
    z1 = matmul(z, block.wo);
  }
  const Tensor<S> z2 = add(z1, input);
  const Tensor<S> y = cfg.use_layernorm ? layer_norm_rows(z2, block.ln2_g, block.ln2_b) : z2;
  FlopLabel label("mlp");
  const Tensor<S> hidden = gelu(add_row_bias(matmul(y, block.fc1_w), block.fc1_b));
  result.out = add(add_row_bias(matmul(hidden, block.fc2_w), block.fc2_b), z2);
  return result;
}

template <class S>
CftOutput<S> fuse(const Tensor<S>& rgb_features, const Tensor<S>& thermal_features,
                  const CftConfig& cfg, const CftParams<S>& params, bool capture_attention) {
  cfg.validate();
  if (rgb_features.rank() != 3 || rgb_features.shape() != thermal_features.shape()) {
    throw DimensionError("fuse: modality shapes differ: " + shape_str(rgb_features.shape()) + " vs " +
                         shape_str(thermal_features.shape()));
  }
  if (rgb_features.dim(0) != cfg.channels) {
    throw DimensionError("fuse: expected " + std::to_string(cfg.channels) + " channels, got " +
                         std::to_string(rgb_features.dim(0)));
  }
  if (params.blocks.size() != cfg.blocks) throw ContractError("fuse: parameter/config block count differ");
  const std::size_t h = rgb_features.dim(1), w = rgb_features.dim(2), p = cfg.pooled_size;

  const Tensor<S> tokens_r = tokenize(adaptive_avg_pool(rgb_features, p, p));
  const Tensor<S> tokens_t = tokenize(adaptive_avg_pool(thermal_features, p, p));
  Tensor<S> seq = add(concat0<S>({tokens_r, tokens_t}), params.pos_embedding);

  CftOutput<S> out;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    FlopLabel label("block" + std::to_string(b));
    auto blk = attention_block(seq, params.blocks[b], cfg, capture_attention);
    seq = blk.out;
    for (std::size_t hd = 0; hd < blk.alphas.size(); ++hd) {
      out.attention.push_back(CorrelationMatrix<S>{b, hd, blk.alphas[hd]});
    }
  }
  {
    FlopLabel label("fusion_out");
    seq = matmul(seq, params.out_proj);
  }
  const std::size_t n = p * p;
  out.delta_r = bilinear_upsample(detokenize(slice0(seq, 0, n), p), h, w);
  out.delta_t = bilinear_upsample(detokenize(slice0(seq, n, 2 * n), p), h, w);
  return out;
}

template <class S>
CorrelationBlocks<S> correlation_blocks(const Tensor<S>& alpha) {
  if (alpha.rank() != 2 || alpha.dim(0) != alpha.dim(1)) {
    throw DimensionError("correlation_blocks: expected a square matrix, got " + shape_str(alpha.shape()));
  }
  if (alpha.dim(0) % 2 != 0) throw DimensionError("correlation_blocks: odd extent");
  const std::size_t n = alpha.dim(0) / 2;
  const Tensor<S> top = slice0(alpha, 0, n);
  const Tensor<S> bottom = slice0(alpha, n, 2 * n);
  return CorrelationBlocks<S>{slice_cols(top, 0, n), slice_cols(top, n, 2 * n), slice_cols(bottom, 0, n),
                              slice_cols(bottom, n, 2 * n)};
}

template <class S>
Tensor<S> assemble_correlation(const CorrelationBlocks<S>& blocks) {
  return concat0<S>({concat_cols<S>({blocks.rr, blocks.rt}), concat_cols<S>({blocks.tr, blocks.tt})});
}

std::string ResidualReport::to_text() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "feature_min=" << feature_min << "\n"
     << "feature_max=" << feature_max << "\n"
     << "delta_min=" << delta_min << "\n"
     << "delta_max=" << delta_max << "\n"
     << "ratio=" << ratio << "\n";
  return os.str();
}

template <class S>
ResidualReport residual_magnitude_report(const Tensor<S>& feature, const Tensor<S>& delta) {
  if (feature.shape() != delta.shape()) throw DimensionError("residual report: shape mismatch");
  const auto f = feature.data();
  const auto d = delta.data();
  ResidualReport r;
  const auto [fmin, fmax] = std::minmax_element(f.begin(), f.end());
  const auto [dmin, dmax] = std::minmax_element(d.begin(), d.end());
  r.feature_min = *fmin;
  r.feature_max = *fmax;
  r.delta_min = *dmin;
  r.delta_max = *dmax;
  const double fabs_max = std::max(std::abs(r.feature_min), std::abs(r.feature_max));
  const double dabs_max = std::max(std::abs(r.delta_min), std::abs(r.delta_max));
  r.ratio = dabs_max == 0.0 ? 0.0 : dabs_max / fabs_max;
  return r;
}

#define CMFT_INSTANTIATE_CFT(S)                                                                     \
  template CftParams<S> make_cft_params(ParameterStore<S>&, const std::string&, const CftConfig&);  \
  template Tensor<S> tokenize(const Tensor<S>&);                                                    \
  template Tensor<S> detokenize(const Tensor<S>&, std::size_t);                                     \
  template BlockOutput<S> attention_block(const Tensor<S>&, const CftBlockParams<S>&,               \
                                          const CftConfig&, bool);                                  \
  template CftOutput<S> fuse(const Tensor<S>&, const Tensor<S>&, const CftConfig&,                  \
                             const CftParams<S>&, bool);                                            \
  template CorrelationBlocks<S> correlation_blocks(const Tensor<S>&);                               \
  template Tensor<S> assemble_correlation(const CorrelationBlocks<S>&);                             \
  template ResidualReport residual_magnitude_report(const Tensor<S>&, const Tensor<S>&);

CMFT_INSTANTIATE_CFT(float)
CMFT_INSTANTIATE_CFT(double)

}  // namespace cmft
