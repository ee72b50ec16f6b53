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

#include <cmath>

#include "doctest.h"
#include "cmft/cft.hpp"
#include "cmft/ops.hpp"
#include "gradcheck.hpp"

using namespace cmft;
using namespace cmft::testing;

namespace {

CftConfig small_config(std::size_t c, std::size_t heads, std::size_t blocks, std::size_t p) {
  CftConfig cfg;
  cfg.channels = c;
  cfg.heads = heads;
  cfg.blocks = blocks;
  cfg.pooled_size = p;
  return cfg;
}

void randomize(ParameterStore<double>& store, std::uint64_t seed, double range = 0.5) {
  Rng rng(seed);
  for (auto& p : store.all()) {
    for (double& v : p.value.mutable_data()) v = rng.uniform(-range, range);
  }
}

double gelu_ref(double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x))); }

}  // namespace

TEST_CASE("tokenize follows token[y*P + x][c] = F[c][y][x]") {
  std::vector<double> v(8);
  for (int i = 0; i < 8; ++i) v[i] = 10.0 * i + 1;
  const auto f = Tensor<double>::from({2, 2, 2}, v);
  const auto t = tokenize(f);
  REQUIRE(t.shape() == Shape{4, 2});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t x = 0; x < 2; ++x) CHECK(t[(y * 2 + x) * 2 + c] == f[(c * 2 + y) * 2 + x]);

  const auto one = Tensor<double>::from({1, 2, 2}, {4, 3, 2, 1});
  const auto flat = tokenize(one);
  for (std::size_t i = 0; i < 4; ++i) CHECK(flat[i] == one[i]);

  Rng rng(9);
  const auto r = random_tensor(rng, {5, 3, 3}, -1, 1, false);
  const auto back = detokenize(tokenize(r), 3);
  CHECK(back.shape() == r.shape());
  for (std::size_t i = 0; i < r.numel(); ++i) CHECK(back[i] == r[i]);
  CHECK_THROWS_AS(tokenize(Tensor<double>::zeros({2, 2, 3})), DimensionError);
  CHECK_THROWS_AS(detokenize(Tensor<double>::zeros({5, 2}), 2), DimensionError);
}

TEST_CASE("attention_block special cases") {
  ParameterStore<double> store(3);
  const CftConfig cfg = small_config(4, 2, 1, 1);
  auto params = make_cft_params(store, "cft.", cfg);
  randomize(store, 17);
  auto& blk = params.blocks[0];
  Rng rng(5);

  SUBCASE("single token attends to itself") {
    const auto x = random_tensor(rng, {1, 4}, -1, 1, false);
    const auto out = attention_block(x, blk, cfg, true);
    REQUIRE(out.alphas.size() == 2);
    for (const auto& a : out.alphas) CHECK(a[0] == 1.0);
    // Z' = V W^O with V = x W^V.
    const auto z2 = add(matmul(matmul(x, blk.wv), blk.wo), x);
    const auto expected = add(add_row_bias(matmul(gelu(add_row_bias(matmul(z2, blk.fc1_w), blk.fc1_b)), blk.fc2_w),
                                           blk.fc2_b),
                              z2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }

  SUBCASE("identical keys give uniform weights and the mean value row") {
    for (double& w : blk.wk.mutable_data()) w = 0.0;
    const auto x = random_tensor(rng, {5, 4}, -1, 1, false);
    const auto out = attention_block(x, blk, cfg, true);
    for (const auto& a : out.alphas) {
      for (double v : a.data()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
    }
    const auto v = matmul(x, blk.wv);
    std::vector<double> col_mean(4, 0.0);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t c = 0; c < 4; ++c) col_mean[c] += v[t * 4 + c] / 5;
    std::vector<double> rows;
    for (std::size_t t = 0; t < 5; ++t) rows.insert(rows.end(), col_mean.begin(), col_mean.end());
    const auto z2 = add(matmul(Tensor<double>::from({5, 4}, rows), blk.wo), x);
    const auto expected = add(add_row_bias(matmul(gelu(add_row_bias(matmul(z2, blk.fc1_w), blk.fc1_b)), blk.fc2_w),
                                           blk.fc2_b),
                              z2);
    for (std::size_t i = 0; i < 20; ++i) CHECK(out.out[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }

  SUBCASE("head count must divide the width") {
    CHECK_THROWS_AS(small_config(6, 4, 1, 1).validate(), ContractError);
    CftConfig literal = small_config(6, 4, 1, 1);
    literal.paper_literal_heads = true;
    CHECK_NOTHROW(literal.validate());
  }
}

TEST_CASE("attention_block against a scalar hand evaluation, T=2 C=2 h=1") {
  ParameterStore<double> store(1);
  const CftConfig cfg = small_config(2, 1, 1, 1);
  auto params = make_cft_params(store, "cft.", cfg);
  auto& blk = params.blocks[0];
  auto set = [](Tensor<double>& t, std::vector<double> v) { std::copy(v.begin(), v.end(), t.mutable_data().begin()); };
  const double WQ[2][2] = {{1, 0.5}, {-0.5, 1}}, WK[2][2] = {{0.5, 0}, {1, -1}}, WV[2][2] = {{1, 2}, {0, 1}};
  const double WO[2][2] = {{0.5, -1}, {1, 0.25}};
  const double F1[2][4] = {{1, -1, 0.5, 0}, {0, 1, -0.5, 2}}, B1[4] = {0.1, -0.2, 0, 0.3};
  const double F2[4][2] = {{1, 0}, {0, 1}, {-1, 1}, {0.5, -0.5}}, B2[2] = {0.05, -0.05};
  set(blk.wq, {1, 0.5, -0.5, 1});
  set(blk.wk, {0.5, 0, 1, -1});
  set(blk.wv, {1, 2, 0, 1});
  set(blk.wo, {0.5, -1, 1, 0.25});
  set(blk.fc1_w, {1, -1, 0.5, 0, 0, 1, -0.5, 2});
  set(blk.fc1_b, {0.1, -0.2, 0, 0.3});
  set(blk.fc2_w, {1, 0, 0, 1, -1, 1, 0.5, -0.5});
  set(blk.fc2_b, {0.05, -0.05});
  const double I[2][2] = {{1, 2}, {-1, 0.5}};

  // Q, K, V = I W.
  double Q[2][2], K[2][2], V[2][2];
  for (int t = 0; t < 2; ++t)
    for (int c = 0; c < 2; ++c) {
      Q[t][c] = I[t][0] * WQ[0][c] + I[t][1] * WQ[1][c];
      K[t][c] = I[t][0] * WK[0][c] + I[t][1] * WK[1][c];
      V[t][c] = I[t][0] * WV[0][c] + I[t][1] * WV[1][c];
    }
  // alpha = softmax(Q K^T / sqrt(2)), Z = alpha V, Z' = Z W^O, Z'' = Z' + I.
  double alpha[2][2], z2[2][2], out[2][2];
  for (int i = 0; i < 2; ++i) {
    const double s0 = (Q[i][0] * K[0][0] + Q[i][1] * K[0][1]) / std::sqrt(2.0);
    const double s1 = (Q[i][0] * K[1][0] + Q[i][1] * K[1][1]) / std::sqrt(2.0);
    alpha[i][0] = 1 / (1 + std::exp(s1 - s0));
    alpha[i][1] = 1 - alpha[i][0];
    double z[2];
    for (int c = 0; c < 2; ++c) z[c] = alpha[i][0] * V[0][c] + alpha[i][1] * V[1][c];
    for (int c = 0; c < 2; ++c) z2[i][c] = z[0] * WO[0][c] + z[1] * WO[1][c] + I[i][c];
    double hid[4];
    for (int j = 0; j < 4; ++j) hid[j] = gelu_ref(z2[i][0] * F1[0][j] + z2[i][1] * F1[1][j] + B1[j]);
    for (int c = 0; c < 2; ++c) {
      out[i][c] = B2[c] + z2[i][c];
      for (int j = 0; j < 4; ++j) out[i][c] += hid[j] * F2[j][c];
    }
  }

  const auto r = attention_block(Tensor<double>::from({2, 2}, {1, 2, -1, 0.5}), blk, cfg, true);
  for (int i = 0; i < 2; ++i) {
    for (int c = 0; c < 2; ++c) {
      CHECK(r.alphas[0][i * 2 + c] == doctest::Approx(alpha[i][c]).epsilon(1e-14));
      CHECK(r.out[i * 2 + c] == doctest::Approx(out[i][c]).epsilon(1e-13));
    }
  }
}

TEST_CASE("fuse with P=8 yields 128x128 row-stochastic correlation matrices") {
  ParameterStore<float> store(4);
  CftConfig cfg = small_config(16, 4, 2, 8);
  const auto params = make_cft_params(store, "cft.", cfg);
  Rng rng(21);
  std::vector<float> a(16 * 16 * 16), b(a.size());
  for (auto& v : a) v = static_cast<float>(rng.uniform(-2, 2));
  for (auto& v : b) v = static_cast<float>(rng.uniform(-2, 2));
  const auto out = fuse(Tensor<float>::from({16, 16, 16}, a), Tensor<float>::from({16, 16, 16}, b), cfg, params, true);
  CHECK(out.attention.size() == 2 * 4);
  for (const auto& m : out.attention) {
    REQUIRE(m.alpha.shape() == Shape{128, 128});
    for (std::size_t r = 0; r < 128; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 128; ++c) {
        const float v = m.alpha[r * 128 + c];
        CHECK((v >= 0.0f && v <= 1.0f));
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
  CHECK(out.delta_r.shape() == Shape{16, 16, 16});
  CHECK(out.delta_t.shape() == Shape{16, 16, 16});
}

TEST_CASE("zero-initialized output projection gives exactly zero deltas") {
  ParameterStore<float> store(8);
  const CftConfig cfg = small_config(8, 2, 3, 4);
  const auto params = make_cft_params(store, "cft.", cfg);
  Rng rng(3);
  std::vector<float> a(8 * 8 * 8);
  for (auto& v : a) v = static_cast<float>(rng.uniform(-5, 5));
  const auto f = Tensor<float>::from({8, 8, 8}, a);
  const auto out = fuse(f, f, cfg, params);
  for (float v : out.delta_r.data()) CHECK(v == 0.0f);
  for (float v : out.delta_t.data()) CHECK(v == 0.0f);
  const auto summed = add(f, out.delta_r);
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(summed[i] == f[i]);
}

TEST_CASE("swapping modalities with swapped embedding halves swaps the deltas") {
  ParameterStore<double> store(5);
  const CftConfig cfg = small_config(4, 2, 2, 2);
  auto params = make_cft_params(store, "cft.", cfg);
  randomize(store, 33);
  Rng rng(8);
  const auto fr = random_tensor(rng, {4, 4, 4}, -1, 1, false);
  const auto ft = random_tensor(rng, {4, 4, 4}, -1, 1, false);
  const auto out = fuse(fr, ft, cfg, params);

  auto swapped = params;
  const std::size_t n = 4;  // P^2 tokens per modality
  swapped.pos_embedding =
      concat0<double>({slice0(params.pos_embedding, n, 2 * n), slice0(params.pos_embedding, 0, n)}).detach();
  const auto back = fuse(ft, fr, cfg, swapped);
  for (std::size_t i = 0; i < out.delta_r.numel(); ++i) {
    CHECK(back.delta_t[i] == doctest::Approx(out.delta_r[i]).epsilon(1e-12));
    CHECK(back.delta_r[i] == doctest::Approx(out.delta_t[i]).epsilon(1e-12));
  }
}

TEST_CASE("fuse rejects mismatched modalities") {
  ParameterStore<double> store(5);
  const CftConfig cfg = small_config(4, 2, 1, 2);
  const auto params = make_cft_params(store, "cft.", cfg);
  CHECK_THROWS_AS(fuse(Tensor<double>::zeros({4, 4, 4}), Tensor<double>::zeros({4, 4, 2}), cfg, params),
                  DimensionError);
  CHECK_THROWS_AS(fuse(Tensor<double>::zeros({3, 4, 4}), Tensor<double>::zeros({3, 4, 4}), cfg, params),
                  DimensionError);
}

TEST_CASE("correlation blocks") {
  Rng rng(12);
  auto alpha = softmax(random_tensor(rng, {128, 128}, -3, 3, false), 1);
  const auto q = correlation_blocks(alpha);
  for (const auto* t : {&q.rr, &q.rt, &q.tr, &q.tt}) CHECK(t->shape() == Shape{64, 64});
  // RR spans (0,0)..(63,63); TT spans (64,64)..(127,127).
  CHECK(q.rr[0] == alpha[0]);
  CHECK(q.rr[63 * 64 + 63] == alpha[63 * 128 + 63]);
  CHECK(q.tt[0] == alpha[64 * 128 + 64]);
  CHECK(q.tt[63 * 64 + 63] == alpha[127 * 128 + 127]);
  CHECK(q.rt[5 * 64 + 7] == alpha[5 * 128 + 64 + 7]);
  CHECK(q.tr[5 * 64 + 7] == alpha[(64 + 5) * 128 + 7]);
  const auto whole = assemble_correlation(q);
  for (std::size_t i = 0; i < alpha.numel(); ++i) CHECK(whole[i] == alpha[i]);
  // Quadrant rows are not individually normalized.
  double rr_row = 0;
  for (std::size_t c = 0; c < 64; ++c) rr_row += q.rr[c];
  CHECK(rr_row < 1.0);
  CHECK_THROWS_AS(correlation_blocks(Tensor<double>::zeros({3, 3})), DimensionError);
  CHECK_THROWS_AS(correlation_blocks(Tensor<double>::zeros({4, 2})), DimensionError);
}

TEST_CASE("gradients reach the projections and the positional embedding") {
  for (bool layernorm : {false, true}) {
    for (bool literal : {false, true}) {
      CAPTURE(layernorm);
      CAPTURE(literal);
      ParameterStore<double> store(6);
      CftConfig cfg = small_config(4, 2, 2, 2);  // T = 8, C = 4
      cfg.use_layernorm = layernorm;
      cfg.paper_literal_heads = literal;
      const auto params = make_cft_params(store, "cft.", cfg);
      randomize(store, 44);
      Rng rng(10);
      const auto fr = random_tensor(rng, {4, 4, 4}, -1, 1, false);
      const auto ft = random_tensor(rng, {4, 4, 4}, -1, 1, false);
      std::vector<Tensor<double>> leaves;
      for (auto& p : store.all()) leaves.push_back(p.value);
      const auto r = gradcheck(leaves, [&] {
        const auto out = fuse(fr, ft, cfg, params);
        return add(weighted_sum(out.delta_r, 1), weighted_sum(out.delta_t, 2));
      });
      INFO("worst " << r.worst);
      CHECK(r.max_rel_err < kFdTolerance);
      for (const auto& b : params.blocks) {
        for (const auto* w : {&b.wq, &b.wk, &b.wv, &b.wo}) {
          double norm = 0;
          for (double g : w->grad()) norm += g * g;
          CHECK(norm > 0);
        }
      }
      double pe = 0;
      for (double g : params.pos_embedding.grad()) pe += g * g;
      CHECK(pe > 0);
    }
  }
}

TEST_CASE("residual magnitude report") {
  const auto f = Tensor<double>::full({2, 3, 3}, 1.0);
  CHECK(residual_magnitude_report(f, Tensor<double>::zeros({2, 3, 3})).ratio == 0.0);
  const auto r = residual_magnitude_report(f, Tensor<double>::full({2, 3, 3}, 0.01));
  CHECK(r.ratio == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(r.to_text().find("ratio=0.010000") != std::string::npos);
  CHECK_THROWS_AS(residual_magnitude_report(f, Tensor<double>::zeros({2, 3})), DimensionError);
}
