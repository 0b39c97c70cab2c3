#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "headline/attention.hpp"
#include "test_support.hpp"

using namespace headline;
using headline::testing::random_params;
using headline::testing::tiny_arch;

namespace {

std::vector<std::vector<double>> random_vectors(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0, 1);
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  for (auto& v : out)
    for (auto& x : v) x = g(rng);
  return out;
}

}  // namespace

TEST(AttentionWeights, SinglePositionIsOne) {
  const auto w = attention_weights<double>({{3, -1}}, {0.5, 7});
  ASSERT_EQ(w.weights.size(), 1u);
  EXPECT_EQ(w.weights[0], 1.0);
}

TEST(AttentionWeights, OrthogonalQueryIsUniform) {
  const auto w = attention_weights<double>({{1, 0}, {2, 0}, {-3, 0}}, {0, 1});
  for (double v : w.weights) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(AttentionWeights, HandCase) {
  const auto w = attention_weights<double>({{std::log(2.0)}, {0.0}}, {1.0});
  EXPECT_NEAR(w.weights[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w.weights[1], 1.0 / 3.0, 1e-15);
}

TEST(AttentionWeights, PermutationEquivariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto enc = random_vectors(6, 4, rng);
    const auto dec = random_vectors(1, 4, rng)[0];
    const auto w = attention_weights<double>(enc, dec);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<double>> shuffled;
    for (auto i : perm) shuffled.push_back(enc[i]);
    const auto ws = attention_weights<double>(shuffled, dec);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(ws.weights[k], w.weights[perm[k]], 1e-12);
  }
}

TEST(AttentionWeights, SharedOffsetLeavesWeightsUnchanged) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto enc = random_vectors(5, 3, rng);
    auto dec = random_vectors(1, 3, rng)[0];
    const auto w = attention_weights<double>(enc, dec);
    const double k = std::normal_distribution<double>(0, 3)(rng);
    for (auto& v : enc) v.push_back(k);
    dec.push_back(1.0);
    const auto w2 = attention_weights<double>(enc, dec);
    for (std::size_t t = 0; t < 5; ++t) EXPECT_NEAR(w.weights[t], w2.weights[t], 1e-12);
  }
}

TEST(Context, HandCases) {
  EXPECT_EQ(context<double>({{1, 0}, {0, 1}}, {{0.25, 0.75}}), (std::vector<double>{0.25, 0.75}));
  EXPECT_EQ(context<double>({{1, 2}, {3, 4}, {5, 6}}, {{0, 0, 1}}), (std::vector<double>{5, 6}));
  const auto v = context<double>({{0.3, -2}, {0.3, -2}, {0.3, -2}}, {{0.2, 0.5, 0.3}});
  EXPECT_NEAR(v[0], 0.3, 1e-15);
  EXPECT_NEAR(v[1], -2, 1e-15);
}

TEST(SplitState, Layouts) {
  const std::vector<double> h{1, 2, 3, 4};
  const auto s = split_state<double>(h, {AttentionMode::simple, 4, 1});
  EXPECT_EQ(std::vector<double>(s.attention.begin(), s.attention.end()), (std::vector<double>{1}));
  EXPECT_EQ(std::vector<double>(s.value.begin(), s.value.end()), (std::vector<double>{2, 3, 4}));

  const std::vector<double> h2{1, 2};
  const auto c = split_state<double>(h2, {AttentionMode::complex, 2, 0});
  EXPECT_EQ(c.attention.data(), c.value.data());
  EXPECT_EQ(c.value.size(), 2u);

  const std::vector<double> big(600, 0.0);
  const auto b = split_state<double>(big, {AttentionMode::simple, 600, 50});
  EXPECT_EQ(b.attention.size(), 50u);
  EXPECT_EQ(b.value.size(), 550u);
}

TEST(SplitState, RejectsBadSplit) {
  const std::vector<double> h{1, 2};
  EXPECT_THROW(split_state<double>(h, {AttentionMode::simple, 2, 2}), ContractError);
  EXPECT_THROW(split_state<double>(h, {AttentionMode::simple, 2, 0}), ContractError);
  EXPECT_THROW(parse_attention_mode("fancy"), ContractError);
}

TEST(AttentionBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const std::size_t n = 4, da = 3, dv = 2;
  std::vector<Tensor<double>> keys, values;
  for (std::size_t t = 0; t < n; ++t) {
    keys.emplace_back(std::vector<std::size_t>{da}, random_vectors(1, da, rng)[0]);
    values.emplace_back(std::vector<std::size_t>{dv}, random_vectors(1, dv, rng)[0]);
  }
  Tensor<double> query({da}, random_vectors(1, da, rng)[0]);
  const auto r = random_vectors(1, dv, rng)[0];

  auto views = [](std::vector<Tensor<double>>& ts) {
    std::vector<std::span<const double>> v;
    for (auto& t : ts) v.push_back(t.values());
    return v;
  };
  auto loss = [&] {
    const auto w = attention_scores_softmax<double>(views(keys), query.values());
    const auto c = attention_context<double>(views(values), w);
    return dot<double>(c, r);
  };
  auto grad = [&] {
    const auto w = attention_scores_softmax<double>(views(keys), query.values());
    std::vector<Tensor<double>> dk(n, Tensor<double>({da})), dvv(n, Tensor<double>({dv}));
    Tensor<double> dq({da});
    std::vector<std::span<double>> dks, dvs;
    for (auto& t : dk) dks.push_back(t.values());
    for (auto& t : dvv) dvs.push_back(t.values());
    attention_backward<double>(views(keys), views(values), query.values(), w, r, dks, dvs, dq.values());
    std::vector<Tensor<double>> out = dk;
    out.insert(out.end(), dvv.begin(), dvv.end());
    out.push_back(dq);
    return out;
  };
  std::vector<Tensor<double>*> params;
  for (auto& t : keys) params.push_back(&t);
  for (auto& t : values) params.push_back(&t);
  params.push_back(&query);
  EXPECT_LT(check_gradient(loss, grad, std::span<Tensor<double>* const>(params)).max_relative_error, 1e-7);
}

// In simple mode, the scoring units of encoder states reach the loss only
// through the attention weights; freezing the weights must silence them.
TEST(AttentionPaths, SimpleModeScoringUnitsOnlyAffectWeights) {
  auto arch = tiny_arch(AttentionMode::simple, 1, 5, 8, 4, 2);
  auto p = random_params<double>(arch, 3);
  const std::vector<TokenId> in{2, 5, 3, kEosId};
  const auto enc = encode<double>(in, p);
  const auto att = arch.attention();
  const AttentionMemory<double> mem(enc, att);
  const auto dec = decoder_step<double>(p, mem, enc.final_state(), kEosId);
  const auto query = split_state<double>(dec.state.back().h, att).attention;

  // Perturb the scoring part of one encoder state and recompute with the
  // weights held fixed: the context is unchanged.
  std::vector<std::vector<double>> tops;
  for (std::size_t t = 0; t < enc.length(); ++t) tops.emplace_back(enc.top(t).begin(), enc.top(t).end());
  auto perturbed = tops;
  perturbed[1][0] += 0.5;
  auto ctx_of = [&](const std::vector<std::vector<double>>& states, bool recompute_weights) {
    std::vector<std::span<const double>> k, v;
    for (const auto& s : states) {
      const auto parts = split_state<double>(s, att);
      k.push_back(parts.attention);
      v.push_back(parts.value);
    }
    const auto w = recompute_weights ? attention_scores_softmax<double>(k, query) : dec.weights;
    return attention_context<double>(v, w);
  };
  EXPECT_EQ(ctx_of(tops, false), ctx_of(perturbed, false));
  EXPECT_NE(ctx_of(tops, true), ctx_of(perturbed, true));

  // Perturbing the value part with the same weights changes the context,
  // but not the weights.
  auto perturbed_value = tops;
  perturbed_value[1][3] += 0.5;
  std::vector<std::span<const double>> k0, k1;
  for (std::size_t t = 0; t < tops.size(); ++t) {
    k0.push_back(split_state<double>(tops[t], att).attention);
    k1.push_back(split_state<double>(perturbed_value[t], att).attention);
  }
  EXPECT_EQ(attention_scores_softmax<double>(k0, query), attention_scores_softmax<double>(k1, query));
  EXPECT_NE(ctx_of(tops, false), ctx_of(perturbed_value, false));
}

TEST(AttentionModes, AgreeOnSingleInputPosition) {
  for (auto mode : {AttentionMode::simple, AttentionMode::complex}) {
    auto arch = tiny_arch(mode, 2, 6, 10, 6, 2);
    const auto p = random_params<double>(arch, 17);
    const std::vector<TokenId> in{kEosId};
    const auto enc = encode<double>(in, p);
    const AttentionMemory<double> mem(enc, arch.attention());
    const auto step = decoder_step<double>(p, mem, enc.final_state(), kEosId);
    ASSERT_EQ(step.weights.size(), 1u);
    EXPECT_EQ(step.weights[0], 1.0);
    const auto value = split_state<double>(enc.top(0), arch.attention()).value;
    EXPECT_EQ(step.context, std::vector<double>(value.begin(), value.end()));
  }
}
