// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "sparselm/error.hpp"
#include "sparselm/moe.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {
namespace {

std::vector<double> randn(std::size_t n, Rng& rng, double s = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = s * rng.normal();
  return v;
}

std::vector<ExpertParams> make_experts(std::size_t e, std::size_t m, std::size_t h, Rng& rng) {
  std::vector<ExpertParams> out;
  for (std::size_t i = 0; i < e; ++i) {
    out.push_back({Tensor::parameter({m, h}, randn(m * h, rng, 0.5)),
                   Tensor::parameter({h, m}, randn(h * m, rng, 0.5))});
  }
  return out;
}

// Plain-loop reference for one expert on one token.
std::vector<double> expert_oracle(const std::vector<double>& x, const ExpertParams& p) {
  const std::size_t m = p.w_in.dim(0), h = p.w_in.dim(1);
  std::vector<double> hidden(h, 0.0), out(m, 0.0);
  for (std::size_t j = 0; j < h; ++j) {
    for (std::size_t i = 0; i < m; ++i) hidden[j] += x[i] * p.w_in.data()[i * h + j];
    hidden[j] = 0.5 * hidden[j] * (1.0 + std::erf(hidden[j] / std::sqrt(2.0)));
  }
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) out[i] += hidden[j] * p.w_out.data()[j * m + i];
  return out;
}

struct OracleResult {
  std::vector<double> output;
  std::size_t dropped = 0;
  std::vector<std::size_t> rejected_per_expert;
};

// Token-order capacity simulation written directly from the routing rules.
OracleResult moe_oracle(const Tensor& tokens, const std::vector<ExpertParams>& experts, const Tensor& gate,
                        std::size_t capacity) {
  const std::size_t t_count = tokens.dim(0), m = tokens.dim(1), e_count = experts.size();
  OracleResult r;
  r.output.assign(t_count * m, 0.0);
  r.rejected_per_expert.assign(e_count, 0);
  std::vector<std::size_t> load(e_count, 0);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::vector<double> x(tokens.data().begin() + t * m, tokens.data().begin() + (t + 1) * m);
    std::vector<double> logits(e_count, 0.0);
    for (std::size_t e = 0; e < e_count; ++e)
      for (std::size_t i = 0; i < m; ++i) logits[e] += x[i] * gate.data()[i * e_count + e];
    std::vector<std::size_t> idx(e_count);
    for (std::size_t e = 0; e < e_count; ++e) idx[e] = e;
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
    const std::size_t picks = e_count == 1 ? 1 : 2;
    double z = 0;
    for (std::size_t k = 0; k < picks; ++k) z += std::exp(logits[idx[k]]);
    bool any = false;
    for (std::size_t k = 0; k < picks; ++k) {
      const std::size_t e = idx[k];
      if (load[e] >= capacity) {
        ++r.rejected_per_expert[e];
        continue;
      }
      ++load[e];
      any = true;
      const double w = std::exp(logits[e]) / z;
      const auto y = expert_oracle(x, experts[e]);
      for (std::size_t i = 0; i < m; ++i) r.output[t * m + i] += w * y[i];
    }
    if (!any) {
      ++r.dropped;
      for (std::size_t i = 0; i < m; ++i) r.output[t * m + i] = x[i];
    }
  }
  return r;
}

TEST(GateTop2, KnownLogits) {
  // A one-hot token picks a row of the gate matrix as the logits.
  Tensor gate = Tensor::constant({1, 4}, {2, 1, 0, -1});
  const double x[] = {1.0};
  const GateDecision d = gate_top2(x, gate);
  EXPECT_EQ(d.expert_indices[0], 0u);
  EXPECT_EQ(d.expert_indices[1], 1u);
  const double e2 = std::exp(2.0), e1 = std::exp(1.0);
  EXPECT_NEAR(d.combine_weights[0], e2 / (e2 + e1), 1e-12);
  EXPECT_NEAR(d.combine_weights[1], e1 / (e2 + e1), 1e-12);
  EXPECT_NEAR(d.combine_weights[0], 0.7311, 1e-4);
  EXPECT_NEAR(d.combine_weights[1], 0.2689, 1e-4);
}

TEST(GateTop2, UniformTieBreak) {
  const double x[] = {1.0};
  const GateDecision d = gate_top2(x, Tensor::zeros({1, 4}));
  EXPECT_EQ(d.expert_indices[0], 0u);
  EXPECT_EQ(d.expert_indices[1], 1u);
  EXPECT_DOUBLE_EQ(d.combine_weights[0], 0.5);
  EXPECT_DOUBLE_EQ(d.combine_weights[1], 0.5);
}

TEST(GateTop2, SingleExpert) {
  const double x[] = {0.3, -1.0};
  const GateDecision d = gate_top2(x, Tensor::constant({2, 1}, {5, 5}));
  EXPECT_EQ(d.expert_indices[0], 0u);
  EXPECT_EQ(d.expert_indices[1], 0u);
  EXPECT_EQ(d.combine_weights[0], 1.0);
  EXPECT_EQ(d.combine_weights[1], 0.0);
}

TEST(GateTop2, DecisionInvariants) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t e = 2 + rng.below(7);
    const auto x = randn(3, rng);
    const GateDecision d = gate_top2(x, Tensor::constant({3, e}, randn(3 * e, rng)));
    EXPECT_NE(d.expert_indices[0], d.expert_indices[1]);
    EXPECT_GE(d.gate_probs[d.expert_indices[0]], d.gate_probs[d.expert_indices[1]]);
    EXPECT_GE(d.combine_weights[0], 0.0);
    EXPECT_GE(d.combine_weights[1], 0.0);
    EXPECT_NEAR(d.combine_weights[0] + d.combine_weights[1], 1.0, 1e-12);
    for (std::size_t k = 0; k < e; ++k) {
      if (k == d.expert_indices[0] || k == d.expert_indices[1]) continue;
      EXPECT_LE(d.gate_probs[k], d.gate_probs[d.expert_indices[1]]);
    }
  }
}

TEST(Capacity, Formula) {
  EXPECT_EQ(expert_capacity(4, 2, 1.0), 4u);
  EXPECT_EQ(expert_capacity(10, 4, 1.25), 7u);  // ceil(6.25)
  EXPECT_EQ(expert_capacity(3, 8, 1.0), 1u);
  EXPECT_THROW(expert_capacity(4, 2, 0.5), ConfigError);
}

TEST(MoeForward, SingleExpertIsDense) {
  Rng rng(2);
  auto experts = make_experts(1, 4, 6, rng);
  Tensor x = Tensor::constant({5, 4}, randn(20, rng));
  MoeOptions opt;
  opt.capacity_factor = 100;
  const MoeOutput out = moe_forward(x, experts, Tensor::constant({4, 1}, randn(4, rng)), opt);
  const Tensor direct = expert_ffn(x, experts[0]);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(out.output.data()[i], direct.data()[i]);
  EXPECT_EQ(out.stats.dropped_tokens, 0u);
}

TEST(MoeForward, EqualExpertsCombineConvexly) {
  // Experts are fixed GELU FFNs, so the identity case becomes equal experts:
  // weights summing to 1 must reproduce a single expert's output.
  Rng rng(3);
  auto one = make_experts(1, 3, 5, rng);
  std::vector<ExpertParams> experts(4, one[0]);
  Tensor x = Tensor::constant({6, 3}, randn(18, rng));
  MoeOptions opt;
  opt.capacity_factor = 8;
  const MoeOutput out = moe_forward(x, experts, Tensor::constant({3, 4}, randn(12, rng)), opt);
  const Tensor direct = expert_ffn(x, one[0]);
  for (std::size_t i = 0; i < 18; ++i) EXPECT_NEAR(out.output.data()[i], direct.data()[i], 1e-12);
}

TEST(MoeForward, AllTokensDroppedPassThrough) {
  Rng rng(4);
  auto experts = make_experts(2, 3, 4, rng);
  Tensor x = Tensor::constant({4, 3}, randn(12, rng));
  MoeOptions opt;
  opt.capacity = 0;
  const MoeOutput out = moe_forward(x, experts, Tensor::constant({3, 2}, randn(6, rng)), opt);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(out.output.data()[i], x.data()[i]);
  EXPECT_EQ(out.stats.dropped_tokens, 4u);
}

TEST(MoeForward, NoDropsAtDefaultCapacity) {
  Rng rng(6);
  auto experts = make_experts(2, 3, 4, rng);
  Tensor x = Tensor::constant({4, 3}, randn(12, rng));
  MoeOptions opt;
  opt.capacity_factor = 1.0;
  const Tensor gate = Tensor::constant({3, 2}, randn(6, rng));
  const MoeOutput out = moe_forward(x, experts, gate, opt);
  EXPECT_EQ(out.stats.dropped_tokens, 0u);
  const OracleResult oracle = moe_oracle(x, experts, gate, 4);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out.output.data()[i], oracle.output[i], 1e-12);
}

TEST(MoeForward, CapacityOneMatchesExhaustiveOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto experts = make_experts(2, 3, 4, rng);
    Tensor x = Tensor::constant({4, 3}, randn(12, rng));
    const Tensor gate = Tensor::constant({3, 2}, randn(6, rng, 2.0));
    MoeOptions opt;
    opt.capacity = 1;
    const MoeOutput out = moe_forward(x, experts, gate, opt);
    const OracleResult oracle = moe_oracle(x, experts, gate, 1);
    EXPECT_EQ(out.stats.dropped_tokens, oracle.dropped);
    // With E=2 every token assigns once to each expert, so each expert
    // rejects assigned - 1 = 3 assignments.
    EXPECT_EQ(oracle.rejected_per_expert, (std::vector<std::size_t>{3, 3}));
    for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(out.output.data()[i], oracle.output[i], 1e-12);
  }
}

TEST(MoeForward, PartialSumMatchesOracleOnRandomInstances) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t e = 1 + rng.below(4), t = 1 + rng.below(16), m = 1 + rng.below(4);
    auto experts = make_experts(e, m, 3, rng);
    Tensor x = Tensor::constant({t, m}, randn(t * m, rng));
    const Tensor gate = Tensor::constant({m, e}, randn(m * e, rng, 2.0));
    MoeOptions opt;
    opt.capacity = rng.below(t + 1);
    const MoeOutput out = moe_forward(x, experts, gate, opt);
    const OracleResult oracle = moe_oracle(x, experts, gate, *opt.capacity);
    EXPECT_EQ(out.stats.dropped_tokens, oracle.dropped);
    for (std::size_t i = 0; i < t * m; ++i) EXPECT_NEAR(out.output.data()[i], oracle.output[i], 1e-10);
  }
}

TEST(MoeForward, RejectsSmallCapacityFactor) {
  Rng rng(1);
  auto experts = make_experts(2, 2, 2, rng);
  MoeOptions opt;
  opt.capacity_factor = 0.9;
  EXPECT_THROW(moe_forward(Tensor::zeros({2, 2}), experts, Tensor::zeros({2, 2}), opt), ConfigError);
}

TEST(MoeForward, StatsInvariants) {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t e = 2 + rng.below(5), t = 1 + rng.below(20);
    auto experts = make_experts(e, 3, 2, rng);
    const MoeOutput out =
        moe_forward(Tensor::constant({t, 3}, randn(t * 3, rng)), experts, Tensor::constant({3, e}, randn(3 * e, rng)));
    std::size_t total = 0;
    for (auto c : out.stats.tokens_per_expert) total += c;
    EXPECT_EQ(total, out.stats.total_tokens);
    double msum = 0;
    for (double m : out.stats.mean_gate_prob.data()) {
      EXPECT_GE(m, 0.0);
      EXPECT_LE(m, 1.0);
      msum += m;
    }
    EXPECT_NEAR(msum, 1.0, 1e-9);
  }
}

TEST(MoeForward, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  auto experts = make_experts(3, 3, 4, rng);
  Tensor x = Tensor::parameter({5, 3}, randn(15, rng));
  Tensor gate = Tensor::parameter({3, 3}, randn(9, rng));
  std::vector<Tensor> params = {x, gate};
  for (auto& ex : experts) {
    params.push_back(ex.w_in);
    params.push_back(ex.w_out);
  }
  auto f = [&] {
    const MoeOutput out = moe_forward(x, experts, gate);
    return add(sum(mul(out.output, out.output)), aux_load_balance_loss(out.stats));
  };
  EXPECT_LT(grad_check(f, params, 1e-5), 1e-4);
}

TEST(MoeForward, UnselectedExpertHasZeroGradient) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto experts = make_experts(4, 3, 4, rng);
    Tensor x = Tensor::constant({3, 3}, randn(9, rng));
    Tensor gate = Tensor::parameter({3, 4}, randn(12, rng, 2.0));
    const MoeOutput out = moe_forward(x, experts, gate);
    sum(mul(out.output, out.output)).backward();
    std::vector<bool> used(4, false);
    for (std::size_t t = 0; t < 3; ++t) {
      const std::vector<double> row(x.data().begin() + 3 * t, x.data().begin() + 3 * t + 3);
      const GateDecision d = gate_top2(row, gate);
      used[d.expert_indices[0]] = used[d.expert_indices[1]] = true;
    }
    for (std::size_t e = 0; e < 4; ++e) {
      if (used[e]) continue;
      for (double g : experts[e].w_in.grad()) EXPECT_EQ(g, 0.0);
      for (double g : experts[e].w_out.grad()) EXPECT_EQ(g, 0.0);
      // Perturbing the unused expert leaves the output unchanged.
      experts[e].w_in.mutable_data()[0] += 1.0;
      const MoeOutput again = moe_forward(x, experts, gate);
      for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(again.output.data()[i], out.output.data()[i]);
    }
  }
}

DispatchStats stats_from(std::vector<std::size_t> counts, std::vector<double> m) {
  DispatchStats s;
  s.total_tokens = 0;
  for (auto c : counts) s.total_tokens += c;
  s.tokens_per_expert = std::move(counts);
  const std::size_t e = m.size();
  s.mean_gate_prob = Tensor::constant({e}, std::move(m));
  return s;
}

TEST(AuxLoss, KnownValues) {
  EXPECT_NEAR(aux_load_balance_loss(stats_from({2, 2, 2, 2}, {0.25, 0.25, 0.25, 0.25})).item(), 1.0, 1e-12);
  EXPECT_NEAR(aux_load_balance_loss(stats_from({8, 0, 0, 0}, {1, 0, 0, 0})).item(), 4.0, 1e-12);
  EXPECT_NEAR(aux_load_balance_loss(stats_from({3, 1}, {0.75, 0.25})).item(), 1.25, 1e-12);
}

TEST(AuxLoss, ImbalanceExceedsMinimum) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t e = 2 + rng.below(7);
    std::vector<std::size_t> counts(e);
    std::size_t total = 0;
    for (auto& c : counts) total += (c = 1 + rng.below(20));
    bool balanced = std::all_of(counts.begin(), counts.end(), [&](auto c) { return c == counts[0]; });
    std::vector<double> m(e);
    for (std::size_t i = 0; i < e; ++i) m[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    const double loss = aux_load_balance_loss(stats_from(counts, m)).item();
    if (balanced) {
      EXPECT_NEAR(loss, 1.0, 1e-12);
    } else {
      EXPECT_GT(loss, 1.0);
    }
  }
}

TEST(AuxLoss, BalancedCountsKeepMinimumForAnyM) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> m(4);
    double z = 0;
    for (auto& v : m) z += (v = rng.uniform() + 0.01);
    for (auto& v : m) v /= z;
    EXPECT_NEAR(aux_load_balance_loss(stats_from({5, 5, 5, 5}, m)).item(), 1.0, 1e-12);
  }
}

TEST(AuxLoss, GradientFlowsOnlyThroughMeanProb) {
  DispatchStats s = stats_from({3, 1}, {0.75, 0.25});
  Tensor m = Tensor::parameter({2}, {0.75, 0.25});
  s.mean_gate_prob = m;
  aux_load_balance_loss(s).backward();
  EXPECT_DOUBLE_EQ(m.grad()[0], 2 * 0.75);
  EXPECT_DOUBLE_EQ(m.grad()[1], 2 * 0.25);
}

}  // namespace
}  // namespace sparselm
