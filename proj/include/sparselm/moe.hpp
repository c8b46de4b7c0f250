// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sparsely activated mixture-of-experts feed-forward layer with top-2 gating,
// capacity-bounded dispatch and the load-balancing auxiliary loss.

#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sparselm/tensor.hpp"

namespace sparselm {

inline constexpr double kDefaultCapacityFactor = 1.25;

// One expert: x -> GELU(x W_in) W_out with W_in [M x H] and W_out [H x M].
struct ExpertParams {
  Tensor w_in;
  Tensor w_out;
};

Tensor expert_ffn(const Tensor& x, const ExpertParams& expert);

struct GateDecision {
  std::array<std::size_t, 2> expert_indices{};
  std::array<double, 2> combine_weights{};
  std::vector<double> gate_probs;
};

// Top-2 selection over an already-normalized gate distribution. Ties go to
// the lower index. With a single expert both slots hold expert 0 and the
// weights are (1, 0).
GateDecision select_top2(std::span<const double> gate_probs);

// gate_probs = softmax(x^T gate_weights), then select_top2. `x` has length M,
// `gate_weights` is [M x E].
GateDecision gate_top2(std::span<const double> x, const Tensor& gate_weights);

struct DispatchStats {
  // Top-1 assignments per expert, counted before capacity limits apply.
  std::vector<std::size_t> tokens_per_expert;
  // Mean gate probability per expert, shape [E]; differentiable.
  Tensor mean_gate_prob;
  // Tokens that lost both of their experts to capacity limits.
  std::size_t dropped_tokens = 0;
  std::size_t total_tokens = 0;

  std::size_t num_experts() const { return tokens_per_expert.size(); }
  double load_fraction(std::size_t expert) const;
  double max_load_fraction() const;
};

// C = ceil(capacity_factor * 2T / E).
std::size_t expert_capacity(std::size_t tokens, std::size_t experts, double capacity_factor);

// Capacity-aware dispatch plan. Assignments are admitted token by token in
// `priority` order, first slot before second slot of the same token, so a
// token's admission depends only on tokens ahead of it in that order.
struct Routing {
  std::size_t capacity = 0;
  std::vector<GateDecision> decisions;
  std::vector<std::array<bool, 2>> kept;
  // Per expert: admitted (token, slot) pairs in admission order.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> admitted;
  std::size_t dropped_tokens = 0;
};

Routing route_tokens(std::span<const double> gate_probs, std::size_t num_experts,
                     std::size_t capacity, std::span<const std::size_t> priority = {});

struct MoeOptions {
  double capacity_factor = kDefaultCapacityFactor;
  // Replaces the capacity derived from capacity_factor when set.
  std::optional<std::size_t> capacity;
  // Admission order over tokens; identity when empty.
  std::span<const std::size_t> priority;
};

struct MoeOutput {
  Tensor output;
  DispatchStats stats;
};

// Routes each row of `tokens` [T x M] to its top-2 experts and returns the
// weighted combination of their outputs. An assignment rejected by a full
// expert contributes nothing and the remaining weight is not renormalized;
// a token rejected by both experts is passed through unchanged.
// Throws ConfigError when capacity_factor < 1.
MoeOutput moe_forward(const Tensor& tokens, std::span<const ExpertParams> experts,
                      const Tensor& gate_weights, const MoeOptions& options = {});

// E * sum_e f_e * m_e with f_e = tokens_per_expert[e] / total_tokens held
// constant and m_e = mean_gate_prob[e] differentiable.
Tensor aux_load_balance_loss(const DispatchStats& stats);

}  // namespace sparselm
