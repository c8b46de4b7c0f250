// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sparselm/error.hpp"

namespace sparselm {

Tensor expert_ffn(const Tensor& x, const ExpertParams& expert) {
  return matmul(gelu(matmul(x, expert.w_in)), expert.w_out);
}

GateDecision select_top2(std::span<const double> gate_probs) {
  if (gate_probs.empty()) throw ConfigError("gate distribution over zero experts");
  GateDecision d;
  d.gate_probs.assign(gate_probs.begin(), gate_probs.end());
  if (gate_probs.size() == 1) {
    d.expert_indices = {0, 0};
    d.combine_weights = {1.0, 0.0};
    return d;
  }
  std::size_t first = 0;
  for (std::size_t e = 1; e < gate_probs.size(); ++e)
    if (gate_probs[e] > gate_probs[first]) first = e;
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t e = 0; e < gate_probs.size(); ++e)
    if (e != first && gate_probs[e] > gate_probs[second]) second = e;
  const double total = gate_probs[first] + gate_probs[second];
  d.expert_indices = {first, second};
  d.combine_weights = {gate_probs[first] / total, gate_probs[second] / total};
  return d;
}

GateDecision gate_top2(std::span<const double> x, const Tensor& gate_weights) {
  if (gate_weights.rank() != 2 || gate_weights.dim(0) != x.size()) {
    throw DimensionError("gate_top2: token of length " + std::to_string(x.size()) +
                         " incompatible with gate weights " + shape_str(gate_weights.shape()));
  }
  NoGradGuard guard;
  const Tensor row = Tensor::constant({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  const Tensor probs = softmax(matmul(row, gate_weights), 1);
  return select_top2(probs.data());
}

double DispatchStats::load_fraction(std::size_t expert) const {
  return static_cast<double>(tokens_per_expert.at(expert)) / static_cast<double>(total_tokens);
}

double DispatchStats::max_load_fraction() const {
  double best = 0.0;
  for (std::size_t e = 0; e < tokens_per_expert.size(); ++e) best = std::max(best, load_fraction(e));
  return best;
}

std::size_t expert_capacity(std::size_t tokens, std::size_t experts, double capacity_factor) {
  if (!(capacity_factor >= 1.0)) {
    throw ConfigError("capacity_factor must be >= 1, got " + std::to_string(capacity_factor));
  }
  const double c = std::ceil(capacity_factor * 2.0 * static_cast<double>(tokens) /
                             static_cast<double>(experts));
  return static_cast<std::size_t>(c);
}

Routing route_tokens(std::span<const double> gate_probs, std::size_t num_experts,
                     std::size_t capacity, std::span<const std::size_t> priority) {
  if (num_experts == 0 || gate_probs.size() % num_experts != 0) {
    throw DimensionError("route_tokens: gate probabilities not a multiple of expert count");
  }
  const std::size_t tokens = gate_probs.size() / num_experts;
  std::vector<std::size_t> order(priority.begin(), priority.end());
  if (order.empty()) {
    order.resize(tokens);
    std::iota(order.begin(), order.end(), 0);
  }
  if (order.size() != tokens) throw DimensionError("route_tokens: priority order has wrong length");

  Routing r;
  r.capacity = capacity;
  r.decisions.reserve(tokens);
  for (std::size_t t = 0; t < tokens; ++t)
    r.decisions.push_back(select_top2(gate_probs.subspan(t * num_experts, num_experts)));
  r.kept.assign(tokens, {false, false});
  r.admitted.resize(num_experts);
  // A single expert is selected once with weight 1; the second slot is empty.
  const std::size_t slots = num_experts == 1 ? 1 : 2;
  for (std::size_t t : order) {
    for (std::size_t s = 0; s < slots; ++s) {
      const std::size_t e = r.decisions[t].expert_indices[s];
      if (r.admitted[e].size() < capacity) {
        r.admitted[e].emplace_back(t, s);
        r.kept[t][s] = true;
      }
    }
  }
  for (std::size_t t = 0; t < tokens; ++t)
    if (!r.kept[t][0] && !r.kept[t][1]) ++r.dropped_tokens;
  return r;
}

namespace {

// Renormalized top-2 weights [T x 2], differentiable through `probs` [T x E].
Tensor combine_weights(const Tensor& probs, const std::vector<GateDecision>& decisions) {
  const std::size_t tokens = probs.dim(0), experts = probs.dim(1);
  std::vector<double> out(tokens * 2);
  for (std::size_t t = 0; t < tokens; ++t) {
    out[2 * t] = decisions[t].combine_weights[0];
    out[2 * t + 1] = decisions[t].combine_weights[1];
  }
  std::vector<std::array<std::size_t, 2>> picks;
  picks.reserve(tokens);
  for (const auto& d : decisions) picks.push_back(d.expert_indices);
  return make_op({tokens, 2}, std::move(out), {probs},
                 [probs, picks = std::move(picks), experts](std::span<const double> g,
                                                            std::vector<std::span<double>>& d) {
                   if (experts == 1) return;
                   auto p = probs.data();
                   for (std::size_t t = 0; t < picks.size(); ++t) {
                     const std::size_t i = t * experts + picks[t][0];
                     const std::size_t j = t * experts + picks[t][1];
                     const double s = p[i] + p[j];
                     const double s2 = s * s;
                     const double g0 = g[2 * t], g1 = g[2 * t + 1];
                     // w0 = p_i / s, w1 = p_j / s
                     d[0][i] += (g0 * p[j] - g1 * p[j]) / s2;
                     d[0][j] += (g1 * p[i] - g0 * p[i]) / s2;
                   }
                 });
}

}  // namespace

MoeOutput moe_forward(const Tensor& tokens, std::span<const ExpertParams> experts,
                      const Tensor& gate_weights, const MoeOptions& options) {
  if (!(options.capacity_factor >= 1.0)) {
    throw ConfigError("capacity_factor must be >= 1, got " + std::to_string(options.capacity_factor));
  }
  if (tokens.rank() != 2 || tokens.dim(0) == 0) {
    throw DimensionError("moe_forward: expected [T x M] tokens with T >= 1, got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t num_experts = experts.size();
  if (num_experts == 0 || gate_weights.rank() != 2 || gate_weights.dim(1) != num_experts ||
      gate_weights.dim(0) != tokens.dim(1)) {
    throw DimensionError("moe_forward: gate weights " + shape_str(gate_weights.shape()) +
                         " incompatible with " + std::to_string(num_experts) + " experts and tokens " +
                         shape_str(tokens.shape()));
  }
  const std::size_t num_tokens = tokens.dim(0), width = tokens.dim(1);

  const Tensor probs = softmax(matmul(tokens, gate_weights), 1);
  const std::size_t capacity =
      options.capacity.value_or(expert_capacity(num_tokens, num_experts, options.capacity_factor));
  Routing routing = route_tokens(probs.data(), num_experts, capacity, options.priority);
  const Tensor weights = combine_weights(probs, routing.decisions);

  std::vector<Tensor> contributions;
  std::vector<std::size_t> destinations;
  for (std::size_t e = 0; e < num_experts; ++e) {
    const auto& admitted = routing.admitted[e];
    if (admitted.empty()) continue;
    std::vector<std::size_t> rows, weight_index;
    rows.reserve(admitted.size());
    for (const auto& [t, slot] : admitted) {
      rows.push_back(t);
      weight_index.push_back(2 * t + slot);
    }
    const Tensor y = expert_ffn(gather_rows(tokens, rows), experts[e]);
    const Tensor w = gather_elements(weights, weight_index, {rows.size()});
    contributions.push_back(scale_rows(y, w));
    destinations.insert(destinations.end(), rows.begin(), rows.end());
  }

  std::vector<std::size_t> dropped;
  for (std::size_t t = 0; t < num_tokens; ++t)
    if (!routing.kept[t][0] && !routing.kept[t][1]) dropped.push_back(t);

  Tensor output = Tensor::zeros({num_tokens, width});
  if (!dropped.empty()) output = scatter_add_rows(output, gather_rows(tokens, dropped), dropped);
  if (!contributions.empty()) output = scatter_add_rows(output, concat_rows(contributions), destinations);

  DispatchStats stats;
  stats.tokens_per_expert.assign(num_experts, 0);
  for (const auto& d : routing.decisions) ++stats.tokens_per_expert[d.expert_indices[0]];
  stats.mean_gate_prob = mean_rows(probs);
  stats.dropped_tokens = routing.dropped_tokens;
  stats.total_tokens = num_tokens;
  return {std::move(output), std::move(stats)};
}

Tensor aux_load_balance_loss(const DispatchStats& stats) {
  if (stats.total_tokens == 0) throw ConfigError("aux loss over an empty batch");
  const std::size_t experts = stats.num_experts();
  std::vector<double> fractions(experts);
  for (std::size_t e = 0; e < experts; ++e) fractions[e] = stats.load_fraction(e);
  const Tensor f = Tensor::constant({experts}, std::move(fractions));
  return scale(sum(mul(f, stats.mean_gate_prob)), static_cast<double>(experts));
}

}  // namespace sparselm
