// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/shardplan.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sparselm/error.hpp"

namespace sparselm {

std::size_t box_volume(const Box& box) {
  std::size_t v = 1;
  for (const auto& r : box) v *= r.size();
  return v;
}

const TensorShard& ShardPlan::tensor(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ConfigError("plan has no tensor named " + name);
}

namespace {

void require_divisible(std::size_t dim, const char* dim_name, std::size_t axis, const char* axis_name) {
  if (axis == 0 || dim % axis != 0) {
    throw PlanningError(std::string(dim_name) + "=" + std::to_string(dim) + " is not divisible by mesh " +
                        axis_name + "=" + std::to_string(axis));
  }
}

Range block(std::size_t index, std::size_t size) { return {index * size, (index + 1) * size}; }

// Expert weights [E, a, b] with E over X and the hidden axis (1 or 2) over Y.
TensorShard expert_tensor(std::string name, const Mesh& mesh, std::size_t e, std::size_t a, std::size_t b,
                          std::size_t hidden_axis) {
  TensorShard t{std::move(name), {e, a, b}, {}};
  const std::size_t per_x = e / mesh.x;
  const std::size_t hidden = hidden_axis == 1 ? a : b;
  const std::size_t per_y = hidden / mesh.y;
  for (std::size_t i = 0; i < mesh.x; ++i) {
    for (std::size_t j = 0; j < mesh.y; ++j) {
      Box box = {block(i, per_x), {0, a}, {0, b}};
      box[hidden_axis] = block(j, per_y);
      t.boxes.push_back({mesh.device_id(i, j), std::move(box)});
    }
  }
  return t;
}

}  // namespace

ShardPlan plan(const ModelConfig& config, Mesh mesh) {
  if (mesh.x == 0 || mesh.y == 0) throw PlanningError("mesh axes must be >= 1");
  ShardPlan p;
  p.mesh = mesh;
  p.num_experts = config.num_experts;
  p.model_dim = config.model_dim;
  p.hidden_dim = config.hidden_dim;
  p.batch = config.batch_size;
  p.seq = config.seq_len;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    if (config.is_moe_layer(l)) ++p.moe_layers;
  }

  const std::size_t E = config.num_experts, M = config.model_dim, H = config.hidden_dim;
  const std::size_t B = config.batch_size, S = config.seq_len;
  if (p.moe_layers > 0) {
    if (E < mesh.x) {
      throw PlanningError("E=" + std::to_string(E) + " is smaller than mesh X=" + std::to_string(mesh.x) +
                          " and expert replication is disallowed");
    }
    require_divisible(E, "E", mesh.x, "X");
    require_divisible(H, "H", mesh.y, "Y");
  }
  require_divisible(M, "M", mesh.y, "Y");

  // Activations: B over X, or each batch row split along S when B < X.
  TensorShard act{"activations", {B, S, M}, {}};
  const std::size_t per_m = M / mesh.y;
  if (B % mesh.x == 0) {
    const std::size_t per_b = B / mesh.x;
    for (std::size_t i = 0; i < mesh.x; ++i) {
      for (std::size_t j = 0; j < mesh.y; ++j) {
        act.boxes.push_back({mesh.device_id(i, j), {block(i, per_b), {0, S}, block(j, per_m)}});
      }
    }
  } else if (mesh.x % B == 0) {
    const std::size_t split = mesh.x / B;
    require_divisible(S, "S", split, "X/B");
    const std::size_t per_s = S / split;
    for (std::size_t i = 0; i < mesh.x; ++i) {
      for (std::size_t j = 0; j < mesh.y; ++j) {
        act.boxes.push_back(
            {mesh.device_id(i, j), {block(i / split, 1), block(i % split, per_s), block(j, per_m)}});
      }
    }
  } else {
    throw PlanningError("B=" + std::to_string(B) + " and mesh X=" + std::to_string(mesh.x) +
                        " do not divide one another");
  }

  // Expert e lives on mesh row x = e / (E / X) in every MoE layer.
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    if (!config.is_moe_layer(l)) continue;
    const std::string prefix = "layers." + std::to_string(l) + ".moe.";
    p.tensors.push_back(expert_tensor(prefix + "w_in", mesh, E, M, H, 2));
    p.tensors.push_back(expert_tensor(prefix + "w_out", mesh, E, H, M, 1));
  }
  p.tensors.push_back(std::move(act));
  return p;
}

namespace {

constexpr std::size_t kMaxViolations = 32;

void check_exhaustive(const TensorShard& t, ValidationReport& report) {
  const std::size_t total = shape_numel(t.shape);
  std::vector<std::uint32_t> cover(total, 0);
  const std::size_t rank = t.shape.size();
  for (const auto& db : t.boxes) {
    if (box_volume(db.box) == 0) continue;
    std::vector<std::size_t> idx(rank);
    for (std::size_t d = 0; d < rank; ++d) idx[d] = db.box[d].begin;
    while (true) {
      std::size_t flat = 0;
      for (std::size_t d = 0; d < rank; ++d) flat = flat * t.shape[d] + idx[d];
      ++cover[flat];
      bool advanced = false;
      for (std::size_t d = rank; d-- > 0;) {
        if (++idx[d] < db.box[d].end) {
          advanced = true;
          break;
        }
        idx[d] = db.box[d].begin;
      }
      if (!advanced) break;
    }
  }
  for (std::size_t flat = 0; flat < total && report.violations.size() < kMaxViolations; ++flat) {
    if (cover[flat] == 1) continue;
    Box where(rank);
    std::size_t rem = flat;
    for (std::size_t d = rank; d-- > 0;) {
      const std::size_t c = rem % t.shape[d];
      rem /= t.shape[d];
      where[d] = {c, c + 1};
    }
    report.violations.push_back({t.name, cover[flat] == 0 ? "gap" : "overlap", std::move(where)});
  }
}

void check_compressed(const TensorShard& t, ValidationReport& report) {
  const std::size_t rank = t.shape.size();
  std::vector<std::vector<std::size_t>> cuts(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    std::set<std::size_t> s = {0, t.shape[d]};
    for (const auto& db : t.boxes) {
      s.insert(db.box[d].begin);
      s.insert(db.box[d].end);
    }
    cuts[d].assign(s.begin(), s.end());
  }
  std::vector<std::size_t> cell(rank, 0);
  while (report.violations.size() < kMaxViolations) {
    Box region(rank);
    for (std::size_t d = 0; d < rank; ++d) region[d] = {cuts[d][cell[d]], cuts[d][cell[d] + 1]};
    std::size_t hits = 0;
    for (const auto& db : t.boxes) {
      bool inside = true;
      for (std::size_t d = 0; d < rank && inside; ++d) {
        inside = db.box[d].begin <= region[d].begin && region[d].end <= db.box[d].end;
      }
      if (inside) ++hits;
    }
    if (hits != 1) report.violations.push_back({t.name, hits == 0 ? "gap" : "overlap", region});
    std::size_t d = rank;
    bool done = true;
    while (d-- > 0) {
      if (++cell[d] + 1 < cuts[d].size()) {
        done = false;
        break;
      }
      cell[d] = 0;
    }
    if (done) break;
  }
}

}  // namespace

ValidationReport validate(const ShardPlan& plan, std::size_t exhaustive_limit) {
  ValidationReport report;
  for (const auto& t : plan.tensors) {
    bool in_bounds = true;
    for (const auto& db : t.boxes) {
      bool ok = db.box.size() == t.shape.size() && db.device < plan.mesh.devices();
      for (std::size_t d = 0; ok && d < t.shape.size(); ++d) {
        ok = db.box[d].begin <= db.box[d].end && db.box[d].end <= t.shape[d];
      }
      if (!ok) {
        report.violations.push_back({t.name, "out_of_bounds", db.box});
        in_bounds = false;
      }
    }
    if (!in_bounds) continue;
    if (shape_numel(t.shape) <= exhaustive_limit) {
      check_exhaustive(t, report);
    } else {
      check_compressed(t, report);
    }
  }
  return report;
}

CommVolume comm_volume(const ShardPlan& plan) {
  CommVolume v;
  if (plan.moe_layers == 0) return v;
  const double tokens = static_cast<double>(plan.batch) * static_cast<double>(plan.seq);
  const double remote = 1.0 - 1.0 / static_cast<double>(plan.mesh.x);
  v.dispatch_elements = 2.0 * tokens * static_cast<double>(plan.model_dim) * remote;
  v.combine_elements = v.dispatch_elements;
  return v;
}

std::vector<std::uint64_t> per_device_memory(const ShardPlan& plan, std::size_t bytes_per_element) {
  std::vector<std::uint64_t> bytes(plan.mesh.devices(), 0);
  for (const auto& t : plan.tensors) {
    for (const auto& db : t.boxes) bytes.at(db.device) += box_volume(db.box) * bytes_per_element;
  }
  return bytes;
}

nlohmann::json plan_json(const ShardPlan& plan) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : plan.tensors) {
    nlohmann::json shards = nlohmann::json::array();
    for (const auto& db : t.boxes) {
      nlohmann::json box = nlohmann::json::array();
      for (const auto& r : db.box) box.push_back({r.begin, r.end});
      shards.push_back({{"device", db.device},
                        {"x", db.device / plan.mesh.y},
                        {"y", db.device % plan.mesh.y},
                        {"box", box}});
    }
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"shards", shards}});
  }
  return {{"mesh", {{"x", plan.mesh.x}, {"y", plan.mesh.y}}}, {"tensors", tensors}};
}

std::vector<double> sharded_moe_forward(const Tensor& tokens, std::span<const ExpertParams> experts,
                                        const Tensor& gate_weights, Mesh mesh, const MoeOptions& options) {
  const std::size_t T = tokens.dim(0), M = tokens.dim(1), E = experts.size();
  if (E == 0) throw ConfigError("sharded_moe_forward: no experts");
  const std::size_t H = experts[0].w_in.dim(1);
  if (E < mesh.x) throw PlanningError("E is smaller than mesh X and expert replication is disallowed");
  require_divisible(E, "E", mesh.x, "X");
  require_divisible(H, "H", mesh.y, "Y");

  Tensor probs;
  {
    NoGradGuard guard;
    probs = softmax(matmul(tokens, gate_weights), 1);
  }
  const std::size_t capacity = options.capacity.value_or(expert_capacity(T, E, options.capacity_factor));
  const Routing routing = route_tokens(probs.data(), E, capacity, options.priority);

  const auto x = tokens.data();
  std::vector<double> out(T * M, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    if (!routing.kept[t][0] && !routing.kept[t][1]) {
      std::copy(x.begin() + static_cast<std::ptrdiff_t>(t * M), x.begin() + static_cast<std::ptrdiff_t>((t + 1) * M),
                out.begin() + static_cast<std::ptrdiff_t>(t * M));
    }
  }

  const std::size_t per_x = E / mesh.x, per_y = H / mesh.y;
  std::vector<double> partial(M);
  for (std::size_t i = 0; i < mesh.x; ++i) {
    for (std::size_t j = 0; j < mesh.y; ++j) {
      const std::size_t h0 = j * per_y, h1 = h0 + per_y;
      for (std::size_t e = i * per_x; e < (i + 1) * per_x; ++e) {
        const auto w_in = experts[e].w_in.data();
        const auto w_out = experts[e].w_out.data();
        for (const auto& [t, slot] : routing.admitted[e]) {
          std::fill(partial.begin(), partial.end(), 0.0);
          for (std::size_t h = h0; h < h1; ++h) {
            double pre = 0.0;
            for (std::size_t m = 0; m < M; ++m) pre += x[t * M + m] * w_in[m * H + h];
            const double act = 0.5 * pre * (1.0 + std::erf(pre / std::sqrt(2.0)));
            for (std::size_t m = 0; m < M; ++m) partial[m] += act * w_out[h * M + m];
          }
          const double w = routing.decisions[t].combine_weights[slot];
          for (std::size_t m = 0; m < M; ++m) out[t * M + m] += w * partial[m];
        }
      }
    }
  }
  return out;
}

}  // namespace sparselm
