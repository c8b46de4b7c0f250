// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// 2D sharding planner for MoE layers on an X x Y device mesh. Expert weights
// [E, M, H] are split E over X and H over Y; activations [B, S, M] are split
// B over X and M over Y. Nothing is replicated.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparselm/model.hpp"
#include "sparselm/moe.hpp"

namespace sparselm {

struct Mesh {
  std::size_t x = 1;
  std::size_t y = 1;

  std::size_t devices() const { return x * y; }
  std::size_t device_id(std::size_t i, std::size_t j) const { return i * y + j; }
};

// Half-open index range.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const Range&) const = default;
};

using Box = std::vector<Range>;

std::size_t box_volume(const Box& box);

struct DeviceBox {
  std::size_t device = 0;
  Box box;
};

struct TensorShard {
  std::string name;
  Shape shape;
  std::vector<DeviceBox> boxes;
};

struct ShardPlan {
  Mesh mesh;
  std::size_t num_experts = 1;
  std::size_t model_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::size_t moe_layers = 0;
  std::vector<TensorShard> tensors;

  const TensorShard& tensor(const std::string& name) const;
};

// Per MoE layer l: "layers.l.moe.w_in" [E, M, H] and "layers.l.moe.w_out"
// [E, H, M]; plus "activations" [B, S, M]. Ranges are contiguous and ordered
// so the lowest indices land on the lowest mesh coordinate. When B < X each
// batch row is split along S over X / B devices. Throws PlanningError naming
// the first indivisible pair.
ShardPlan plan(const ModelConfig& config, Mesh mesh);

struct Violation {
  std::string tensor;
  std::string kind;  // "overlap", "gap" or "out_of_bounds"
  Box region;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Checks that each tensor's boxes are pairwise disjoint and cover it.
// Tensors of at most exhaustive_limit elements are checked element by
// element, larger ones over coordinate-compressed cells.
ValidationReport validate(const ShardPlan& plan, std::size_t exhaustive_limit = std::size_t{1} << 20);

struct CommVolume {
  // Per MoE layer, elements crossing device boundaries under uniform
  // routing: 2 * B * S * M * (1 - 1/X) each way.
  double dispatch_elements = 0.0;
  double combine_elements = 0.0;
};

CommVolume comm_volume(const ShardPlan& plan);

// Bytes held by each device across all planned tensors.
std::vector<std::uint64_t> per_device_memory(const ShardPlan& plan, std::size_t bytes_per_element);

nlohmann::json plan_json(const ShardPlan& plan);

// Evaluates an MoE layer shard by shard: device (x, y) runs the experts it
// owns restricted to its hidden slice, and partial outputs are summed over
// y. Routing matches moe_forward for the same options.
std::vector<double> sharded_moe_forward(const Tensor& tokens, std::span<const ExpertParams> experts,
                                        const Tensor& gate_weights, Mesh mesh, const MoeOptions& options = {});

}  // namespace sparselm
