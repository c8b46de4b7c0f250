// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only language model whose feed-forward sublayer alternates between
// a dense GEGLU block (even layers) and a top-2 mixture-of-experts block (odd
// layers). Attention uses a learned per-layer, per-head bias over log-spaced
// relative-distance buckets instead of absolute position embeddings.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparselm/moe.hpp"
#include "sparselm/tensor.hpp"

namespace sparselm {

struct ModelConfig {
  std::size_t num_layers = 2;    // L
  std::size_t model_dim = 16;    // M
  std::size_t hidden_dim = 32;   // H
  std::size_t num_heads = 2;
  std::size_t head_dim = 8;
  std::size_t num_experts = 4;   // E; 1 means dense
  std::size_t vocab_size = 259;
  std::size_t seq_len = 128;     // S (maximum)
  std::size_t batch_size = 8;    // B
  double capacity_factor = kDefaultCapacityFactor;
  std::size_t rel_buckets = 32;
  std::size_t rel_max_distance = 128;
  // With num_experts == 1, keep single-expert MoE blocks on odd layers
  // instead of reducing them to dense GEGLU blocks.
  bool keep_moe_layers = false;

  bool has_moe_layers() const { return num_experts > 1 || keep_moe_layers; }
  bool is_moe_layer(std::size_t layer) const { return has_moe_layers() && layer % 2 == 1; }
  std::size_t attention_dim() const { return num_heads * head_dim; }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Architecture rows of the reference model-size grid, e.g. "0.1B",
// "0.1B/64E", "1.7B/256E", "64B/64E".
std::vector<std::string> preset_names();
ModelConfig preset(std::string_view name);

struct AttentionParams {
  Tensor w_q, w_k, w_v;  // [M x heads*d_head]
  Tensor w_o;            // [heads*d_head x M]
  Tensor rel_bias;       // [heads x rel_buckets]
};

struct GegluParams {
  Tensor w_a, w_b;  // [M x H]
  Tensor w_out;     // [H x M]
};

struct MoeLayerParams {
  Tensor gate;  // [M x E]
  std::vector<ExpertParams> experts;
};

struct LayerParams {
  Tensor attn_norm;  // [M]
  Tensor ffn_norm;   // [M]
  AttentionParams attention;
  std::optional<GegluParams> dense;
  std::optional<MoeLayerParams> moe;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct ForwardResult {
  Tensor logits;    // [B x S x vocab]
  Tensor aux_loss;  // mean over MoE layers; 0 without MoE layers
  std::vector<DispatchStats> dispatch;
};

class Model {
 public:
  // Deterministic initialization: N(0, 1/fan_in) weights, unit norm gains,
  // zero relative biases. Identical seeds give bit-identical parameters.
  static Model build(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // `token_ids` is row-major [batch x seq]. Throws RangeError for ids
  // outside the vocabulary.
  ForwardResult forward(std::span<const int> token_ids, std::size_t batch, std::size_t seq) const;

  // Parameter handles in a fixed order. The handles share storage with the
  // model, so writes through them update the model.
  std::vector<NamedParameter> parameters() const;
  std::optional<Tensor> find_parameter(std::string_view name) const;
  void zero_grad();
  // FNV-1a over the bytes of every parameter, in parameters() order.
  std::uint64_t checksum() const;
  // Deep copy with fresh parameter storage.
  Model clone() const;

  const Tensor& embedding() const { return embedding_; }
  const std::vector<LayerParams>& layers() const { return layers_; }

 private:
  ModelConfig config_;
  Tensor embedding_;  // [vocab x M], tied with the output projection
  std::vector<LayerParams> layers_;
  Tensor final_norm_;
};

// Bucket of a causal offset i - j >= 0: exact buckets for small offsets,
// logarithmically spaced ones up to max_distance, saturating at the last.
std::size_t relative_position_bucket(std::size_t distance, std::size_t num_buckets,
                                     std::size_t max_distance);

// Causal multi-head attention for one sequence. q, k, v are [S x heads*d_head]
// with head h in columns [h*d_head, (h+1)*d_head); rel_bias is
// [heads x num_buckets]. Returns [S x heads*d_head].
Tensor attention_with_relative_bias(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& rel_bias, std::size_t num_heads,
                                    std::size_t max_distance);

// W_out (GELU(x W_a) * (x W_b)) applied row-wise to x [T x M].
Tensor geglu_ffn(const Tensor& x, const Tensor& w_a, const Tensor& w_b, const Tensor& w_out);

struct ParamCounts {
  std::uint64_t total = 0;
  std::uint64_t active = 0;  // parameters touched per token
};

// Closed-form counts excluding the embedding table: attention 4*M*heads*d_head
// per layer plus relative biases and norm gains, dense FFN 3MH, MoE layer
// E*2MH (2*2MH active) plus the M*E gate.
ParamCounts count_params(const ModelConfig& config);

// Forward GFLOPs per token, 2 * active params / 1e9.
double flops_per_token(const ModelConfig& config);
double flops_for_active_params(double active_params);

}  // namespace sparselm
