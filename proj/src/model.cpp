// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/model.hpp"

#include <bit>
#include <cmath>
#include <map>

#include "sparselm/error.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model.") + name + " must be positive");
  };
  positive(num_layers, "num_layers");
  positive(model_dim, "model_dim");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(head_dim, "head_dim");
  positive(num_experts, "num_experts");
  positive(vocab_size, "vocab_size");
  positive(seq_len, "seq_len");
  positive(batch_size, "batch_size");
  positive(rel_buckets, "rel_buckets");
  positive(rel_max_distance, "rel_max_distance");
  if (has_moe_layers() && num_layers % 2 != 0) {
    throw ConfigError("model.num_layers must be even when MoE layers are present (got " +
                      std::to_string(num_layers) + ")");
  }
  if (!(capacity_factor >= 1.0)) {
    throw ConfigError("model.capacity_factor must be >= 1 (got " + std::to_string(capacity_factor) + ")");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"model_dim", c.model_dim},
                     {"hidden_dim", c.hidden_dim},
                     {"num_heads", c.num_heads},
                     {"head_dim", c.head_dim},
                     {"num_experts", c.num_experts},
                     {"vocab_size", c.vocab_size},
                     {"seq_len", c.seq_len},
                     {"batch_size", c.batch_size},
                     {"capacity_factor", c.capacity_factor},
                     {"rel_buckets", c.rel_buckets},
                     {"rel_max_distance", c.rel_max_distance},
                     {"keep_moe_layers", c.keep_moe_layers}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_layers = j.value("num_layers", d.num_layers);
  c.model_dim = j.value("model_dim", d.model_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.head_dim = j.value("head_dim", d.head_dim);
  c.num_experts = j.value("num_experts", d.num_experts);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.capacity_factor = j.value("capacity_factor", d.capacity_factor);
  c.rel_buckets = j.value("rel_buckets", d.rel_buckets);
  c.rel_max_distance = j.value("rel_max_distance", d.rel_max_distance);
  c.keep_moe_layers = j.value("keep_moe_layers", d.keep_moe_layers);
}

namespace {

struct PresetShape {
  const char* name;
  std::size_t layers, model_dim, hidden_dim, heads, head_dim, experts;
};

constexpr PresetShape kPresets[] = {
    {"0.1B", 12, 768, 3072, 12, 64, 1},
    {"0.1B/64E", 12, 768, 3072, 12, 64, 64},
    {"1.7B", 24, 2048, 8192, 16, 128, 1},
    {"1.7B/32E", 24, 2048, 8192, 16, 128, 32},
    {"1.7B/64E", 24, 2048, 8192, 16, 128, 64},
    {"1.7B/128E", 24, 2048, 8192, 16, 128, 128},
    {"1.7B/256E", 24, 2048, 8192, 16, 128, 256},
    {"8B", 32, 4096, 16384, 32, 128, 1},
    {"8B/64E", 32, 4096, 16384, 32, 128, 64},
    {"137B", 64, 8192, 65536, 128, 128, 1},
    {"64B/64E", 64, 8192, 32768, 128, 128, 64},
};

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

ModelConfig preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (name != p.name) continue;
    ModelConfig c;
    c.num_layers = p.layers;
    c.model_dim = p.model_dim;
    c.hidden_dim = p.hidden_dim;
    c.num_heads = p.heads;
    c.head_dim = p.head_dim;
    c.num_experts = p.experts;
    c.vocab_size = 256000;
    c.seq_len = 1024;
    c.batch_size = 1024;
    return c;
  }
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

// ---- Building blocks ------------------------------------------------------

std::size_t relative_position_bucket(std::size_t distance, std::size_t num_buckets,
                                     std::size_t max_distance) {
  const std::size_t exact = num_buckets / 2;
  if (distance < exact || exact == 0) return std::min(distance, num_buckets - 1);
  if (max_distance <= exact) return num_buckets - 1;
  const double ratio = std::log(static_cast<double>(distance) / static_cast<double>(exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(exact));
  const auto offset = static_cast<std::size_t>(ratio * static_cast<double>(num_buckets - exact));
  return std::min(exact + offset, num_buckets - 1);
}

Tensor attention_with_relative_bias(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& rel_bias, std::size_t num_heads,
                                    std::size_t max_distance) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape() ||
      q.dim(1) % num_heads != 0) {
    throw DimensionError("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  if (rel_bias.rank() != 2 || rel_bias.dim(0) != num_heads) {
    throw DimensionError("attention: relative bias " + shape_str(rel_bias.shape()) + " for " +
                         std::to_string(num_heads) + " heads");
  }
  const std::size_t seq = q.dim(0);
  const std::size_t head_dim = q.dim(1) / num_heads;
  const std::size_t buckets = rel_bias.dim(1);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  std::vector<std::size_t> bucket_of(seq * seq, 0);
  for (std::size_t i = 0; i < seq; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      bucket_of[i * seq + j] = relative_position_bucket(i - j, buckets, max_distance);

  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  std::vector<std::size_t> index(seq * seq);
  for (std::size_t h = 0; h < num_heads; ++h) {
    const Tensor qh = slice_cols(q, h * head_dim, head_dim);
    const Tensor kh = slice_cols(k, h * head_dim, head_dim);
    const Tensor vh = slice_cols(v, h * head_dim, head_dim);
    // Entries above the diagonal are masked by causal_softmax; any valid
    // index works there and receives zero gradient.
    for (std::size_t i = 0; i < seq * seq; ++i) index[i] = h * buckets + bucket_of[i];
    const Tensor bias = gather_elements(rel_bias, index, {seq, seq});
    const Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt), bias);
    heads.push_back(matmul(causal_softmax(scores), vh));
  }
  return num_heads == 1 ? heads[0] : concat_cols(heads);
}

Tensor geglu_ffn(const Tensor& x, const Tensor& w_a, const Tensor& w_b, const Tensor& w_out) {
  return matmul(mul(gelu(matmul(x, w_a)), matmul(x, w_b)), w_out);
}

// ---- Model ----------------------------------------------------------------

namespace {

template <typename F>
void visit_parameters(Tensor& embedding, std::vector<LayerParams>& layers, Tensor& final_norm, F&& f) {
  f(std::string("embedding"), embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    f(p + "attn_norm", layer.attn_norm);
    f(p + "attention.w_q", layer.attention.w_q);
    f(p + "attention.w_k", layer.attention.w_k);
    f(p + "attention.w_v", layer.attention.w_v);
    f(p + "attention.w_o", layer.attention.w_o);
    f(p + "attention.rel_bias", layer.attention.rel_bias);
    f(p + "ffn_norm", layer.ffn_norm);
    if (layer.dense) {
      f(p + "dense.w_a", layer.dense->w_a);
      f(p + "dense.w_b", layer.dense->w_b);
      f(p + "dense.w_out", layer.dense->w_out);
    }
    if (layer.moe) {
      f(p + "moe.gate", layer.moe->gate);
      for (std::size_t e = 0; e < layer.moe->experts.size(); ++e) {
        const std::string ep = p + "moe.experts." + std::to_string(e) + ".";
        f(ep + "w_in", layer.moe->experts[e].w_in);
        f(ep + "w_out", layer.moe->experts[e].w_out);
      }
    }
  }
  f(std::string("final_norm"), final_norm);
}

}  // namespace

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "model-init"));
  auto normal = [&rng](std::size_t rows, std::size_t cols, double std_dev) {
    std::vector<double> v(rows * cols);
    for (double& x : v) x = std_dev * rng.normal();
    return Tensor::parameter({rows, cols}, std::move(v));
  };
  auto weight = [&normal](std::size_t fan_in, std::size_t fan_out) {
    return normal(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  };
  auto ones = [](std::size_t n) { return Tensor::parameter({n}, std::vector<double>(n, 1.0)); };

  const std::size_t m = config.model_dim, h = config.hidden_dim, a = config.attention_dim();
  Model model;
  model.config_ = config;
  // Embedding rows have unit expected squared norm so tied logits start O(1).
  model.embedding_ = normal(config.vocab_size, m, 1.0 / std::sqrt(static_cast<double>(m)));
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.attn_norm = ones(m);
    layer.attention.w_q = weight(m, a);
    layer.attention.w_k = weight(m, a);
    layer.attention.w_v = weight(m, a);
    layer.attention.w_o = weight(a, m);
    layer.attention.rel_bias =
        Tensor::parameter({config.num_heads, config.rel_buckets},
                          std::vector<double>(config.num_heads * config.rel_buckets, 0.0));
    layer.ffn_norm = ones(m);
    if (config.is_moe_layer(l)) {
      MoeLayerParams moe;
      moe.gate = weight(m, config.num_experts);
      for (std::size_t e = 0; e < config.num_experts; ++e)
        moe.experts.push_back({weight(m, h), weight(h, m)});
      layer.moe = std::move(moe);
    } else {
      layer.dense = GegluParams{weight(m, h), weight(m, h), weight(h, m)};
    }
    model.layers_.push_back(std::move(layer));
  }
  model.final_norm_ = ones(m);
  return model;
}

ForwardResult Model::forward(std::span<const int> token_ids, std::size_t batch, std::size_t seq) const {
  if (batch == 0 || seq == 0 || token_ids.size() != batch * seq) {
    throw DimensionError("forward: " + std::to_string(token_ids.size()) + " ids for batch " +
                         std::to_string(batch) + " x seq " + std::to_string(seq));
  }
  if (seq > config_.seq_len) {
    throw DimensionError("forward: sequence length " + std::to_string(seq) + " exceeds " +
                         std::to_string(config_.seq_len));
  }
  const std::size_t tokens = batch * seq;
  // MoE admission runs position-major so routing at position i never depends
  // on later positions.
  std::vector<std::size_t> priority;
  priority.reserve(tokens);
  for (std::size_t s = 0; s < seq; ++s)
    for (std::size_t b = 0; b < batch; ++b) priority.push_back(b * seq + s);

  ForwardResult result;
  std::vector<Tensor> aux_terms;
  Tensor h = sparselm::embedding(embedding_, token_ids);
  for (const auto& layer : layers_) {
    const Tensor x = rms_norm(h, layer.attn_norm);
    const Tensor q = matmul(x, layer.attention.w_q);
    const Tensor k = matmul(x, layer.attention.w_k);
    const Tensor v = matmul(x, layer.attention.w_v);
    std::vector<Tensor> per_sequence;
    per_sequence.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      per_sequence.push_back(attention_with_relative_bias(
          slice_rows(q, b * seq, seq), slice_rows(k, b * seq, seq), slice_rows(v, b * seq, seq),
          layer.attention.rel_bias, config_.num_heads, config_.rel_max_distance));
    }
    const Tensor attended = batch == 1 ? per_sequence[0] : concat_rows(per_sequence);
    h = add(h, matmul(attended, layer.attention.w_o));

    const Tensor f = rms_norm(h, layer.ffn_norm);
    if (layer.moe) {
      MoeOptions options;
      options.capacity_factor = config_.capacity_factor;
      options.priority = priority;
      MoeOutput out = moe_forward(f, layer.moe->experts, layer.moe->gate, options);
      h = add(h, out.output);
      aux_terms.push_back(aux_load_balance_loss(out.stats));
      result.dispatch.push_back(std::move(out.stats));
    } else {
      h = add(h, geglu_ffn(f, layer.dense->w_a, layer.dense->w_b, layer.dense->w_out));
    }
  }
  const Tensor out = matmul(rms_norm(h, final_norm_), transpose(embedding_));
  result.logits = reshape(out, {batch, seq, config_.vocab_size});
  if (aux_terms.empty()) {
    result.aux_loss = Tensor::scalar(0.0);
  } else {
    Tensor total = aux_terms[0];
    for (std::size_t i = 1; i < aux_terms.size(); ++i) total = add(total, aux_terms[i]);
    result.aux_loss = scale(total, 1.0 / static_cast<double>(aux_terms.size()));
  }
  return result;
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  auto& self = const_cast<Model&>(*this);
  visit_parameters(self.embedding_, self.layers_, self.final_norm_,
                   [&out](std::string name, Tensor& t) { out.push_back({std::move(name), t}); });
  return out;
}

std::optional<Tensor> Model::find_parameter(std::string_view name) const {
  for (auto& p : parameters())
    if (p.name == name) return p.tensor;
  return std::nullopt;
}

void Model::zero_grad() {
  visit_parameters(embedding_, layers_, final_norm_, [](const std::string&, Tensor& t) { t.zero_grad(); });
}

std::uint64_t Model::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : parameters()) {
    for (double v : p.tensor.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xffU;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

Model Model::clone() const {
  Model copy = *this;
  visit_parameters(copy.embedding_, copy.layers_, copy.final_norm_, [](const std::string&, Tensor& t) {
    t = Tensor::parameter(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
  });
  return copy;
}

// ---- Accounting -----------------------------------------------------------

ParamCounts count_params(const ModelConfig& config) {
  config.validate();
  const std::uint64_t m = config.model_dim, h = config.hidden_dim, a = config.attention_dim();
  const std::uint64_t e = config.num_experts;
  const std::uint64_t shared = 4 * m * a + config.num_heads * config.rel_buckets + 2 * m;
  ParamCounts counts;
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    counts.total += shared;
    counts.active += shared;
    if (config.is_moe_layer(l)) {
      counts.total += e * 2 * m * h + m * e;
      counts.active += std::min<std::uint64_t>(e, 2) * 2 * m * h + m * e;
    } else {
      counts.total += 3 * m * h;
      counts.active += 3 * m * h;
    }
  }
  counts.total += m;
  counts.active += m;
  return counts;
}

double flops_for_active_params(double active_params) { return 2.0 * active_params / 1e9; }

double flops_per_token(const ModelConfig& config) {
  return flops_for_active_params(static_cast<double>(count_params(config).active));
}

}  // namespace sparselm
