// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/run_config.hpp"

#include <fstream>

#include "sparselm/error.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> get_opt(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

// Copies `src` onto `dst`, refusing keys `dst` does not have. Objects merge
// recursively; anything else is replaced.
void overlay(nlohmann::json& dst, const nlohmann::json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config" + (path.empty() ? "" : " key '" + path + "'") + " must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!dst.contains(key)) throw UnknownKeyError("unknown config key '" + full + "'");
    auto& slot = dst[key];
    if (slot.is_object() && value.is_object() && !slot.empty()) {
      overlay(slot, value, full);
    } else {
      slot = value;
    }
  }
}

void apply_override(nlohmann::json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw UnknownKeyError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  *node = value;
}

}  // namespace

ModelConfig RunConfig::resolved_model() const { return preset ? sparselm::preset(*preset) : model; }

std::uint64_t RunConfig::stream_seed(std::string_view name) const { return derive_seed(seed, name); }

nlohmann::json to_json_tree(const RunConfig& c) {
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& d : c.contamination.datasets) {
    datasets.push_back({{"name", d.name}, {"split", d.split}, {"path", d.path}});
  }
  return {
      {"preset", opt(c.preset)},
      {"model", c.model},
      {"train",
       {{"steps", c.train.steps},
        {"aux_coeff", c.train.aux_coeff},
        {"peak_lr", c.train.peak_lr},
        {"warmup_steps", c.train.warmup_steps},
        {"checkpoint_interval", c.train.checkpoint_interval},
        {"divergence_threshold", c.train.divergence_threshold},
        {"divergence_window", c.train.divergence_window},
        {"corpus", c.train.corpus}}},
      {"data",
       {{"corpus", c.data.corpus},
        {"curated", c.data.curated},
        {"web", c.data.web},
        {"mixture", c.data.mixture},
        {"pareto_alpha", c.data.pareto_alpha},
        {"hash_dim", c.data.hash_dim},
        {"classifier_epochs", c.data.classifier_epochs},
        {"classifier_lr", c.data.classifier_lr},
        {"mix_count", c.data.mix_count}}},
      {"eval",
       {{"tasks", c.eval.tasks},
        {"shots", opt(c.eval.shots)},
        {"beam_width", c.eval.beam_width},
        {"max_tokens", c.eval.max_tokens},
        {"checkpoint", c.eval.checkpoint}}},
      {"contamination",
       {{"corpus", c.contamination.corpus},
        {"datasets", datasets},
        {"n", c.contamination.n},
        {"bloom", c.contamination.bloom},
        {"bloom_bits", c.contamination.bloom_bits},
        {"bloom_hashes", c.contamination.bloom_hashes}}},
      {"shard",
       {{"mesh_x", c.shard.mesh_x}, {"mesh_y", c.shard.mesh_y}, {"bytes_per_element", c.shard.bytes_per_element}}},
      {"energy",
       {{"chips", c.energy.chips},
        {"watts_per_chip", c.energy.watts_per_chip},
        {"hours", c.energy.hours},
        {"pue", c.energy.pue},
        {"tco2e_per_mwh", c.energy.tco2e_per_mwh},
        {"reference_mwh", opt(c.energy.reference_mwh)}}},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
  };
}

RunConfig load_run_config(const nlohmann::json& document, std::span<const std::string> overrides) {
  nlohmann::json tree = to_json_tree(RunConfig{});
  overlay(tree, document, "");
  for (const auto& o : overrides) apply_override(tree, o);

  RunConfig c;
  try {
    c.preset = get_opt<std::string>(tree["preset"]);
    c.model = tree["model"].get<ModelConfig>();

    const auto& t = tree["train"];
    c.train.steps = t["steps"].get<std::uint64_t>();
    c.train.aux_coeff = t["aux_coeff"].get<double>();
    c.train.peak_lr = t["peak_lr"].get<double>();
    c.train.warmup_steps = t["warmup_steps"].get<std::uint64_t>();
    c.train.checkpoint_interval = t["checkpoint_interval"].get<std::uint64_t>();
    c.train.divergence_threshold = t["divergence_threshold"].get<double>();
    c.train.divergence_window = t["divergence_window"].get<std::size_t>();
    c.train.corpus = t["corpus"].get<std::string>();

    const auto& d = tree["data"];
    c.data.corpus = d["corpus"].get<std::string>();
    c.data.curated = d["curated"].get<std::string>();
    c.data.web = d["web"].get<std::string>();
    c.data.mixture = d["mixture"].get<MixtureSpec>();
    c.data.pareto_alpha = d["pareto_alpha"].get<double>();
    c.data.hash_dim = d["hash_dim"].get<std::size_t>();
    c.data.classifier_epochs = d["classifier_epochs"].get<std::size_t>();
    c.data.classifier_lr = d["classifier_lr"].get<double>();
    c.data.mix_count = d["mix_count"].get<std::size_t>();

    const auto& e = tree["eval"];
    c.eval.tasks = e["tasks"].get<std::vector<std::string>>();
    c.eval.shots = get_opt<std::size_t>(e["shots"]);
    c.eval.beam_width = e["beam_width"].get<std::size_t>();
    c.eval.max_tokens = e["max_tokens"].get<std::size_t>();
    c.eval.checkpoint = e["checkpoint"].get<std::string>();

    const auto& k = tree["contamination"];
    c.contamination.corpus = k["corpus"].get<std::string>();
    for (const auto& ds : k["datasets"]) {
      for (const auto& [key, value] : ds.items()) {
        if (key != "name" && key != "split" && key != "path") {
          throw UnknownKeyError("unknown config key 'contamination.datasets[]." + key + "'");
        }
      }
      c.contamination.datasets.push_back({ds.at("name").get<std::string>(), ds.value("split", std::string("dev")),
                                          ds.at("path").get<std::string>()});
    }
    c.contamination.n = k["n"].get<std::size_t>();
    c.contamination.bloom = k["bloom"].get<bool>();
    c.contamination.bloom_bits = k["bloom_bits"].get<std::size_t>();
    c.contamination.bloom_hashes = k["bloom_hashes"].get<std::size_t>();

    const auto& s = tree["shard"];
    c.shard.mesh_x = s["mesh_x"].get<std::size_t>();
    c.shard.mesh_y = s["mesh_y"].get<std::size_t>();
    c.shard.bytes_per_element = s["bytes_per_element"].get<std::size_t>();

    const auto& g = tree["energy"];
    c.energy.chips = g["chips"].get<double>();
    c.energy.watts_per_chip = g["watts_per_chip"].get<double>();
    c.energy.hours = g["hours"].get<double>();
    c.energy.pue = g["pue"].get<double>();
    c.energy.tco2e_per_mwh = g["tco2e_per_mwh"].get<double>();
    c.energy.reference_mwh = get_opt<double>(g["reference_mwh"]);

    c.seed = tree["seed"].get<std::uint64_t>();
    c.out_dir = tree["out_dir"].get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("invalid config value: ") + ex.what());
  }
  c.resolved_model().validate();
  c.data.mixture.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return load_run_config(doc, overrides);
}

void require_file(const std::string& path, std::string_view what) {
  if (path.empty()) return;
  if (!std::filesystem::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

}  // namespace sparselm
