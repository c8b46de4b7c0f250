// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by the command-line subcommands. A config is one
// JSON document layered over the defaults below; `--set a.b=value` edits a
// single existing key.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparselm/data.hpp"
#include "sparselm/model.hpp"

namespace sparselm {

struct TrainSection {
  std::uint64_t steps = 200;
  double aux_coeff = 0.01;
  double peak_lr = 0.01;
  // 0 selects 1% of steps, at least 10.
  std::uint64_t warmup_steps = 0;
  std::uint64_t checkpoint_interval = 100;
  double divergence_threshold = 3.0;
  std::size_t divergence_window = 50;
  std::string corpus;  // JSON-lines documents; empty means a synthetic corpus
};

struct DataSection {
  std::string corpus;   // documents to filter or mix
  std::string curated;  // positive class for the quality classifier
  std::string web;      // negative class for the quality classifier
  MixtureSpec mixture = MixtureSpec::defaults();
  double pareto_alpha = 9.0;
  std::size_t hash_dim = std::size_t{1} << 20;
  std::size_t classifier_epochs = 5;
  double classifier_lr = 0.5;
  std::size_t mix_count = 1000;
};

struct EvalSection {
  std::vector<std::string> tasks;  // task JSON-lines files
  std::optional<std::size_t> shots;
  std::size_t beam_width = 4;
  std::size_t max_tokens = 32;
  std::string checkpoint;  // empty means a freshly initialized model
};

struct ContaminationDataset {
  std::string name;
  std::string split = "dev";
  std::string path;  // task file or documents
};

struct ContaminationSection {
  std::string corpus;
  std::vector<ContaminationDataset> datasets;
  std::size_t n = 8;
  bool bloom = false;
  std::size_t bloom_bits = std::size_t{1} << 24;
  std::size_t bloom_hashes = 4;
};

struct ShardSection {
  std::size_t mesh_x = 1;
  std::size_t mesh_y = 1;
  std::size_t bytes_per_element = 4;
};

struct EnergySection {
  double chips = 1024;
  double watts_per_chip = 326;
  double hours = 574;
  double pue = 1.11;
  double tco2e_per_mwh = 0.088;
  std::optional<double> reference_mwh;
};

struct RunConfig {
  std::optional<std::string> preset;  // replaces `model` when set
  ModelConfig model;
  TrainSection train;
  DataSection data;
  EvalSection eval;
  ContaminationSection contamination;
  ShardSection shard;
  EnergySection energy;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // Model after applying the preset.
  ModelConfig resolved_model() const;
  // Named substreams of `seed`: "model", "data", "eval".
  std::uint64_t stream_seed(std::string_view name) const;
};

nlohmann::json to_json_tree(const RunConfig& c);

// Defaults overlaid with `document` and then `overrides` ("a.b=value").
// Values that parse as JSON are used as such, anything else as a string.
// Throws UnknownKeyError for keys absent from the defaults and ConfigError
// for ill-typed values.
RunConfig load_run_config(const nlohmann::json& document, std::span<const std::string> overrides = {});
// Reads the JSON file first; throws IoError when it is missing.
RunConfig load_run_config(const std::filesystem::path& path, std::span<const std::string> overrides = {});

// Throws IoError for a non-empty path that does not exist.
void require_file(const std::string& path, std::string_view what);

}  // namespace sparselm
