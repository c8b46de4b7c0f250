// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint container.
//
// Layout (all integers little-endian):
//   "SPLMCKPT"                       8-byte magic
//   u32 version                      currently 1
//   u64 n, n bytes                   UTF-8 JSON {"model": ModelConfig, "metadata": {...}}
//   u64 count, count x entry         model parameters
//   u64 optimizer step
//   u64 count, count x entry         optimizer accumulators
// entry:
//   u32 n, n bytes name; u32 rank; rank x u64 dims; numel x f64 (IEEE-754 bits)

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparselm/model.hpp"

namespace sparselm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedArray> parameters;
  std::uint64_t optimizer_step = 0;
  std::vector<NamedArray> optimizer_slots;
  nlohmann::json metadata = nlohmann::json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
// Throws IoError on malformed input or an unsupported version.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<NamedArray> snapshot_parameters(const Model& model);
// Copies values into the model's parameters by name. Throws ConfigError on a
// missing name or shape mismatch.
void restore_parameters(Model& model, std::span<const NamedArray> parameters);

// Builds a model from the checkpoint's config and loads its parameters.
Model model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace sparselm
