// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace sparselm {

// Mixes a parent seed with a stream name so components (model init, data
// order, eval demonstrations) can be re-seeded independently.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

// Deterministic random source. The engine is std::mt19937_64; the
// distributions are spelled out here so sequences are identical across
// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform();

  // Standard normal (Box-Muller, one value per call).
  double normal();

  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);

  Rng substream(std::string_view name) { return Rng(derive_seed(next(), name)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sparselm
