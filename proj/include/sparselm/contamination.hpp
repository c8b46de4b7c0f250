// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Train/eval overlap analysis: an n-gram index over a training corpus and a
// dirty/clean split of evaluation examples.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "json.hpp"

#include "sparselm/data.hpp"

namespace sparselm {

inline constexpr std::size_t kDefaultNgram = 8;

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> contamination_tokens(std::string_view text);

struct BloomOptions {
  std::size_t bits = std::size_t{1} << 24;
  std::size_t hashes = 4;
};

class NgramIndex {
 public:
  // Exact set membership. Throws ConfigError for n < 2.
  explicit NgramIndex(std::size_t n = kDefaultNgram);
  // Bloom-filter membership: no false negatives, false positives at a rate
  // of about (1 - exp(-k m / bits))^k after m insertions.
  static NgramIndex bloom(std::size_t n, BloomOptions options);

  std::size_t n() const { return n_; }
  bool probabilistic() const { return !bits_.empty(); }
  // Distinct n-grams inserted (exact mode) or insertions (Bloom mode).
  std::size_t size() const;

  // Inserts every n-gram of the document's normalized tokens.
  void add_document(std::string_view text);
  bool contains(std::span<const std::string> ngram) const;
  // True when any n-gram of the text is in the index.
  bool is_dirty(std::string_view text) const;

  const std::unordered_set<std::string>& exact_set() const { return exact_; }

 private:
  void insert(std::span<const std::string> ngram);

  std::size_t n_;
  std::unordered_set<std::string> exact_;
  std::vector<std::uint64_t> bits_;
  std::size_t bit_count_ = 0;
  std::size_t hashes_ = 0;
  std::size_t insertions_ = 0;
};

NgramIndex build_ngram_index(std::span<const Document> corpus, std::size_t n = kDefaultNgram);

struct ContaminationReport {
  std::string dataset;
  std::string split;
  std::size_t n = kDefaultNgram;
  std::size_t dirty_count = 0;
  std::size_t total_count = 0;
  double percent_clean = 100.0;  // rounded to 2 decimals
  std::vector<bool> dirty;       // per example
};

// Throws ConfigError for an empty dataset.
ContaminationReport contamination_report(std::string dataset, std::string split,
                                         std::span<const std::string> examples, const NgramIndex& index);

nlohmann::json contamination_json(std::span<const ContaminationReport> reports);
// Columns: Dataset, Split, Dirty count, Total count, % clean.
void write_contamination_csv(std::ostream& out, std::span<const ContaminationReport> reports);

}  // namespace sparselm
