// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus pipeline: hashed-feature quality classifier, Pareto-sampled
// filtering, mixture-weighted source sampling, byte tokenization and
// sequence packing.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparselm/rng.hpp"

namespace sparselm {

enum class Source { kFilteredWeb, kWikipedia, kConversations, kForums, kBooks, kNews, kOther };

inline constexpr std::size_t kNumSources = 7;

std::string_view source_name(Source s);
// Throws ConfigError for an unknown name.
Source parse_source(std::string_view name);
std::array<Source, kNumSources> all_sources();

struct Document {
  std::string id;
  Source source = Source::kOther;
  std::string text;
  std::optional<double> quality_score;
};

void to_json(nlohmann::json& j, const Document& d);
// Throws ConfigError on empty text or a score outside [0, 1].
void from_json(const nlohmann::json& j, Document& d);

// JSON-lines, one Document per line. Blank lines are skipped.
std::vector<Document> read_documents(std::istream& in);
std::vector<Document> read_documents(const std::filesystem::path& path);
void write_documents(std::ostream& out, std::span<const Document> docs);

struct MixtureSpec {
  std::array<double, kNumSources> weights{};

  double weight(Source s) const { return weights[static_cast<std::size_t>(s)]; }
  // Throws ConfigError for negative weights or a sum outside 1 +- 1e-9.
  void validate() const;
  static MixtureSpec defaults();
};

void to_json(nlohmann::json& j, const MixtureSpec& m);
void from_json(const nlohmann::json& j, MixtureSpec& m);

// Lowercased whitespace-separated words.
std::vector<std::string> word_unigrams(std::string_view text);

struct HashedFeature {
  std::size_t index = 0;
  double value = 0.0;
};

// Signed hashed bag of words: each unigram adds +-1 to bucket hash % dim,
// the sign taken from an independent hash bit; values are scaled by
// 1/sqrt(word count). Zero buckets are omitted.
std::vector<HashedFeature> hash_features(std::string_view text, std::size_t dim);

class QualityClassifier {
 public:
  // Zero weights and bias. dim must be a power of two >= 1024.
  explicit QualityClassifier(std::size_t dim = std::size_t{1} << 20);

  std::size_t dim() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  double bias() const { return bias_; }
  std::span<double> mutable_weights() { return weights_; }
  void set_bias(double b) { bias_ = b; }

  // sigmoid(w . features + b), in [0, 1].
  double score(std::string_view text) const;

 private:
  std::vector<double> weights_;
  double bias_ = 0.0;
};

struct ClassifierTrainOptions {
  std::size_t hash_dim = std::size_t{1} << 20;
  std::size_t epochs = 5;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

// Logistic regression with curated documents as the positive class, trained
// by SGD over a seeded shuffle of both streams; epoch k (from 0) uses
// learning_rate / (k + 1). Throws ConfigError when
// either stream is empty.
QualityClassifier train_quality_classifier(std::span<const Document> curated, std::span<const Document> web,
                                           const ClassifierTrainOptions& options = {});

inline constexpr double kDefaultParetoAlpha = 9.0;

// Keeps iff a Lomax draw with shape alpha exceeds 1 - score, so
// P(keep | s) = (2 - s)^(-alpha).
bool pareto_keep(double score, double alpha, Rng& rng);

struct SourceCounts {
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

struct FilterReport {
  double alpha = kDefaultParetoAlpha;
  std::array<SourceCounts, kNumSources> per_source{};
  std::size_t kept() const;
  std::size_t dropped() const;
};

void to_json(nlohmann::json& j, const FilterReport& r);

// Scores every document and applies pareto_keep. Documents already scored
// keep their score. Returns the survivors; `report` receives the counts.
std::vector<Document> filter_documents(std::span<const Document> docs, const QualityClassifier& classifier,
                                       double alpha, Rng& rng, FilterReport* report = nullptr);

// Draws each document's source i.i.d. from the mixture, then takes the next
// document of that source, cycling when a source is exhausted.
class MixtureSampler {
 public:
  // Throws ConfigError when a positive-weight source has no documents.
  MixtureSampler(std::array<std::vector<Document>, kNumSources> sources, MixtureSpec spec, std::uint64_t seed);

  const Document& next();
  Source draw_source();

 private:
  std::array<std::vector<Document>, kNumSources> sources_;
  std::array<std::size_t, kNumSources> cursor_{};
  std::array<double, kNumSources> cumulative_{};
  Rng rng_;
};

std::array<std::vector<Document>, kNumSources> group_by_source(std::span<const Document> docs);

// Byte-level vocabulary plus three specials.
inline constexpr int kPadId = 256;
inline constexpr int kBosId = 257;
inline constexpr int kEosId = 258;
inline constexpr std::size_t kByteVocabSize = 259;

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::vector<int> encode(std::string_view text) const = 0;
  // Special ids are dropped.
  virtual std::string decode(std::span<const int> ids) const = 0;
  virtual std::size_t vocab_size() const = 0;
};

class ByteTokenizer final : public Tokenizer {
 public:
  std::vector<int> encode(std::string_view text) const override;
  std::string decode(std::span<const int> ids) const override;
  std::size_t vocab_size() const override { return kByteVocabSize; }
};

// First-order Markov chain over `alphabet` letters starting at 'a'. Each
// letter has `branching` possible successors with random weights; used to
// build synthetic corpora with known structure.
class MarkovSource {
 public:
  MarkovSource(std::size_t alphabet, std::size_t branching, std::uint64_t seed);

  std::size_t alphabet() const { return alphabet_; }
  // Row-major [alphabet x alphabet] transition probabilities.
  const std::vector<double>& transitions() const { return transitions_; }
  // Token ids (byte values) of a sequence started from a uniform letter.
  std::vector<int> sample(std::size_t length, Rng& rng) const;
  std::string sample_text(std::size_t length, Rng& rng) const;

 private:
  std::size_t alphabet_;
  std::vector<double> transitions_;
};

// Packs documents into rows of `seq_len` ids, each document followed by EOS
// except that a final EOS which would be alone in its row is omitted.
// The last row is PAD-filled and the row count is rounded up to a multiple
// of `batch` with all-PAD rows. Returns row-major ids, rows x seq_len.
std::vector<int> pack_examples(std::span<const std::vector<int>> docs, std::size_t seq_len, std::size_t batch);

}  // namespace sparselm
