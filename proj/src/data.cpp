// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include "sparselm/error.hpp"

namespace sparselm {

namespace {

constexpr std::array<std::string_view, kNumSources> kSourceNames = {
    "filtered_web", "wikipedia", "conversations", "forums", "books", "news", "other"};

std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL) {
  std::uint64_t h = basis;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string_view source_name(Source s) { return kSourceNames[static_cast<std::size_t>(s)]; }

Source parse_source(std::string_view name) {
  for (std::size_t i = 0; i < kNumSources; ++i) {
    if (kSourceNames[i] == name) return static_cast<Source>(i);
  }
  throw ConfigError("unknown data source '" + std::string(name) + "'");
}

std::array<Source, kNumSources> all_sources() {
  std::array<Source, kNumSources> out{};
  for (std::size_t i = 0; i < kNumSources; ++i) out[i] = static_cast<Source>(i);
  return out;
}

void to_json(nlohmann::json& j, const Document& d) {
  j = {{"id", d.id}, {"source", source_name(d.source)}, {"text", d.text}};
  if (d.quality_score) j["quality_score"] = *d.quality_score;
}

void from_json(const nlohmann::json& j, Document& d) {
  d.id = j.value("id", std::string());
  d.source = parse_source(j.value("source", std::string("other")));
  d.text = j.at("text").get<std::string>();
  if (d.text.empty()) throw ConfigError("document '" + d.id + "' has empty text");
  d.quality_score.reset();
  if (j.contains("quality_score") && !j["quality_score"].is_null()) {
    const double s = j["quality_score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("document '" + d.id + "' has quality_score outside [0, 1]");
    d.quality_score = s;
  }
}

std::vector<Document> read_documents(std::istream& in) {
  std::vector<Document> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      docs.push_back(nlohmann::json::parse(line).get<Document>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return docs;
}

std::vector<Document> read_documents(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  return read_documents(in);
}

void write_documents(std::ostream& out, std::span<const Document> docs) {
  for (const auto& d : docs) out << nlohmann::json(d).dump() << '\n';
}

void MixtureSpec::validate() const {
  double total = 0.0;
  for (std::size_t i = 0; i < kNumSources; ++i) {
    if (!(weights[i] >= 0.0)) {
      throw ConfigError("mixture weight for " + std::string(kSourceNames[i]) + " must be >= 0");
    }
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("mixture weights sum to " + std::to_string(total) + ", expected 1");
  }
}

MixtureSpec MixtureSpec::defaults() {
  MixtureSpec m;
  m.weights = {0.42, 0.06, 0.28, 0.02, 0.20, 0.02, 0.0};
  return m;
}

void to_json(nlohmann::json& j, const MixtureSpec& m) {
  j = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumSources; ++i) j[std::string(kSourceNames[i])] = m.weights[i];
}

void from_json(const nlohmann::json& j, MixtureSpec& m) {
  m.weights.fill(0.0);
  for (const auto& [key, value] : j.items()) {
    m.weights[static_cast<std::size_t>(parse_source(key))] = value.get<double>();
  }
}

std::vector<std::string> word_unigrams(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

std::vector<HashedFeature> hash_features(std::string_view text, std::size_t dim) {
  const auto words = word_unigrams(text);
  std::unordered_map<std::size_t, double> buckets;
  for (const auto& w : words) {
    const std::uint64_t h = fnv1a(w);
    const double sign = (fnv1a(w, 0x84222325cbf29ce4ULL) & 1U) ? 1.0 : -1.0;
    buckets[static_cast<std::size_t>(h % dim)] += sign;
  }
  std::vector<HashedFeature> out;
  out.reserve(buckets.size());
  const double norm = words.empty() ? 1.0 : 1.0 / std::sqrt(static_cast<double>(words.size()));
  for (const auto& [index, value] : buckets) {
    if (value != 0.0) out.push_back({index, value * norm});
  }
  std::sort(out.begin(), out.end(), [](const HashedFeature& a, const HashedFeature& b) { return a.index < b.index; });
  return out;
}

QualityClassifier::QualityClassifier(std::size_t dim) {
  if (dim < 1024 || (dim & (dim - 1)) != 0) {
    throw ConfigError("hash dimension must be a power of two >= 1024, got " + std::to_string(dim));
  }
  weights_.assign(dim, 0.0);
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double linear(std::span<const double> w, double b, std::span<const HashedFeature> f) {
  double z = b;
  for (const auto& x : f) z += w[x.index] * x.value;
  return z;
}

}  // namespace

double QualityClassifier::score(std::string_view text) const {
  return sigmoid(linear(weights_, bias_, hash_features(text, dim())));
}

QualityClassifier train_quality_classifier(std::span<const Document> curated, std::span<const Document> web,
                                           const ClassifierTrainOptions& options) {
  if (curated.empty()) throw ConfigError("quality classifier needs at least one curated document");
  if (web.empty()) throw ConfigError("quality classifier needs at least one web document");
  QualityClassifier clf(options.hash_dim);

  struct Example {
    std::vector<HashedFeature> features;
    double label;
  };
  std::vector<Example> examples;
  examples.reserve(curated.size() + web.size());
  for (const auto& d : curated) examples.push_back({hash_features(d.text, clf.dim()), 1.0});
  for (const auto& d : web) examples.push_back({hash_features(d.text, clf.dim()), 0.0});

  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(options.seed, "quality-classifier"));
  auto w = clf.mutable_weights();
  double b = 0.0;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const double lr = options.learning_rate / static_cast<double>(epoch + 1);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t idx : order) {
      const auto& ex = examples[idx];
      const double err = sigmoid(linear(w, b, ex.features)) - ex.label;
      for (const auto& f : ex.features) w[f.index] -= lr * err * f.value;
      b -= lr * err;
    }
  }
  clf.set_bias(b);
  return clf;
}

bool pareto_keep(double score, double alpha, Rng& rng) {
  if (!(score >= 0.0 && score <= 1.0)) throw RangeError("pareto_keep: score must lie in [0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("pareto_keep: alpha must be > 0");
  // Inverse CDF of Lomax(alpha): X = U^(-1/alpha) - 1 with U in (0, 1].
  const double u = 1.0 - rng.uniform();
  const double x = std::pow(u, -1.0 / alpha) - 1.0;
  return x >= 1.0 - score;
}

std::size_t FilterReport::kept() const {
  std::size_t n = 0;
  for (const auto& c : per_source) n += c.kept;
  return n;
}

std::size_t FilterReport::dropped() const {
  std::size_t n = 0;
  for (const auto& c : per_source) n += c.dropped;
  return n;
}

void to_json(nlohmann::json& j, const FilterReport& r) {
  nlohmann::json sources = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumSources; ++i) {
    sources[std::string(kSourceNames[i])] = {{"kept", r.per_source[i].kept}, {"dropped", r.per_source[i].dropped}};
  }
  j = {{"alpha", r.alpha}, {"kept", r.kept()}, {"dropped", r.dropped()}, {"per_source", sources}};
}

std::vector<Document> filter_documents(std::span<const Document> docs, const QualityClassifier& classifier,
                                       double alpha, Rng& rng, FilterReport* report) {
  std::vector<Document> kept;
  FilterReport local;
  local.alpha = alpha;
  for (const auto& d : docs) {
    Document scored = d;
    if (!scored.quality_score) scored.quality_score = classifier.score(scored.text);
    auto& counts = local.per_source[static_cast<std::size_t>(scored.source)];
    if (pareto_keep(*scored.quality_score, alpha, rng)) {
      ++counts.kept;
      kept.push_back(std::move(scored));
    } else {
      ++counts.dropped;
    }
  }
  if (report) *report = local;
  return kept;
}

MixtureSampler::MixtureSampler(std::array<std::vector<Document>, kNumSources> sources, MixtureSpec spec,
                               std::uint64_t seed)
    : sources_(std::move(sources)), rng_(derive_seed(seed, "mixture")) {
  spec.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < kNumSources; ++i) {
    if (spec.weights[i] > 0.0 && sources_[i].empty()) {
      throw ConfigError("mixture gives weight to source '" + std::string(kSourceNames[i]) +
                        "' but it has no documents");
    }
    acc += spec.weights[i];
    cumulative_[i] = acc;
  }
}

Source MixtureSampler::draw_source() {
  const double u = rng_.uniform() * cumulative_.back();
  for (std::size_t i = 0; i < kNumSources; ++i) {
    if (u < cumulative_[i]) return static_cast<Source>(i);
  }
  // Floating-point slack: fall back to the last positive-weight source.
  for (std::size_t i = kNumSources; i-- > 0;) {
    if (!sources_[i].empty() && (i == 0 || cumulative_[i] > cumulative_[i - 1])) return static_cast<Source>(i);
  }
  return Source::kOther;
}

const Document& MixtureSampler::next() {
  const auto s = static_cast<std::size_t>(draw_source());
  const Document& d = sources_[s][cursor_[s]];
  cursor_[s] = (cursor_[s] + 1) % sources_[s].size();
  return d;
}

std::array<std::vector<Document>, kNumSources> group_by_source(std::span<const Document> docs) {
  std::array<std::vector<Document>, kNumSources> out;
  for (const auto& d : docs) out[static_cast<std::size_t>(d.source)].push_back(d);
  return out;
}

std::vector<int> ByteTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string ByteTokenizer::decode(std::span<const int> ids) const {
  std::string s;
  s.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) s.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return s;
}

MarkovSource::MarkovSource(std::size_t alphabet, std::size_t branching, std::uint64_t seed)
    : alphabet_(alphabet) {
  if (alphabet == 0 || alphabet > 26) throw ConfigError("Markov alphabet must have 1 to 26 letters");
  if (branching == 0 || branching > alphabet) throw ConfigError("Markov branching must lie in [1, alphabet]");
  Rng rng(derive_seed(seed, "markov"));
  transitions_.assign(alphabet * alphabet, 0.0);
  for (std::size_t a = 0; a < alphabet; ++a) {
    std::vector<std::size_t> succ(alphabet);
    std::iota(succ.begin(), succ.end(), std::size_t{0});
    for (std::size_t i = 0; i < branching; ++i) std::swap(succ[i], succ[i + rng.below(alphabet - i)]);
    double total = 0.0;
    for (std::size_t i = 0; i < branching; ++i) {
      const double w = 0.2 + rng.uniform();
      transitions_[a * alphabet + succ[i]] = w;
      total += w;
    }
    for (std::size_t b = 0; b < alphabet; ++b) transitions_[a * alphabet + b] /= total;
  }
}

std::vector<int> MarkovSource::sample(std::size_t length, Rng& rng) const {
  std::vector<int> out;
  out.reserve(length);
  if (length == 0) return out;
  std::size_t state = rng.below(alphabet_);
  out.push_back(static_cast<int>('a' + state));
  while (out.size() < length) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t next = 0;
    for (std::size_t b = 0; b < alphabet_; ++b) {
      const double p = transitions_[state * alphabet_ + b];
      if (p > 0.0) next = b;
      acc += p;
      if (p > 0.0 && u < acc) {
        next = b;
        break;
      }
    }
    state = next;
    out.push_back(static_cast<int>('a' + state));
  }
  return out;
}

std::string MarkovSource::sample_text(std::size_t length, Rng& rng) const {
  const auto ids = sample(length, rng);
  return std::string(ids.begin(), ids.end());
}

std::vector<int> pack_examples(std::span<const std::vector<int>> docs, std::size_t seq_len, std::size_t batch) {
  if (seq_len < 2) throw ConfigError("pack_examples: sequence length must be >= 2");
  if (batch == 0) throw ConfigError("pack_examples: batch must be >= 1");
  std::vector<int> out;
  for (const auto& d : docs) {
    out.insert(out.end(), d.begin(), d.end());
    out.push_back(kEosId);
  }
  // A trailing EOS that would open a row of its own is dropped: the end of
  // the stream already marks the boundary.
  if (!out.empty() && out.size() % seq_len == 1 && out.size() > 1) out.pop_back();
  std::size_t rows = (out.size() + seq_len - 1) / seq_len;
  rows = (rows + batch - 1) / batch * batch;
  out.resize(rows * seq_len, kPadId);
  return out;
}

}  // namespace sparselm
