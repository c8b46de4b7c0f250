// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/contamination.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "sparselm/error.hpp"

namespace sparselm {

namespace {

constexpr char kSep = '\x1f';

std::string join(std::span<const std::string> ngram) {
  std::string key;
  for (std::size_t i = 0; i < ngram.size(); ++i) {
    if (i) key.push_back(kSep);
    key += ngram[i];
  }
  return key;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string format_percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  std::string s(buf);
  while (s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  return s;
}

}  // namespace

std::vector<std::string> contamination_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

NgramIndex::NgramIndex(std::size_t n) : n_(n) {
  if (n < 2) throw ConfigError("n-gram length must be >= 2, got " + std::to_string(n));
}

NgramIndex NgramIndex::bloom(std::size_t n, BloomOptions options) {
  if (options.bits == 0 || options.hashes == 0) throw ConfigError("bloom filter needs bits >= 1 and hashes >= 1");
  NgramIndex idx(n);
  idx.bit_count_ = options.bits;
  idx.hashes_ = options.hashes;
  idx.bits_.assign((options.bits + 63) / 64, 0);
  return idx;
}

std::size_t NgramIndex::size() const { return probabilistic() ? insertions_ : exact_.size(); }

void NgramIndex::insert(std::span<const std::string> ngram) {
  const std::string key = join(ngram);
  if (!probabilistic()) {
    exact_.insert(key);
    return;
  }
  ++insertions_;
  const std::uint64_t h1 = fnv1a(key, 0xcbf29ce484222325ULL);
  const std::uint64_t h2 = fnv1a(key, 0x84222325cbf29ce4ULL) | 1U;
  for (std::size_t i = 0; i < hashes_; ++i) {
    const std::size_t bit = static_cast<std::size_t>((h1 + i * h2) % bit_count_);
    bits_[bit / 64] |= std::uint64_t{1} << (bit % 64);
  }
}

bool NgramIndex::contains(std::span<const std::string> ngram) const {
  if (ngram.size() != n_) return false;
  const std::string key = join(ngram);
  if (!probabilistic()) return exact_.count(key) > 0;
  const std::uint64_t h1 = fnv1a(key, 0xcbf29ce484222325ULL);
  const std::uint64_t h2 = fnv1a(key, 0x84222325cbf29ce4ULL) | 1U;
  for (std::size_t i = 0; i < hashes_; ++i) {
    const std::size_t bit = static_cast<std::size_t>((h1 + i * h2) % bit_count_);
    if (!(bits_[bit / 64] >> (bit % 64) & 1U)) return false;
  }
  return true;
}

void NgramIndex::add_document(std::string_view text) {
  const auto tokens = contamination_tokens(text);
  for (std::size_t i = 0; i + n_ <= tokens.size(); ++i) {
    insert(std::span<const std::string>(tokens).subspan(i, n_));
  }
}

bool NgramIndex::is_dirty(std::string_view text) const {
  const auto tokens = contamination_tokens(text);
  for (std::size_t i = 0; i + n_ <= tokens.size(); ++i) {
    if (contains(std::span<const std::string>(tokens).subspan(i, n_))) return true;
  }
  return false;
}

NgramIndex build_ngram_index(std::span<const Document> corpus, std::size_t n) {
  NgramIndex index(n);
  for (const auto& d : corpus) index.add_document(d.text);
  return index;
}

ContaminationReport contamination_report(std::string dataset, std::string split,
                                         std::span<const std::string> examples, const NgramIndex& index) {
  if (examples.empty()) throw ConfigError("contamination report for " + dataset + ": dataset is empty");
  ContaminationReport r;
  r.dataset = std::move(dataset);
  r.split = std::move(split);
  r.n = index.n();
  r.total_count = examples.size();
  for (const auto& ex : examples) {
    const bool d = index.is_dirty(ex);
    r.dirty.push_back(d);
    if (d) ++r.dirty_count;
  }
  r.percent_clean = round2(100.0 * static_cast<double>(r.total_count - r.dirty_count) /
                           static_cast<double>(r.total_count));
  return r;
}

nlohmann::json contamination_json(std::span<const ContaminationReport> reports) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    rows.push_back({{"dataset", r.dataset},
                    {"split", r.split},
                    {"n", r.n},
                    {"dirty_count", r.dirty_count},
                    {"total_count", r.total_count},
                    {"percent_clean", r.percent_clean}});
  }
  return {{"datasets", rows}};
}

void write_contamination_csv(std::ostream& out, std::span<const ContaminationReport> reports) {
  out << "Dataset,Split,Dirty count,Total count,% clean\n";
  for (const auto& r : reports) {
    out << r.dataset << ',' << r.split << ',' << r.dirty_count << ',' << r.total_count << ','
        << format_percent(r.percent_clean) << '\n';
  }
}

}  // namespace sparselm
