// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "sparselm/error.hpp"

namespace sparselm {

std::string_view to_string(TaskKind k) {
  return k == TaskKind::kMultipleChoice ? "multiple_choice" : "generative";
}
std::string_view to_string(Normalization n) {
  return n == Normalization::kLengthNormalized ? "length_normalized" : "raw";
}
std::string_view to_string(Metric m) { return m == Metric::kAccuracyEm ? "accuracy_em" : "f1"; }
std::string_view to_string(TaskGroup g) { return g == TaskGroup::kNlg ? "nlg" : "nlu"; }

namespace {

TaskKind parse_kind(const std::string& s) {
  if (s == "multiple_choice") return TaskKind::kMultipleChoice;
  if (s == "generative") return TaskKind::kGenerative;
  throw ConfigError("unknown task kind '" + s + "'");
}
Normalization parse_normalization(const std::string& s) {
  if (s == "length_normalized") return Normalization::kLengthNormalized;
  if (s == "raw") return Normalization::kRaw;
  throw ConfigError("unknown normalization '" + s + "'");
}
Metric parse_metric(const std::string& s) {
  if (s == "accuracy_em") return Metric::kAccuracyEm;
  if (s == "f1") return Metric::kF1;
  throw ConfigError("unknown metric '" + s + "'");
}
TaskGroup parse_group(const std::string& s) {
  if (s == "nlg") return TaskGroup::kNlg;
  if (s == "nlu") return TaskGroup::kNlu;
  throw ConfigError("unknown task group '" + s + "'");
}

}  // namespace

void Task::validate() const {
  if (name.empty()) throw ConfigError("task has no name");
  const auto check = [&](const Example& ex, std::size_t i) {
    if (kind == TaskKind::kMultipleChoice) {
      if (ex.options.size() < 2) {
        throw ConfigError(name + ": example " + std::to_string(i) + " needs at least 2 options");
      }
      if (ex.answer_index >= ex.options.size()) {
        throw ConfigError(name + ": example " + std::to_string(i) + " has an out-of-range answer");
      }
    } else if (ex.references.empty()) {
      throw ConfigError(name + ": example " + std::to_string(i) + " has no references");
    }
  };
  for (std::size_t i = 0; i < train.size(); ++i) check(train[i], i);
  for (std::size_t i = 0; i < eval.size(); ++i) check(eval[i], i);
}

Task read_task(std::istream& in) {
  Task task;
  std::string line;
  bool header = false;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!header) {
        task.name = j.at("name").get<std::string>();
        task.kind = parse_kind(j.at("kind").get<std::string>());
        task.normalization = parse_normalization(j.value("normalization", std::string("length_normalized")));
        task.metric = parse_metric(j.value("metric", std::string("accuracy_em")));
        task.shots = j.value("shots", std::size_t{0});
        task.category = j.value("category", std::string());
        task.group = parse_group(j.value("group", std::string("nlu")));
        task.split = j.value("split", std::string("dev"));
        header = true;
        continue;
      }
      Example ex;
      ex.context = j.at("context").get<std::string>();
      if (j.contains("options")) ex.options = j["options"].get<std::vector<std::string>>();
      if (j.contains("answer")) ex.answer_index = j["answer"].get<std::size_t>();
      if (j.contains("references")) ex.references = j["references"].get<std::vector<std::string>>();
      const auto split = j.value("split", std::string("eval"));
      if (split == "train") {
        task.train.push_back(std::move(ex));
      } else if (split == "eval") {
        task.eval.push_back(std::move(ex));
      } else {
        throw ConfigError("unknown example split '" + split + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("task line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!header) throw ConfigError("task file has no header record");
  task.validate();
  return task;
}

Task read_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file " + path.string());
  return read_task(in);
}

void write_task(std::ostream& out, const Task& task) {
  out << nlohmann::json{{"name", task.name},
                        {"kind", to_string(task.kind)},
                        {"normalization", to_string(task.normalization)},
                        {"metric", to_string(task.metric)},
                        {"shots", task.shots},
                        {"category", task.category},
                        {"group", to_string(task.group)},
                        {"split", task.split}}
             .dump()
      << '\n';
  const auto emit = [&](const Example& ex, const char* split) {
    nlohmann::json j = {{"split", split}, {"context", ex.context}};
    if (task.kind == TaskKind::kMultipleChoice) {
      j["options"] = ex.options;
      j["answer"] = ex.answer_index;
    } else {
      j["references"] = ex.references;
    }
    out << j.dump() << '\n';
  };
  for (const auto& ex : task.train) emit(ex, "train");
  for (const auto& ex : task.eval) emit(ex, "eval");
}

std::string option_text(std::string_view option) { return " " + std::string(option); }

std::string demonstration_text(const Task& task, const Example& example) {
  const std::string& answer =
      task.kind == TaskKind::kMultipleChoice ? example.options.at(example.answer_index) : example.references.at(0);
  return example.context + option_text(answer);
}

std::string build_prompt(std::span<const std::string> demonstrations, std::string_view context, std::size_t shots,
                         Rng& rng) {
  if (shots > demonstrations.size()) {
    throw ConfigError("requested " + std::to_string(shots) + " shots but only " +
                      std::to_string(demonstrations.size()) + " demonstrations are available");
  }
  std::vector<std::size_t> pool(demonstrations.size());
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  std::string prompt;
  for (std::size_t i = 0; i < shots; ++i) {
    const std::size_t j = i + rng.below(pool.size() - i);
    std::swap(pool[i], pool[j]);
    prompt += demonstrations[pool[i]];
    prompt += "\n\n";
  }
  prompt += context;
  return prompt;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

std::vector<double> LanguageModel::continuation_logprobs(std::span<const int> context,
                                                         std::span<const int> continuation) const {
  std::vector<int> prefix(context.begin(), context.end());
  std::vector<double> out;
  out.reserve(continuation.size());
  for (int tok : continuation) {
    const auto lp = next_logprobs(prefix);
    if (tok < 0 || static_cast<std::size_t>(tok) >= lp.size()) throw RangeError("token id outside the vocabulary");
    out.push_back(lp[static_cast<std::size_t>(tok)]);
    prefix.push_back(tok);
  }
  return out;
}

namespace {

// Logits of the model over `ids` with BOS prepended and left truncation.
// Returns the window actually fed and its [len x V] logits.
std::pair<std::vector<int>, std::vector<double>> run_window(const Model& model, std::span<const int> ids) {
  const std::size_t window = model.config().seq_len;
  std::vector<int> full;
  full.reserve(ids.size() + 1);
  full.push_back(kBosId);
  full.insert(full.end(), ids.begin(), ids.end());
  if (full.size() > window) full.erase(full.begin(), full.end() - static_cast<std::ptrdiff_t>(window));
  NoGradGuard guard;
  const auto fwd = model.forward(full, 1, full.size());
  return {std::move(full), std::vector<double>(fwd.logits.data().begin(), fwd.logits.data().end())};
}

}  // namespace

std::vector<double> ModelLanguageModel::next_logprobs(std::span<const int> prefix) const {
  const std::size_t v = vocab_size();
  const auto [ids, logits] = run_window(model_, prefix);
  return log_softmax(std::span<const double>(logits).subspan((ids.size() - 1) * v, v));
}

std::vector<double> ModelLanguageModel::continuation_logprobs(std::span<const int> context,
                                                              std::span<const int> continuation) const {
  // Every continuation token must be predicted from inside one window.
  if (continuation.size() + 1 > model_.config().seq_len) {
    return LanguageModel::continuation_logprobs(context, continuation);
  }
  std::vector<int> all(context.begin(), context.end());
  all.insert(all.end(), continuation.begin(), continuation.end());
  const std::size_t v = vocab_size();
  const auto [ids, logits] = run_window(model_, all);
  std::vector<double> out;
  const std::size_t first = ids.size() - continuation.size();
  for (std::size_t t = 0; t < continuation.size(); ++t) {
    const auto row = log_softmax(std::span<const double>(logits).subspan((first + t - 1) * v, v));
    const int tok = continuation[t];
    if (tok < 0 || static_cast<std::size_t>(tok) >= v) throw RangeError("token id outside the vocabulary");
    out.push_back(row[static_cast<std::size_t>(tok)]);
  }
  return out;
}

double score_option(const LanguageModel& lm, std::span<const int> context_ids, std::span<const int> option_ids,
                    Normalization normalization) {
  if (option_ids.empty()) throw ConfigError("score_option: option must be non-empty");
  const auto lps = lm.continuation_logprobs(context_ids, option_ids);
  const double total = std::accumulate(lps.begin(), lps.end(), 0.0);
  if (normalization == Normalization::kRaw) return total;
  return total / static_cast<double>(option_ids.size());
}

std::size_t argmax_option(std::span<const double> scores) {
  if (scores.empty()) throw ConfigError("argmax_option: no options");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

namespace {

std::string prompt_for(const Task& task, std::size_t example_index, std::size_t shots, std::uint64_t seed) {
  std::vector<std::string> demos;
  demos.reserve(task.train.size());
  for (const auto& ex : task.train) demos.push_back(demonstration_text(task, ex));
  Rng rng(derive_seed(seed, task.name + "#" + std::to_string(example_index)));
  return build_prompt(demos, task.eval.at(example_index).context, shots, rng);
}

}  // namespace

std::size_t classify(const LanguageModel& lm, const Tokenizer& tokenizer, const Task& task,
                     std::size_t example_index, std::size_t shots, std::uint64_t seed) {
  const Example& ex = task.eval.at(example_index);
  const auto context = tokenizer.encode(prompt_for(task, example_index, shots, seed));
  std::vector<double> scores;
  scores.reserve(ex.options.size());
  for (const auto& opt : ex.options) {
    scores.push_back(score_option(lm, context, tokenizer.encode(option_text(opt)), task.normalization));
  }
  return argmax_option(scores);
}

namespace {

struct Hypothesis {
  std::vector<int> ids;
  double logp = 0.0;
  bool finished = false;

  double normalized() const { return ids.empty() ? 0.0 : logp / static_cast<double>(ids.size()); }
};

bool is_stop(const DecodeOptions& o, int tok) {
  return std::find(o.stop_tokens.begin(), o.stop_tokens.end(), tok) != o.stop_tokens.end();
}

std::vector<int> strip_stop(std::vector<int> ids, const DecodeOptions& o) {
  if (!ids.empty() && is_stop(o, ids.back())) ids.pop_back();
  return ids;
}

}  // namespace

std::vector<int> generate_beam(const LanguageModel& lm, std::span<const int> prompt_ids, std::size_t beam_width,
                               const DecodeOptions& options) {
  if (beam_width == 0) throw ConfigError("beam width must be >= 1");
  std::vector<Hypothesis> beams(1);
  for (std::size_t step = 0; step < options.max_tokens; ++step) {
    std::vector<Hypothesis> pool;
    bool expanded = false;
    for (const auto& h : beams) {
      if (h.finished) {
        pool.push_back(h);
        continue;
      }
      expanded = true;
      std::vector<int> prefix(prompt_ids.begin(), prompt_ids.end());
      prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
      const auto lp = lm.next_logprobs(prefix);
      for (std::size_t v = 0; v < lp.size(); ++v) {
        Hypothesis n = h;
        n.ids.push_back(static_cast<int>(v));
        n.logp += lp[v];
        n.finished = is_stop(options, static_cast<int>(v));
        pool.push_back(std::move(n));
      }
    }
    if (!expanded) break;
    std::stable_sort(pool.begin(), pool.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.normalized() > b.normalized(); });
    if (pool.size() > beam_width) pool.resize(beam_width);
    beams = std::move(pool);
  }
  const auto best = std::max_element(beams.begin(), beams.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.normalized() < b.normalized();
  });
  return strip_stop(best->ids, options);
}

std::vector<int> generate_greedy(const LanguageModel& lm, std::span<const int> prompt_ids,
                                 const DecodeOptions& options) {
  std::vector<int> prefix(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> out;
  for (std::size_t step = 0; step < options.max_tokens; ++step) {
    const auto lp = lm.next_logprobs(prefix);
    const int tok = static_cast<int>(argmax_option(lp));
    out.push_back(tok);
    if (is_stop(options, tok)) break;
    prefix.push_back(tok);
  }
  return strip_stop(out, options);
}

int sample_topk_token(std::span<const double> logprobs, std::size_t k, double temperature, Rng& rng) {
  if (k == 0) throw ConfigError("top-k sampling needs k >= 1");
  if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be > 0");
  std::vector<std::size_t> idx(logprobs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logprobs[a] > logprobs[b] || (logprobs[a] == logprobs[b] && a < b);
                    });
  std::vector<double> scaled(k);
  for (std::size_t i = 0; i < k; ++i) scaled[i] = logprobs[idx[i]] / temperature;
  const auto lp = log_softmax(scaled);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += std::exp(lp[i]);
    if (u < acc) return static_cast<int>(idx[i]);
  }
  return static_cast<int>(idx[k - 1]);
}

std::vector<int> sample_topk(const LanguageModel& lm, std::span<const int> prompt_ids, std::size_t k,
                             double temperature, Rng& rng, const DecodeOptions& options) {
  std::vector<int> prefix(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> out;
  for (std::size_t step = 0; step < options.max_tokens; ++step) {
    const int tok = sample_topk_token(lm.next_logprobs(prefix), k, temperature, rng);
    out.push_back(tok);
    if (is_stop(options, tok)) break;
    prefix.push_back(tok);
  }
  return strip_stop(out, options);
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    lowered.push_back(static_cast<char>(std::tolower(c)));
  }
  std::string out;
  for (const auto& w : split_words(lowered)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

GenerativeScore generative_metrics(std::string_view prediction, std::span<const std::string> references) {
  if (references.empty()) throw ConfigError("generative_metrics needs at least one reference");
  const std::string pred = normalize_answer(prediction);
  const auto pred_tokens = split_words(pred);
  GenerativeScore best;
  for (const auto& ref : references) {
    const std::string gold = normalize_answer(ref);
    if (pred == gold) best.em = 1.0;
    const auto gold_tokens = split_words(gold);
    double f1 = 0.0;
    if (pred_tokens.empty() || gold_tokens.empty()) {
      f1 = pred_tokens == gold_tokens ? 1.0 : 0.0;
    } else {
      std::map<std::string, int> counts;
      for (const auto& t : gold_tokens) ++counts[t];
      std::size_t common = 0;
      for (const auto& t : pred_tokens) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
          --it->second;
          ++common;
        }
      }
      if (common > 0) {
        const double p = static_cast<double>(common) / static_cast<double>(pred_tokens.size());
        const double r = static_cast<double>(common) / static_cast<double>(gold_tokens.size());
        f1 = 2.0 * p * r / (p + r);
      }
    }
    best.f1 = std::max(best.f1, f1);
  }
  return best;
}

namespace {

std::string metric_label(const Task& task) {
  if (task.metric == Metric::kF1) return "f1";
  return task.kind == TaskKind::kMultipleChoice ? "acc" : "acc (em)";
}

}  // namespace

TaskResult evaluate_task(const LanguageModel& lm, const Tokenizer& tokenizer, const Task& task,
                         const EvalOptions& options) {
  if (task.eval.empty()) throw ConfigError("task " + task.name + " has no evaluation examples");
  const std::size_t shots = options.shots.value_or(task.shots);
  TaskResult r;
  r.name = task.name;
  r.metric = metric_label(task);
  r.split = task.split;
  r.shots = shots;
  r.normalization = std::string(to_string(task.normalization));
  r.group = task.group;
  r.category = task.category;
  r.examples = task.eval.size();

  double total = 0.0;
  for (std::size_t i = 0; i < task.eval.size(); ++i) {
    const Example& ex = task.eval[i];
    if (task.kind == TaskKind::kMultipleChoice) {
      const std::size_t pred = classify(lm, tokenizer, task, i, shots, options.seed);
      if (task.metric == Metric::kF1) {
        total += generative_metrics(ex.options[pred], std::span(&ex.options[ex.answer_index], 1)).f1;
      } else {
        total += pred == ex.answer_index ? 1.0 : 0.0;
      }
    } else {
      const auto prompt = tokenizer.encode(prompt_for(task, i, shots, options.seed));
      DecodeOptions decode;
      decode.max_tokens = options.max_tokens;
      decode.stop_tokens = {kEosId, '\n'};
      const std::string text = tokenizer.decode(generate_beam(lm, prompt, options.beam_width, decode));
      const auto m = generative_metrics(text, ex.references);
      total += task.metric == Metric::kF1 ? m.f1 : m.em;
    }
  }
  r.score = 100.0 * total / static_cast<double>(task.eval.size());
  return r;
}

Aggregate aggregate(std::span<const TaskResult> results) {
  if (results.empty()) throw ConfigError("aggregate: no task results");
  Aggregate agg;
  double nlg = 0.0, nlu = 0.0;
  std::size_t n_nlg = 0, n_nlu = 0;
  std::map<std::string, std::pair<double, std::size_t>> cats;
  for (const auto& r : results) {
    if (r.group == TaskGroup::kNlg) {
      nlg += r.score;
      ++n_nlg;
    } else {
      nlu += r.score;
      ++n_nlu;
    }
    if (!r.category.empty()) {
      auto& c = cats[r.category];
      c.first += r.score;
      ++c.second;
    }
  }
  if (n_nlg > 0) agg.avg_nlg = nlg / static_cast<double>(n_nlg);
  if (n_nlu > 0) agg.avg_nlu = nlu / static_cast<double>(n_nlu);
  for (const auto& [name, c] : cats) agg.per_category[name] = c.first / static_cast<double>(c.second);
  return agg;
}

nlohmann::json eval_report_json(std::span<const TaskResult> results, const Aggregate& agg) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& r : results) {
    tasks.push_back({{"name", r.name},
                     {"metric", r.metric},
                     {"split", r.split},
                     {"shots", r.shots},
                     {"normalization", r.normalization},
                     {"group", to_string(r.group)},
                     {"category", r.category},
                     {"examples", r.examples},
                     {"score", r.score}});
  }
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"tasks", tasks},
          {"aggregate", {{"avg_nlg", opt(agg.avg_nlg)}, {"avg_nlu", opt(agg.avg_nlu)}, {"per_category", agg.per_category}}}};
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_eval_csv(std::ostream& out, std::span<const TaskResult> results) {
  out << "Name,Metric,Split,Shots,Score\n";
  for (const auto& r : results) {
    std::ostringstream score;
    score << std::fixed << std::setprecision(1) << r.score;
    out << csv_field(r.name) << ',' << csv_field(r.metric) << ',' << csv_field(r.split) << ',' << r.shots << ','
        << score.str() << '\n';
  }
}

const std::vector<BenchmarkInfo>& benchmark_registry() {
  using K = TaskKind;
  using M = Metric;
  using N = Normalization;
  constexpr auto nlg = TaskGroup::kNlg;
  constexpr auto nlu = TaskGroup::kNlu;
  const std::string odqa = "open_domain_qa";
  const std::string cloze = "cloze_completion";
  const std::string wino = "winograd_style";
  const std::string csr = "commonsense_reasoning";
  const std::string rc = "reading_comprehension";
  const std::string sg = "superglue";
  const std::string nli = "nli";
  static const std::vector<BenchmarkInfo> registry = {
      {"TriviaQA", odqa, nlg, K::kGenerative, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"NQS", odqa, nlg, K::kGenerative, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"WebQS", odqa, nlg, K::kGenerative, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"LAMBADA", cloze, nlg, K::kGenerative, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"HellaSwag", cloze, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"StoryCloze", cloze, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"Winograd", wino, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"WinoGrande", wino, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"PIQA", csr, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"ARC-e", csr, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"ARC-c", csr, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"OpenBookQA", csr, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"DROP", rc, nlg, K::kGenerative, M::kF1, N::kLengthNormalized, "dev"},
      {"CoQA", rc, nlg, K::kGenerative, M::kF1, N::kLengthNormalized, "dev"},
      {"QuAC", rc, nlg, K::kGenerative, M::kF1, N::kLengthNormalized, "dev"},
      {"SQuADv2", rc, nlg, K::kGenerative, M::kF1, N::kLengthNormalized, "dev"},
      {"RACE-h", rc, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"RACE-m", rc, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"BoolQ", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"CB", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"COPA", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kRaw, "dev"},
      {"RTE", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"WiC", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"WSC", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "dev"},
      {"MultiRC", sg, nlu, K::kMultipleChoice, M::kF1, N::kLengthNormalized, "dev"},
      {"ReCoRD", sg, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kRaw, "dev"},
      {"ANLI-R1", nli, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"ANLI-R2", nli, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
      {"ANLI-R3", nli, nlu, K::kMultipleChoice, M::kAccuracyEm, N::kLengthNormalized, "test"},
  };
  return registry;
}

std::optional<BenchmarkInfo> find_benchmark(std::string_view name) {
  for (const auto& b : benchmark_registry()) {
    if (b.name == name) return b;
  }
  return std::nullopt;
}

}  // namespace sparselm
