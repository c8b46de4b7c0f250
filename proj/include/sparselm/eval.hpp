// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Zero/one/few-shot evaluation: prompt assembly, log-likelihood option
// scoring, beam search and top-k sampling, EM/F1 and macro aggregation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "sparselm/data.hpp"
#include "sparselm/model.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {

enum class TaskKind { kMultipleChoice, kGenerative };
enum class Normalization { kLengthNormalized, kRaw };
enum class Metric { kAccuracyEm, kF1 };
enum class TaskGroup { kNlg, kNlu };

struct Example {
  std::string context;
  std::vector<std::string> options;  // multiple choice
  std::size_t answer_index = 0;      // multiple choice
  std::vector<std::string> references;  // generative
};

struct Task {
  std::string name;
  TaskKind kind = TaskKind::kMultipleChoice;
  Normalization normalization = Normalization::kLengthNormalized;
  Metric metric = Metric::kAccuracyEm;
  std::size_t shots = 0;
  std::string category;
  TaskGroup group = TaskGroup::kNlu;
  std::string split = "dev";
  std::vector<Example> train;  // demonstration pool
  std::vector<Example> eval;

  // Throws ConfigError for a choice example with < 2 options or an
  // out-of-range answer, or a generative example without references.
  void validate() const;
};

// Task file: JSON-lines whose first record is the header
//   {"name", "kind", "normalization", "metric", "shots", "category", "group", "split"}
// followed by example records
//   {"split": "train" | "eval", "context", "options", "answer"} or
//   {"split": ..., "context", "references"}.
Task read_task(std::istream& in);
Task read_task(const std::filesystem::path& path);
void write_task(std::ostream& out, const Task& task);

// Text of a solved example used as an in-context demonstration.
std::string demonstration_text(const Task& task, const Example& example);
// Continuation scored or generated after the prompt.
std::string option_text(std::string_view option);

// `shots` demonstrations drawn without replacement by `rng`, each followed by
// two newlines, then the context. Throws ConfigError when shots exceeds the
// pool.
std::string build_prompt(std::span<const std::string> demonstrations, std::string_view context,
                         std::size_t shots, Rng& rng);

// Autoregressive scorer over a fixed vocabulary.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  virtual std::size_t vocab_size() const = 0;
  // Log-probabilities of the next token given `prefix` (possibly empty).
  virtual std::vector<double> next_logprobs(std::span<const int> prefix) const = 0;
  // log P(continuation[t] | context, continuation[<t]) for each t.
  virtual std::vector<double> continuation_logprobs(std::span<const int> context,
                                                    std::span<const int> continuation) const;
};

// Adapter that runs a Model without recording gradients. Inputs are
// prefixed with BOS and left-truncated to the model's sequence length.
class ModelLanguageModel final : public LanguageModel {
 public:
  explicit ModelLanguageModel(const Model& model) : model_(model) {}
  std::size_t vocab_size() const override { return model_.config().vocab_size; }
  std::vector<double> next_logprobs(std::span<const int> prefix) const override;
  std::vector<double> continuation_logprobs(std::span<const int> context,
                                            std::span<const int> continuation) const override;

 private:
  const Model& model_;
};

std::vector<double> log_softmax(std::span<const double> logits);

// Sum of option token log-probabilities, divided by the option length when
// length-normalized. Throws ConfigError for an empty option.
double score_option(const LanguageModel& lm, std::span<const int> context_ids, std::span<const int> option_ids,
                    Normalization normalization);

// Index of the best-scoring option, lowest index on ties.
std::size_t argmax_option(std::span<const double> scores);

// Predicted option of task.eval[example_index], with demonstrations drawn
// from a stream derived from `seed`, the task name and the example index.
std::size_t classify(const LanguageModel& lm, const Tokenizer& tokenizer, const Task& task,
                     std::size_t example_index, std::size_t shots, std::uint64_t seed);

struct DecodeOptions {
  std::size_t max_tokens = 32;
  // Generation stops after any of these; the stop token is not returned.
  std::vector<int> stop_tokens = {kEosId};
};

// Beam search ranked by mean per-token log-probability. Width 1 is greedy.
std::vector<int> generate_beam(const LanguageModel& lm, std::span<const int> prompt_ids, std::size_t beam_width,
                               const DecodeOptions& options = {});

std::vector<int> generate_greedy(const LanguageModel& lm, std::span<const int> prompt_ids,
                                 const DecodeOptions& options = {});

// One draw from the renormalized top-k of softmax(logprobs / temperature).
int sample_topk_token(std::span<const double> logprobs, std::size_t k, double temperature, Rng& rng);

std::vector<int> sample_topk(const LanguageModel& lm, std::span<const int> prompt_ids, std::size_t k,
                             double temperature, Rng& rng, const DecodeOptions& options = {});

// Lowercase, drop punctuation and the articles a/an/the, collapse spaces.
std::string normalize_answer(std::string_view text);

struct GenerativeScore {
  double em = 0.0;
  double f1 = 0.0;
};

// Throws ConfigError when `references` is empty.
GenerativeScore generative_metrics(std::string_view prediction, std::span<const std::string> references);

struct TaskResult {
  std::string name;
  std::string metric;  // "acc", "acc (em)" or "f1"
  std::string split;
  std::size_t shots = 0;
  std::string normalization;
  TaskGroup group = TaskGroup::kNlu;
  std::string category;
  std::size_t examples = 0;
  double score = 0.0;  // 0-100
};

struct EvalOptions {
  // Overrides the task's own shot count when set.
  std::optional<std::size_t> shots;
  std::uint64_t seed = 0;
  std::size_t beam_width = 4;
  std::size_t max_tokens = 32;
};

TaskResult evaluate_task(const LanguageModel& lm, const Tokenizer& tokenizer, const Task& task,
                         const EvalOptions& options = {});

struct Aggregate {
  std::optional<double> avg_nlg;
  std::optional<double> avg_nlu;
  std::map<std::string, double> per_category;
};

// Unweighted means of the scores. Throws ConfigError for no results.
Aggregate aggregate(std::span<const TaskResult> results);

nlohmann::json eval_report_json(std::span<const TaskResult> results, const Aggregate& agg);
// Columns: Name, Metric, Split, Shots, Score.
void write_eval_csv(std::ostream& out, std::span<const TaskResult> results);

struct BenchmarkInfo {
  std::string name;
  std::string category;
  TaskGroup group;
  TaskKind kind;
  Metric metric;
  Normalization normalization;
  std::string split;
};

// The 29 benchmark tasks in their seven categories.
const std::vector<BenchmarkInfo>& benchmark_registry();
std::optional<BenchmarkInfo> find_benchmark(std::string_view name);

std::string_view to_string(TaskKind k);
std::string_view to_string(Normalization n);
std::string_view to_string(Metric m);
std::string_view to_string(TaskGroup g);

}  // namespace sparselm
