// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "sparselm/error.hpp"
#include "sparselm/eval.hpp"
#include "support/test_support.hpp"
#include "support/toy_models.hpp"

namespace sparselm {
namespace {

using testing::BigramLM;
using testing::TableLM;
using testing::beam_toy;
using testing::divergence_lm;
using testing::logs;
using testing::sequence_logp;

// Puts nearly all mass on continuing `target` whenever the prefix is a
// proper prefix of it.
class RiggedLM : public LanguageModel {
 public:
  RiggedLM(std::vector<int> target, std::size_t vocab) : target_(std::move(target)), vocab_(vocab) {}
  std::size_t vocab_size() const override { return vocab_; }
  std::vector<double> next_logprobs(std::span<const int> prefix) const override {
    const bool on_path =
        prefix.size() < target_.size() && std::equal(prefix.begin(), prefix.end(), target_.begin());
    if (!on_path) return std::vector<double>(vocab_, -std::log(static_cast<double>(vocab_)));
    const double eps = 1e-9;
    std::vector<double> lp(vocab_, std::log(eps / static_cast<double>(vocab_ - 1)));
    lp[static_cast<std::size_t>(target_[prefix.size()])] = std::log1p(-eps);
    return lp;
  }

 private:
  std::vector<int> target_;
  std::size_t vocab_;
};

// Backoff n-gram counts over the training strings; memorizes them for a
// large enough order.
class NgramLM : public LanguageModel {
 public:
  NgramLM(const std::vector<std::string>& corpus, std::size_t order) : order_(order) {
    ByteTokenizer tok;
    for (const auto& s : corpus) {
      const auto ids = tok.encode(s);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t n = 0; n < order_ && n <= i; ++n) {
          std::vector<int> key(ids.begin() + static_cast<std::ptrdiff_t>(i - n),
                               ids.begin() + static_cast<std::ptrdiff_t>(i));
          ++counts_[key][ids[i]];
        }
      }
    }
  }
  std::size_t vocab_size() const override { return kByteVocabSize; }
  std::vector<double> next_logprobs(std::span<const int> prefix) const override {
    const std::size_t longest = std::min(prefix.size(), order_ - 1);
    for (std::size_t n = longest + 1; n-- > 0;) {
      std::vector<int> key(prefix.end() - static_cast<std::ptrdiff_t>(n), prefix.end());
      auto it = counts_.find(key);
      if (it == counts_.end()) continue;
      const double eps = 1e-6;
      double total = 0;
      for (const auto& [tok, c] : it->second) total += c;
      std::vector<double> p(kByteVocabSize, eps);
      for (const auto& [tok, c] : it->second) p[static_cast<std::size_t>(tok)] += c;
      for (double& x : p) x = std::log(x / (total + eps * static_cast<double>(kByteVocabSize)));
      return p;
    }
    return std::vector<double>(kByteVocabSize, -std::log(static_cast<double>(kByteVocabSize)));
  }

 private:
  std::size_t order_;
  std::map<std::vector<int>, std::map<int, int>> counts_;
};

TEST(BuildPrompt, ZeroShotIsContext) {
  Rng rng(1);
  const std::vector<std::string> demos = {"Q: a\nA: b"};
  EXPECT_EQ(build_prompt(demos, "Q: c\nA:", 0, rng), "Q: c\nA:");
}

TEST(BuildPrompt, OneShot) {
  Rng rng(1);
  const std::vector<std::string> demos = {"Q: a\nA: b"};
  EXPECT_EQ(build_prompt(demos, "Q: c\nA:", 1, rng), "Q: a\nA: b\n\nQ: c\nA:");
}

TEST(BuildPrompt, TwoShotOrderComesFromSeed) {
  const std::vector<std::string> demos = {"d0", "d1"};
  std::set<std::string> seen;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    Rng a(seed), b(seed);
    const std::string p = build_prompt(demos, "ctx", 2, a);
    EXPECT_EQ(p, build_prompt(demos, "ctx", 2, b));
    EXPECT_TRUE(p == "d0\n\nd1\n\nctx" || p == "d1\n\nd0\n\nctx") << p;
    seen.insert(p);
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(BuildPrompt, DrawsWithoutReplacement) {
  std::vector<std::string> demos;
  for (int i = 0; i < 10; ++i) demos.push_back("d" + std::to_string(i));
  Rng rng(4);
  const std::string p = build_prompt(demos, "x", 6, rng);
  std::set<std::string> used;
  std::istringstream in(p);
  for (std::string line; std::getline(in, line);)
    if (!line.empty() && line != "x") {
      EXPECT_TRUE(used.insert(line).second) << line;
    }
  EXPECT_EQ(used.size(), 6u);
}

TEST(BuildPrompt, TooManyShots) {
  Rng rng(1);
  const std::vector<std::string> demos = {"a", "b"};
  EXPECT_THROW(build_prompt(demos, "c", 3, rng), ConfigError);
}

TEST(ScoreOption, NormalizationChangesWinner) {
  const TableLM lm = divergence_lm();
  const std::vector<int> ctx = {0}, a = {1, 1, 1}, b = {2};
  const double an = score_option(lm, ctx, a, Normalization::kLengthNormalized);
  const double bn = score_option(lm, ctx, b, Normalization::kLengthNormalized);
  const double ar = score_option(lm, ctx, a, Normalization::kRaw);
  const double br = score_option(lm, ctx, b, Normalization::kRaw);
  EXPECT_NEAR(an, -0.5, 1e-12);
  EXPECT_NEAR(bn, -1.2, 1e-12);
  EXPECT_NEAR(ar, -1.5, 1e-12);
  EXPECT_NEAR(br, -1.2, 1e-12);
  EXPECT_EQ(argmax_option(std::vector<double>{an, bn}), 0u);
  EXPECT_EQ(argmax_option(std::vector<double>{ar, br}), 1u);
}

TEST(ScoreOption, SingleTokenModesAgree) {
  const TableLM lm = divergence_lm();
  const std::vector<int> ctx = {0}, b = {2};
  EXPECT_EQ(score_option(lm, ctx, b, Normalization::kRaw), score_option(lm, ctx, b, Normalization::kLengthNormalized));
}

TEST(ScoreOption, UniformModel) {
  const TableLM lm(50);
  const std::vector<int> ctx = {1, 2};
  for (std::size_t k = 1; k <= 5; ++k) {
    const std::vector<int> opt(k, 7);
    EXPECT_NEAR(score_option(lm, ctx, opt, Normalization::kRaw), -static_cast<double>(k) * std::log(50.0), 1e-12);
    EXPECT_NEAR(score_option(lm, ctx, opt, Normalization::kLengthNormalized), -std::log(50.0), 1e-12);
  }
}

TEST(ScoreOption, RawIsLengthTimesNormalized) {
  Rng rng(2);
  TableLM lm(5);
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      std::vector<double> p(5);
      double z = 0;
      for (double& x : p) z += (x = rng.uniform() + 0.05);
      for (double& x : p) x /= z;
      lm.table[{a, b}] = logs(p);
    }
  for (int trial = 0; trial < 50; ++trial) {
    const std::vector<int> ctx = {static_cast<int>(rng.below(5))};
    const auto opt = testing::random_tokens(1 + rng.below(4), 5, rng);
    const double raw = score_option(lm, ctx, opt, Normalization::kRaw);
    const double norm = score_option(lm, ctx, opt, Normalization::kLengthNormalized);
    EXPECT_NEAR(raw, static_cast<double>(opt.size()) * norm, 1e-12);
  }
}

TEST(ScoreOption, EmptyOptionRejected) {
  const TableLM lm(5);
  const std::vector<int> ctx = {0};
  EXPECT_THROW(score_option(lm, ctx, {}, Normalization::kRaw), ConfigError);
}

TEST(ScoreOption, ArgmaxLowestIndexOnTies) {
  EXPECT_EQ(argmax_option(std::vector<double>{-1, -0.5, -0.5}), 1u);
  EXPECT_THROW(argmax_option(std::vector<double>{}), ConfigError);
}

Task choice_task(std::vector<Example> eval, Normalization n = Normalization::kLengthNormalized) {
  Task t;
  t.name = "toy";
  t.kind = TaskKind::kMultipleChoice;
  t.normalization = n;
  t.eval = std::move(eval);
  return t;
}

TEST(Classify, IdenticalOptionsPickFirst) {
  const ByteTokenizer tok;
  const NgramLM ngram({"some words here", "other text"}, 4);
  const Task task = choice_task({{"some", {"same", "same", "same"}, 1, {}}});
  EXPECT_EQ(classify(ngram, tok, task, 0, 0, 0), 0u);
}

TEST(Classify, RiggedModelPicksTarget) {
  const ByteTokenizer tok;
  const std::string ctx = "Is water wet? Answer:";
  std::vector<int> target = tok.encode(ctx);
  for (int t : tok.encode(option_text("no"))) target.push_back(t);
  const RiggedLM lm(target, kByteVocabSize);
  for (auto n : {Normalization::kLengthNormalized, Normalization::kRaw}) {
    const Task task = choice_task({{ctx, {"yes", "no", "maybe"}, 0, {}}}, n);
    EXPECT_EQ(classify(lm, tok, task, 0, 0, 0), 1u);
  }
}

TEST(Classify, SharedContextPrefixDoesNotMatter) {
  // A bigram model only sees the last context byte, so prepending text to
  // the context leaves every option score unchanged.
  Rng rng(5);
  std::vector<std::vector<double>> rows(kByteVocabSize);
  for (auto& row : rows) {
    std::vector<double> p(kByteVocabSize);
    double z = 0;
    for (double& x : p) z += (x = rng.uniform() + 1e-3);
    for (double& x : p) x /= z;
    row = logs(p);
  }
  const BigramLM lm(rows);
  const ByteTokenizer tok;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> options;
    for (int o = 0; o < 4; ++o) options.push_back(std::string(1 + rng.below(5), static_cast<char>('a' + rng.below(26))));
    const std::string ctx = "question " + std::to_string(trial) + ":";
    const Task plain = choice_task({{ctx, options, 0, {}}});
    const Task prefixed = choice_task({{"some long shared preamble. " + ctx, options, 0, {}}});
    EXPECT_EQ(classify(lm, tok, plain, 0, 0, 0), classify(lm, tok, prefixed, 0, 0, 0));
    for (const auto& o : options) {
      const auto ids = tok.encode(option_text(o));
      EXPECT_DOUBLE_EQ(score_option(lm, tok.encode(ctx), ids, Normalization::kRaw),
                       score_option(lm, tok.encode("zz " + ctx), ids, Normalization::kRaw));
    }
  }
}

std::pair<Task, std::vector<std::string>> memorization_fixture() {
  const std::vector<std::string> colors = {"red", "blue", "green"};
  Task task = choice_task({});
  std::vector<std::string> corpus;
  for (int i = 0; i < 20; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "%02d", i);
    Example ex;
    ex.context = std::string("item ") + id + " is";
    ex.options = colors;
    ex.answer_index = static_cast<std::size_t>((i * 7) % 3);
    corpus.push_back(demonstration_text(task, ex));
    task.eval.push_back(ex);
  }
  return {task, corpus};
}

TEST(Classify, MemorizedFixtureScoresPerfectly) {
  auto [task, corpus] = memorization_fixture();
  const NgramLM lm(corpus, 12);
  const ByteTokenizer tok;
  for (std::size_t i = 0; i < task.eval.size(); ++i) EXPECT_EQ(classify(lm, tok, task, i, 0, 0), task.eval[i].answer_index);
  const TaskResult r = evaluate_task(lm, tok, task);
  EXPECT_EQ(r.score, 100.0);
  EXPECT_EQ(r.examples, 20u);
  EXPECT_EQ(r.metric, "acc");
}

TEST(Classify, FewShotDemonstrationsDoNotBreakMemorization) {
  auto [task, corpus] = memorization_fixture();
  task.train = task.eval;
  const NgramLM lm(corpus, 12);
  EvalOptions opt;
  opt.shots = 3;
  opt.seed = 9;
  EXPECT_EQ(evaluate_task(lm, ByteTokenizer{}, task, opt).score, 100.0);
}

TEST(Beam, WidthOneIsGreedy) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::vector<double>> rows(6);
    for (auto& row : rows) {
      std::vector<double> p(6);
      double z = 0;
      for (double& x : p) z += (x = rng.uniform());
      for (double& x : p) x /= z;
      row = logs(p);
    }
    const BigramLM lm(rows);
    DecodeOptions o;
    o.max_tokens = 6;
    o.stop_tokens = {5};
    const std::vector<int> prompt = {static_cast<int>(rng.below(6))};
    EXPECT_EQ(generate_beam(lm, prompt, 1, o), generate_greedy(lm, prompt, o));
  }
}

TEST(Beam, WidthTwoFindsExhaustiveBest) {
  const BigramLM lm = beam_toy();
  const std::vector<int> prompt = {2};
  DecodeOptions o;
  o.max_tokens = 3;
  o.stop_tokens = {};
  std::vector<int> best;
  double best_lp = -1e300;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      for (int c = 0; c < 3; ++c) {
        const std::vector<int> s = {a, b, c};
        const double lp = sequence_logp(lm, prompt, s);
        if (lp > best_lp) {
          best_lp = lp;
          best = s;
        }
      }
  EXPECT_EQ(best, (std::vector<int>{1, 1, 1}));
  const auto greedy = generate_greedy(lm, prompt, o);
  EXPECT_EQ(greedy, (std::vector<int>{0, 0, 0}));
  EXPECT_LT(sequence_logp(lm, prompt, greedy), best_lp);
  EXPECT_EQ(generate_beam(lm, prompt, 2, o), best);
}

TEST(Beam, WiderIsNoWorseOnFixture) {
  const BigramLM lm = beam_toy();
  const std::vector<int> prompt = {2};
  DecodeOptions o;
  o.max_tokens = 4;
  o.stop_tokens = {};
  double prev = -1e300;
  for (std::size_t w = 1; w <= 6; ++w) {
    const auto seq = generate_beam(lm, prompt, w, o);
    const double lp = sequence_logp(lm, prompt, seq) / static_cast<double>(seq.size());
    EXPECT_GE(lp, prev - 1e-12) << "width " << w;
    prev = lp;
  }
}

TEST(Beam, StopsAtStopTokenAndStripsIt) {
  // Token 2 is almost certain after anything.
  const BigramLM lm({logs({0.1, 0.1, 0.8}), logs({0.1, 0.1, 0.8}), logs({0.1, 0.1, 0.8})});
  DecodeOptions o;
  o.max_tokens = 10;
  o.stop_tokens = {2};
  const std::vector<int> prompt = {0};
  EXPECT_TRUE(generate_beam(lm, prompt, 3, o).empty());
  EXPECT_TRUE(generate_greedy(lm, prompt, o).empty());
  EXPECT_THROW(generate_beam(lm, prompt, 0, o), ConfigError);
}

TEST(TopK, KOneIsArgmax) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> lp(9);
    for (double& x : lp) x = rng.normal();
    EXPECT_EQ(static_cast<std::size_t>(sample_topk_token(lp, 1, 1.0, rng)), argmax_option(lp));
  }
}

TEST(TopK, FrequenciesMatchRenormalizedSoftmax) {
  const std::vector<double> p = {0.4, 0.25, 0.15, 0.12, 0.08};
  const auto lp = logs(p);
  const int n = 100000;
  struct Case {
    std::size_t k;
    double temperature;
  };
  for (const Case c : {Case{5, 1.0}, Case{3, 1.0}, Case{4, 0.5}}) {
    std::vector<double> want(5, 0.0);
    double z = 0;
    for (std::size_t i = 0; i < c.k; ++i) z += (want[i] = std::pow(p[i], 1.0 / c.temperature));
    for (double& w : want) w /= z;
    Rng rng(11);
    std::vector<int> counts(5, 0);
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_topk_token(lp, c.k, c.temperature, rng))];
    for (std::size_t i = 0; i < 5; ++i) {
      const double sigma = std::sqrt(n * want[i] * (1 - want[i]));
      EXPECT_LE(std::abs(counts[i] - n * want[i]), 3 * sigma + 1e-9) << "k=" << c.k << " token " << i;
      if (i >= c.k) {
        EXPECT_EQ(counts[i], 0);
      }
    }
  }
}

TEST(TopK, NeverLeavesTopK) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> lp(12);
    for (double& x : lp) x = rng.normal() * 3;
    const std::size_t k = 1 + rng.below(12);
    std::vector<double> sorted = lp;
    std::sort(sorted.rbegin(), sorted.rend());
    const int t = sample_topk_token(lp, k, 0.7 + rng.uniform(), rng);
    EXPECT_GE(lp[static_cast<std::size_t>(t)], sorted[k - 1]);
  }
}

TEST(TopK, RejectsBadArguments) {
  Rng rng(1);
  const std::vector<double> lp = {0.0, -1.0};
  EXPECT_THROW(sample_topk_token(lp, 0, 1.0, rng), ConfigError);
  EXPECT_THROW(sample_topk_token(lp, 1, 0.0, rng), ConfigError);
}

TEST(TopK, SequenceSamplingIsSeeded) {
  const BigramLM lm = beam_toy();
  const std::vector<int> prompt = {2};
  DecodeOptions o;
  o.max_tokens = 12;
  o.stop_tokens = {};
  Rng a(5), b(5);
  const auto s = sample_topk(lm, prompt, 2, 1.0, a, o);
  EXPECT_EQ(s, sample_topk(lm, prompt, 2, 1.0, b, o));
  EXPECT_EQ(s.size(), 12u);
}

TEST(Metrics, NormalizeAnswer) {
  EXPECT_EQ(normalize_answer("The  Cat, sat!"), "cat sat");
  EXPECT_EQ(normalize_answer("An apple a day"), "apple day");
  EXPECT_EQ(normalize_answer("  "), "");
}

TEST(Metrics, ExactMatchAndF1Goldens) {
  const std::vector<std::string> cat = {"cat sat"};
  auto m = generative_metrics("the cat sat", cat);
  EXPECT_EQ(m.em, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  const std::vector<std::string> dog = {"dog ran"};
  m = generative_metrics("cat sat", dog);
  EXPECT_EQ(m.em, 0.0);
  EXPECT_EQ(m.f1, 0.0);
  // Two shared tokens out of three on both sides.
  const std::vector<std::string> fox = {"the quick red fox"};
  m = generative_metrics("a quick brown fox", fox);
  EXPECT_EQ(m.em, 0.0);
  EXPECT_NEAR(m.f1, 2.0 / 3.0, 1e-15);
  // Precision 1, recall 1/2.
  const std::vector<std::string> long_ref = {"paris france"};
  EXPECT_NEAR(generative_metrics("Paris", long_ref).f1, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, BestReferenceWins) {
  const std::vector<std::string> refs = {"london", "Paris", "paris france"};
  const auto m = generative_metrics("paris", refs);
  EXPECT_EQ(m.em, 1.0);
  EXPECT_EQ(m.f1, 1.0);
  EXPECT_THROW(generative_metrics("x", std::vector<std::string>{}), ConfigError);
}

TEST(Metrics, F1Properties) {
  Rng rng(13);
  const std::vector<std::string> words = {"red", "fox", "dog", "ran", "cat", "sat", "hat"};
  for (int trial = 0; trial < 200; ++trial) {
    std::string a, b;
    for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i) a += words[rng.below(words.size())] + " ";
    for (std::size_t i = 0, n = 1 + rng.below(5); i < n; ++i) b += words[rng.below(words.size())] + " ";
    const auto ab = generative_metrics(a, std::vector<std::string>{b});
    const auto ba = generative_metrics(b, std::vector<std::string>{a});
    EXPECT_NEAR(ab.f1, ba.f1, 1e-15);
    EXPECT_GE(ab.f1, 0.0);
    EXPECT_LE(ab.f1, 1.0);
    if (ab.em == 1.0) {
      EXPECT_EQ(ab.f1, 1.0);
    }
    EXPECT_EQ(generative_metrics(a, std::vector<std::string>{a}).em, 1.0);
  }
}

TEST(EvaluateTask, GenerativeMemorization) {
  Task task;
  task.name = "gen";
  task.kind = TaskKind::kGenerative;
  task.group = TaskGroup::kNlg;
  std::vector<std::string> corpus;
  const std::vector<std::string> answers = {"paris", "rome", "oslo", "lima"};
  for (std::size_t i = 0; i < answers.size(); ++i) {
    Example ex;
    ex.context = "capital " + std::to_string(i) + ":";
    ex.references = {answers[i]};
    corpus.push_back(demonstration_text(task, ex) + "\n");
    task.eval.push_back(ex);
  }
  const NgramLM lm(corpus, 14);
  EvalOptions opt;
  opt.beam_width = 2;
  opt.max_tokens = 8;
  const TaskResult r = evaluate_task(lm, ByteTokenizer{}, task, opt);
  EXPECT_EQ(r.score, 100.0);
  EXPECT_EQ(r.metric, "acc (em)");
  task.metric = Metric::kF1;
  EXPECT_EQ(evaluate_task(lm, ByteTokenizer{}, task, opt).metric, "f1");
}

TEST(EvaluateTask, ChoiceF1UsesOptionText) {
  // A model that always prefers the first option, scored by F1 against the
  // answer option.
  const ByteTokenizer tok;
  Task task = choice_task({{"q", {"red fox", "red dog"}, 1, {}}});
  task.metric = Metric::kF1;
  std::vector<int> target = tok.encode("q");
  for (int t : tok.encode(option_text("red fox"))) target.push_back(t);
  const RiggedLM lm(target, kByteVocabSize);
  EXPECT_NEAR(evaluate_task(lm, tok, task).score, 50.0, 1e-12);
}

TEST(EvaluateTask, EmptyTaskRejected) {
  const Task task = choice_task({});
  EXPECT_THROW(evaluate_task(TableLM(4), ByteTokenizer{}, task), ConfigError);
}

TaskResult result(std::string name, TaskGroup g, std::string cat, double score) {
  TaskResult r;
  r.name = std::move(name);
  r.group = g;
  r.category = std::move(cat);
  r.score = score;
  r.metric = "acc";
  r.split = "dev";
  return r;
}

TEST(Aggregate, MacroAverages) {
  {
    const std::vector<TaskResult> one = {result("a", TaskGroup::kNlu, "x", 50)};
    const Aggregate agg = aggregate(one);
    EXPECT_EQ(*agg.avg_nlu, 50.0);
    EXPECT_FALSE(agg.avg_nlg.has_value());
  }
  {
    const std::vector<TaskResult> two = {result("a", TaskGroup::kNlu, "x", 40), result("b", TaskGroup::kNlu, "x", 60)};
    EXPECT_EQ(*aggregate(two).avg_nlu, 50.0);
  }
  const std::vector<TaskResult> mix = {
      result("TriviaQA", TaskGroup::kNlg, "open_domain_qa", 70), result("NQS", TaskGroup::kNlg, "open_domain_qa", 30),
      result("DROP", TaskGroup::kNlg, "reading_comprehension", 40),
      result("PIQA", TaskGroup::kNlu, "commonsense_reasoning", 80),
      result("ARC-e", TaskGroup::kNlu, "commonsense_reasoning", 60),
      result("RACE-h", TaskGroup::kNlu, "reading_comprehension", 20)};
  const Aggregate agg = aggregate(mix);
  EXPECT_NEAR(*agg.avg_nlg, 140.0 / 3.0, 1e-12);
  EXPECT_NEAR(*agg.avg_nlu, 160.0 / 3.0, 1e-12);
  EXPECT_EQ(agg.per_category.at("open_domain_qa"), 50.0);
  EXPECT_EQ(agg.per_category.at("commonsense_reasoning"), 70.0);
  EXPECT_EQ(agg.per_category.at("reading_comprehension"), 30.0);
  EXPECT_THROW(aggregate(std::vector<TaskResult>{}), ConfigError);

  const auto j = eval_report_json(mix, agg);
  EXPECT_EQ(j["tasks"].size(), 6u);
  EXPECT_EQ(j["tasks"][0]["group"], "nlg");
  EXPECT_EQ(j["aggregate"]["per_category"]["open_domain_qa"], 50.0);
  EXPECT_TRUE(eval_report_json(std::vector<TaskResult>{mix[3]}, aggregate(std::vector<TaskResult>{mix[3]}))["aggregate"]["avg_nlg"]
                  .is_null());
}

TEST(Report, CsvFormat) {
  std::vector<TaskResult> rs = {result("TriviaQA", TaskGroup::kNlg, "open_domain_qa", 70.04),
                                result("odd,name", TaskGroup::kNlu, "x", 12.25)};
  rs[0].metric = "acc (em)";
  rs[0].shots = 1;
  std::ostringstream out;
  write_eval_csv(out, rs);
  EXPECT_EQ(out.str(), "Name,Metric,Split,Shots,Score\nTriviaQA,acc (em),dev,1,70.0\n\"odd,name\",acc,dev,0,12.2\n");
}

TEST(TaskFile, RoundTrip) {
  Task t;
  t.name = "rt";
  t.kind = TaskKind::kMultipleChoice;
  t.normalization = Normalization::kRaw;
  t.metric = Metric::kF1;
  t.shots = 2;
  t.category = "superglue";
  t.group = TaskGroup::kNlu;
  t.split = "test";
  t.train = {{"c1", {"a", "b"}, 1, {}}, {"c2 \"quoted\"\n", {"x", "y", "z"}, 2, {}}};
  t.eval = {{"c3", {"p", "q"}, 0, {}}};
  std::ostringstream out;
  write_task(out, t);
  std::istringstream in(out.str());
  const Task back = read_task(in);
  EXPECT_EQ(back.name, t.name);
  EXPECT_EQ(back.normalization, t.normalization);
  EXPECT_EQ(back.metric, t.metric);
  EXPECT_EQ(back.shots, 2u);
  EXPECT_EQ(back.category, t.category);
  EXPECT_EQ(back.split, "test");
  ASSERT_EQ(back.train.size(), 2u);
  EXPECT_EQ(back.train[1].context, t.train[1].context);
  EXPECT_EQ(back.train[1].options, t.train[1].options);
  EXPECT_EQ(back.train[1].answer_index, 2u);
  ASSERT_EQ(back.eval.size(), 1u);
  std::ostringstream again;
  write_task(again, back);
  EXPECT_EQ(again.str(), out.str());
}

TEST(TaskFile, ValidationErrors) {
  const auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return read_task(in);
  };
  const std::string header = R"({"name":"t","kind":"multiple_choice"})";
  EXPECT_THROW(parse(""), ConfigError);
  EXPECT_THROW(parse(header + "\n" + R"({"context":"c","options":["a"],"answer":0})"), ConfigError);
  EXPECT_THROW(parse(header + "\n" + R"({"context":"c","options":["a","b"],"answer":2})"), ConfigError);
  EXPECT_THROW(parse(header + "\n{not json"), ConfigError);
  EXPECT_THROW(parse(R"({"name":"t","kind":"essay"})"), ConfigError);
  EXPECT_THROW(parse(R"({"name":"t","kind":"generative"})" "\n" R"({"context":"c","references":[]})"), ConfigError);
  EXPECT_THROW(read_task(std::filesystem::path("/nonexistent/task.jsonl")), IoError);
  EXPECT_EQ(parse(header + "\n\n" + R"({"context":"c","options":["a","b"],"answer":1})").eval.size(), 1u);
}

TEST(Registry, TwentyNineTasksInSevenCategories) {
  const auto& reg = benchmark_registry();
  ASSERT_EQ(reg.size(), 29u);
  std::set<std::string> names, cats;
  std::size_t nlg = 0;
  for (const auto& b : reg) {
    names.insert(b.name);
    cats.insert(b.category);
    if (b.group == TaskGroup::kNlg) {
      ++nlg;
      EXPECT_EQ(b.kind, TaskKind::kGenerative) << b.name;
    }
  }
  EXPECT_EQ(names.size(), 29u);
  EXPECT_EQ(cats.size(), 7u);
  EXPECT_EQ(nlg, 8u);
  EXPECT_EQ(find_benchmark("COPA")->normalization, Normalization::kRaw);
  EXPECT_EQ(find_benchmark("ReCoRD")->normalization, Normalization::kRaw);
  EXPECT_EQ(find_benchmark("MultiRC")->metric, Metric::kF1);
  EXPECT_FALSE(find_benchmark("GSM8K").has_value());
}

ModelConfig tiny() {
  ModelConfig c;
  c.num_layers = 2;
  c.model_dim = 8;
  c.hidden_dim = 16;
  c.num_heads = 2;
  c.head_dim = 4;
  c.num_experts = 2;
  c.vocab_size = kByteVocabSize;
  c.seq_len = 8;
  c.batch_size = 1;
  c.rel_buckets = 8;
  c.rel_max_distance = 16;
  c.capacity_factor = 8;
  return c;
}

TEST(ModelAdapter, BatchedContinuationMatchesIncremental) {
  const Model m = Model::build(tiny(), 3);
  const ModelLanguageModel lm(m);
  Rng rng(14);
  for (std::size_t ctx_len : {1u, 3u, 4u}) {
    const auto ctx = testing::random_tokens(ctx_len, 256, rng);
    const auto cont = testing::random_tokens(3, 256, rng);
    const auto fast = lm.continuation_logprobs(ctx, cont);
    const auto slow = lm.LanguageModel::continuation_logprobs(ctx, cont);
    ASSERT_EQ(fast.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(fast[i], slow[i], 1e-10) << "ctx " << ctx_len;
  }
  const auto lp = lm.next_logprobs({});
  double z = 0;
  for (double x : lp) z += std::exp(x);
  EXPECT_NEAR(z, 1.0, 1e-12);
}

}  // namespace
}  // namespace sparselm
