// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point. Every subcommand reads a RunConfig, writes JSON
// reports under the output directory and prints a short summary.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sparselm/checkpoint.hpp"
#include "sparselm/contamination.hpp"
#include "sparselm/cost.hpp"
#include "sparselm/data.hpp"
#include "sparselm/error.hpp"
#include "sparselm/eval.hpp"
#include "sparselm/model.hpp"
#include "sparselm/run_config.hpp"
#include "sparselm/shardplan.hpp"
#include "sparselm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sparselm;

namespace {

enum ExitCode : int {
  kOk = 0,
  kRuntimeError = 1,
  kUsageError = 2,
  kUnknownKey = 3,
  kInvalidConfig = 4,
  kMissingFile = 5,
  kPlanningError = 6,
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve(const CommonOptions& o) {
  RunConfig c = o.config.empty() ? load_run_config(json::object(), o.sets) : load_run_config(fs::path(o.config), o.sets);
  if (!o.out.empty()) c.out_dir = o.out;
  if (o.seed) c.seed = *o.seed;
  fs::create_directories(c.out_dir);
  return c;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::vector<int> training_rows(const RunConfig& c, const ModelConfig& m) {
  const std::size_t row_len = m.seq_len + 1;
  std::vector<std::vector<int>> docs;
  ByteTokenizer tok;
  if (!c.train.corpus.empty()) {
    require_file(c.train.corpus, "training corpus");
    for (const auto& d : read_documents(fs::path(c.train.corpus))) docs.push_back(tok.encode(d.text));
  } else {
    MarkovSource source(16, 3, c.stream_seed("data"));
    Rng rng(c.stream_seed("data-sample"));
    const std::size_t needed = 8 * m.batch_size * row_len;
    std::size_t total = 0;
    while (total < needed) {
      docs.push_back(source.sample(row_len * 2, rng));
      total += docs.back().size() + 1;
    }
  }
  return pack_examples(docs, row_len, m.batch_size);
}

int cmd_train(const RunConfig& c) {
  const ModelConfig mc = c.resolved_model();
  Model model = Model::build(mc, c.stream_seed("model"));
  TrainerOptions opts;
  opts.aux_coeff = c.train.aux_coeff;
  opts.peak_lr = c.train.peak_lr;
  opts.warmup_steps = c.train.warmup_steps ? c.train.warmup_steps : default_warmup_steps(c.train.steps);
  Trainer trainer(model, opts);
  PackedBatchSource source(training_rows(c, mc), mc.seq_len + 1, mc.batch_size, c.stream_seed("data-order"), kPadId);
  CheckpointPolicy policy{c.train.checkpoint_interval, c.train.divergence_threshold, c.train.divergence_window};
  CheckpointManager manager(policy, c.stream_seed("data-order"));
  const TrainLog log = train_loop(trainer, source, c.train.steps, &manager);

  const fs::path out(c.out_dir);
  {
    auto f = open_out(out / "train_log.jsonl");
    log.write_jsonl(f);
  }
  Checkpoint ck;
  ck.config = mc;
  ck.parameters = snapshot_parameters(model);
  ck.optimizer_step = trainer.optimizer_state().step;
  ck.optimizer_slots = snapshot_optimizer(trainer.optimizer_state(), model);
  ck.metadata = {{"seed", c.seed}, {"steps", c.train.steps}};
  save_checkpoint(out / "checkpoint.bin", ck);

  std::size_t skipped = 0;
  for (const auto& e : log.entries()) skipped += e.skipped ? 1 : 0;
  const auto& last = log.entries().empty() ? TrainLogEntry{} : log.entries().back();
  json report = {{"steps", c.train.steps},
                 {"optimizer_steps", trainer.optimizer_state().step},
                 {"final_loss", last.loss},
                 {"final_cross_entropy", last.cross_entropy},
                 {"final_aux_loss", last.aux_loss},
                 {"skipped_steps", skipped},
                 {"rollbacks", log.rollbacks()},
                 {"parameter_checksum", model.checksum()},
                 {"checkpoint", (out / "checkpoint.bin").string()},
                 {"model", mc}};
  write_json(out / "train_report.json", report);
  std::cout << "trained " << c.train.steps << " steps, final loss " << last.loss << ", rollbacks "
            << log.rollbacks() << ", skipped " << skipped << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& c) {
  if (c.eval.tasks.empty()) throw ConfigError("eval.tasks lists no task files");
  for (const auto& t : c.eval.tasks) require_file(t, "task file");
  require_file(c.eval.checkpoint, "checkpoint");
  Model model = c.eval.checkpoint.empty() ? Model::build(c.resolved_model(), c.stream_seed("model"))
                                          : model_from_checkpoint(load_checkpoint(c.eval.checkpoint));
  ModelLanguageModel lm(model);
  ByteTokenizer tok;
  EvalOptions opts;
  opts.shots = c.eval.shots;
  opts.seed = c.stream_seed("eval");
  opts.beam_width = c.eval.beam_width;
  opts.max_tokens = c.eval.max_tokens;
  std::vector<TaskResult> results;
  for (const auto& path : c.eval.tasks) results.push_back(evaluate_task(lm, tok, read_task(fs::path(path)), opts));
  const Aggregate agg = aggregate(results);
  const fs::path out(c.out_dir);
  write_json(out / "eval_report.json", eval_report_json(results, agg));
  {
    auto f = open_out(out / "eval_results.csv");
    write_eval_csv(f, results);
  }
  write_eval_csv(std::cout, results);
  if (agg.avg_nlg) std::cout << "avg NLG " << *agg.avg_nlg << '\n';
  if (agg.avg_nlu) std::cout << "avg NLU " << *agg.avg_nlu << '\n';
  return kOk;
}

int cmd_data_filter(const RunConfig& c) {
  if (c.data.corpus.empty()) throw ConfigError("data.corpus is required");
  if (c.data.curated.empty() || c.data.web.empty()) throw ConfigError("data.curated and data.web are required");
  require_file(c.data.corpus, "corpus");
  require_file(c.data.curated, "curated corpus");
  require_file(c.data.web, "web corpus");
  ClassifierTrainOptions copts;
  copts.hash_dim = c.data.hash_dim;
  copts.epochs = c.data.classifier_epochs;
  copts.learning_rate = c.data.classifier_lr;
  copts.seed = c.stream_seed("classifier");
  const auto curated = read_documents(fs::path(c.data.curated));
  const auto web = read_documents(fs::path(c.data.web));
  const QualityClassifier clf = train_quality_classifier(curated, web, copts);
  const auto docs = read_documents(fs::path(c.data.corpus));
  Rng rng(c.stream_seed("data"));
  FilterReport report;
  const auto kept = filter_documents(docs, clf, c.data.pareto_alpha, rng, &report);
  const fs::path out(c.out_dir);
  {
    auto f = open_out(out / "filtered.jsonl");
    write_documents(f, kept);
  }
  write_json(out / "filter_report.json", json(report));
  std::cout << "kept " << report.kept() << " of " << docs.size() << " documents\n";
  return kOk;
}

int cmd_data_mix(const RunConfig& c) {
  if (c.data.corpus.empty()) throw ConfigError("data.corpus is required");
  require_file(c.data.corpus, "corpus");
  const auto docs = read_documents(fs::path(c.data.corpus));
  MixtureSampler sampler(group_by_source(docs), c.data.mixture, c.stream_seed("data"));
  std::vector<Document> mixed;
  std::array<std::size_t, kNumSources> counts{};
  for (std::size_t i = 0; i < c.data.mix_count; ++i) {
    mixed.push_back(sampler.next());
    ++counts[static_cast<std::size_t>(mixed.back().source)];
  }
  const fs::path out(c.out_dir);
  {
    auto f = open_out(out / "mixed.jsonl");
    write_documents(f, mixed);
  }
  json per_source = json::object();
  for (const auto s : all_sources()) {
    const auto i = static_cast<std::size_t>(s);
    per_source[std::string(source_name(s))] = {
        {"weight", c.data.mixture.weights[i]},
        {"count", counts[i]},
        {"fraction", c.data.mix_count ? static_cast<double>(counts[i]) / static_cast<double>(c.data.mix_count) : 0.0}};
  }
  write_json(out / "mix_report.json", {{"draws", c.data.mix_count}, {"per_source", per_source}});
  std::cout << "sampled " << c.data.mix_count << " documents\n";
  return kOk;
}

std::vector<std::string> dataset_examples(const fs::path& path) {
  std::vector<std::string> out;
  try {
    const Task task = read_task(path);
    for (const auto& ex : task.eval) out.push_back(demonstration_text(task, ex));
    return out;
  } catch (const ConfigError&) {
    // Not a task file; fall back to plain documents.
  }
  for (const auto& d : read_documents(path)) out.push_back(d.text);
  return out;
}

int cmd_contamination(const RunConfig& c) {
  const auto& k = c.contamination;
  if (k.corpus.empty()) throw ConfigError("contamination.corpus is required");
  if (k.datasets.empty()) throw ConfigError("contamination.datasets lists no datasets");
  require_file(k.corpus, "corpus");
  for (const auto& d : k.datasets) require_file(d.path, "dataset");
  NgramIndex index = k.bloom ? NgramIndex::bloom(k.n, {k.bloom_bits, k.bloom_hashes}) : NgramIndex(k.n);
  for (const auto& d : read_documents(fs::path(k.corpus))) index.add_document(d.text);
  std::vector<ContaminationReport> reports;
  for (const auto& d : k.datasets) {
    reports.push_back(contamination_report(d.name, d.split, dataset_examples(d.path), index));
  }
  const fs::path out(c.out_dir);
  json j = contamination_json(reports);
  j["n"] = k.n;
  j["mode"] = k.bloom ? "bloom" : "exact";
  write_json(out / "contamination_report.json", j);
  {
    auto f = open_out(out / "contamination.csv");
    write_contamination_csv(f, reports);
  }
  write_contamination_csv(std::cout, reports);
  return kOk;
}

int cmd_shard_plan(const RunConfig& c) {
  const ModelConfig mc = c.resolved_model();
  const Mesh mesh{c.shard.mesh_x, c.shard.mesh_y};
  const ShardPlan p = plan(mc, mesh);
  const ValidationReport v = validate(p);
  const CommVolume comm = comm_volume(p);
  const auto memory = per_device_memory(p, c.shard.bytes_per_element);
  json violations = json::array();
  for (const auto& viol : v.violations) {
    json region = json::array();
    for (const auto& r : viol.region) region.push_back({r.begin, r.end});
    violations.push_back({{"tensor", viol.tensor}, {"kind", viol.kind}, {"region", region}});
  }
  json report = plan_json(p);
  report["valid"] = v.ok();
  report["violations"] = violations;
  report["comm"] = {{"dispatch_elements_per_layer", comm.dispatch_elements},
                    {"combine_elements_per_layer", comm.combine_elements},
                    {"moe_layers", p.moe_layers}};
  report["per_device_bytes"] = memory;
  write_json(fs::path(c.out_dir) / "shard_plan.json", report);

  std::cout << "mesh " << mesh.x << "x" << mesh.y << ", " << p.moe_layers << " MoE layers, "
            << (v.ok() ? "valid" : "INVALID") << '\n';
  std::cout << std::left << std::setw(8) << "device" << std::setw(6) << "x" << std::setw(6) << "y" << "bytes\n";
  for (std::size_t d = 0; d < memory.size(); ++d) {
    std::cout << std::left << std::setw(8) << d << std::setw(6) << d / mesh.y << std::setw(6) << d % mesh.y
              << memory[d] << '\n';
  }
  std::cout << "dispatch elements per MoE layer " << comm.dispatch_elements << '\n';
  return v.ok() ? kOk : kPlanningError;
}

int cmd_params(const RunConfig& c) {
  const ModelConfig mc = c.resolved_model();
  const ParamCounts counts = count_params(mc);
  const double gflops = flops_per_token(mc);
  const json report = {{"preset", c.preset ? json(*c.preset) : json(nullptr)},
                       {"n_params", counts.total},
                       {"n_act_params", counts.active},
                       {"gflops_per_token", gflops},
                       {"model", mc}};
  write_json(fs::path(c.out_dir) / "params.json", report);
  std::cout << std::left << std::setw(12) << "model" << std::setw(18) << "n_params" << std::setw(18)
            << "n_act_params" << "GFLOPs/token\n";
  std::cout << std::left << std::setw(12) << c.preset.value_or("custom") << std::setw(18) << counts.total
            << std::setw(18) << counts.active << gflops << '\n';
  return kOk;
}

int cmd_energy(const RunConfig& c) {
  const auto& e = c.energy;
  const double mwh = energy_estimate(e.chips, e.watts_per_chip, e.hours, e.pue);
  const double co2 = co2_estimate(mwh, e.tco2e_per_mwh);
  json report = {{"chips", e.chips},
                 {"watts_per_chip", e.watts_per_chip},
                 {"hours", e.hours},
                 {"pue", e.pue},
                 {"mwh", mwh},
                 {"tco2e_per_mwh", e.tco2e_per_mwh},
                 {"net_tco2e", co2},
                 {"reference_mwh", nullptr},
                 {"ratio_to_reference", nullptr}};
  if (e.reference_mwh) {
    if (!(*e.reference_mwh > 0.0)) throw ConfigError("energy.reference_mwh must be > 0");
    report["reference_mwh"] = *e.reference_mwh;
    report["ratio_to_reference"] = mwh / *e.reference_mwh;
  }
  write_json(fs::path(c.out_dir) / "energy.json", report);
  std::cout << std::fixed << std::setprecision(1) << mwh << " MWh, " << co2 << " net tCO2e\n";
  return kOk;
}

int report_error(const char* category, const std::exception& e, int code) {
  std::cerr << "error (" << category << "): " << e.what() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparselm: sparse mixture-of-experts language model toolkit"};
  app.require_subcommand(1);
  CommonOptions common;

  struct Command {
    const char* name;
    const char* help;
    int (*run)(const RunConfig&);
  };
  const std::vector<Command> commands = {
      {"train", "Train a model and write the log, report and checkpoint", cmd_train},
      {"eval", "Evaluate a model on task files", cmd_eval},
      {"data-filter", "Train the quality classifier and Pareto-filter a corpus", cmd_data_filter},
      {"data-mix", "Sample documents according to the mixture weights", cmd_data_mix},
      {"contamination", "Report n-gram overlap between a corpus and eval sets", cmd_contamination},
      {"shard-plan", "Plan and validate 2D sharding on a device mesh", cmd_shard_plan},
      {"params", "Print parameter counts and FLOPs per token", cmd_params},
      {"energy", "Estimate training energy and emissions", cmd_energy},
  };
  int (*selected)(const RunConfig&) = nullptr;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", common.config, "JSON run configuration");
    sub->add_option("--set", common.sets, "Override a config key, KEY=VALUE (repeatable)");
    sub->add_option("--out", common.out, "Output directory");
    sub->add_option("--seed", common.seed, "Master seed");
    sub->callback([&selected, run = cmd.run] { selected = run; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    return selected(resolve(common));
  } catch (const UnknownKeyError& e) {
    return report_error("unknown key", e, kUnknownKey);
  } catch (const IoError& e) {
    return report_error("missing file", e, kMissingFile);
  } catch (const PlanningError& e) {
    return report_error("planning", e, kPlanningError);
  } catch (const ConfigError& e) {
    return report_error("invalid config", e, kInvalidConfig);
  } catch (const DimensionError& e) {
    return report_error("invalid config", e, kInvalidConfig);
  } catch (const RangeError& e) {
    return report_error("invalid config", e, kInvalidConfig);
  } catch (const std::exception& e) {
    return report_error("runtime", e, kRuntimeError);
  }
}
