// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0
//
// Adafactor training with an inverse-square-root schedule, the weighted
// load-balancing loss, NaN/Inf update skipping and checkpoint rollback.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "json.hpp"

#include "sparselm/checkpoint.hpp"
#include "sparselm/model.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {

// Constant `peak` for t <= warmup_steps, then peak * sqrt(warmup_steps / t).
// Throws ConfigError for t == 0.
double lr_schedule(std::uint64_t t, std::uint64_t warmup_steps = 10000, double peak = 0.01);

// Default warmup for a run: 1% of its steps, at least 10.
std::uint64_t default_warmup_steps(std::uint64_t total_steps);

// Second-moment accumulator of one parameter: row/column sums for matrices,
// a full vector otherwise.
struct SecondMoment {
  bool factored = false;
  std::vector<double> row;
  std::vector<double> col;
  std::vector<double> full;

  bool operator==(const SecondMoment&) const = default;
};

struct AdafactorState {
  std::uint64_t step = 0;
  double clip_threshold = 1.0;
  // beta2(t) = 1 - t^(-decay_exponent)
  double decay_exponent = 0.8;
  double epsilon = 1e-30;
  std::vector<SecondMoment> moments;

  bool operator==(const AdafactorState&) const = default;
};

// One Adafactor update without first moment. Advances state.step, then for
// each parameter accumulates G^2 + epsilon with decay 1 - t^(-0.8), forms
// U = G / sqrt(V), scales U down to RMS <= clip_threshold and subtracts
// lr * U. Gradients are read from each tensor's grad buffer and must be
// finite. Accumulators are created on first use.
void adafactor_step(AdafactorState& state, std::span<Tensor> params, double lr);

std::vector<NamedArray> snapshot_optimizer(const AdafactorState& state, const Model& model);
AdafactorState restore_optimizer(std::span<const NamedArray> slots, std::uint64_t step,
                                 const Model& model);

// Next-token batch: inputs and targets are row-major [batch x seq].
struct Batch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> inputs;
  std::vector<int> targets;
};

// Splits packed rows of length row_len into inputs row[:-1] and targets
// row[1:]. Targets equal to `pad_id` become -1, which the loss skips.
Batch make_lm_batch(std::span<const int> rows, std::size_t batch, std::size_t row_len, int pad_id = -1);

struct RollbackEvent {
  std::uint64_t at_step = 0;
  std::uint64_t restored_step = 0;
  std::uint64_t new_data_seed = 0;
};

struct TrainLogEntry {
  std::uint64_t step = 0;            // attempt index, 1-based
  std::uint64_t optimizer_step = 0;  // updates applied so far
  double loss = 0.0;                 // cross-entropy + aux_coeff * aux
  double cross_entropy = 0.0;
  double aux_loss = 0.0;
  double lr = 0.0;
  bool skipped = false;
  // Per MoE layer: top-1 assignment counts per expert.
  std::vector<std::vector<std::size_t>> expert_load;
  std::optional<RollbackEvent> rollback;
};

void to_json(nlohmann::json& j, const TrainLogEntry& e);

class TrainLog {
 public:
  void append(TrainLogEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<TrainLogEntry>& entries() const { return entries_; }
  std::size_t rollbacks() const;
  // One JSON object per line.
  void write_jsonl(std::ostream& out) const;

 private:
  std::vector<TrainLogEntry> entries_;
};

struct TrainerOptions {
  double aux_coeff = 0.01;
  double peak_lr = 0.01;
  std::uint64_t warmup_steps = 10000;
};

class Trainer {
 public:
  Trainer(Model& model, TrainerOptions options);

  // Called between backward and the update; tests use it to corrupt grads.
  using GradHook = std::function<void(Model&)>;

  // Forward, backward and (unless any gradient is NaN/Inf) one Adafactor
  // update at lr_schedule(optimizer step + 1).
  TrainLogEntry train_step(const Batch& batch, const GradHook& hook = {});

  // Loss without updating anything.
  double evaluate(const Batch& batch) const;

  Model& model() { return model_; }
  AdafactorState& optimizer_state() { return state_; }
  const AdafactorState& optimizer_state() const { return state_; }
  const TrainerOptions& options() const { return options_; }
  std::uint64_t attempts() const { return attempts_; }

 private:
  Model& model_;
  TrainerOptions options_;
  AdafactorState state_;
  std::vector<Tensor> params_;
  std::uint64_t attempts_ = 0;
};

struct CheckpointPolicy {
  std::uint64_t interval = 100;
  // Diverged when loss > threshold * median of the trailing window.
  double divergence_threshold = 3.0;
  std::size_t window = 50;
};

class CheckpointManager {
 public:
  CheckpointManager(CheckpointPolicy policy, std::uint64_t data_seed);

  void save(const Model& model, const AdafactorState& state, std::uint64_t at_step);
  bool has_checkpoint() const { return latest_.has_value(); }
  const Checkpoint& latest() const;

  // True for a NaN/Inf loss or one exceeding threshold x trailing median.
  // Healthy losses join the trailing window.
  bool detect_divergence(double loss);

  // Restores parameters and optimizer state bit-exactly from the latest
  // checkpoint and draws a fresh data-order seed. Throws ConfigError when no
  // checkpoint exists.
  RollbackEvent rollback(Model& model, AdafactorState& state, std::uint64_t at_step);

  const CheckpointPolicy& policy() const { return policy_; }

 private:
  CheckpointPolicy policy_;
  std::uint64_t data_seed_;
  std::uint64_t rollbacks_ = 0;
  std::optional<Checkpoint> latest_;
  std::uint64_t latest_step_ = 0;
  std::vector<double> history_;
};

// Source of training batches whose order can be re-seeded after a rollback.
class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch next() = 0;
  virtual void reshuffle(std::uint64_t seed) = 0;
};

// Cycles through packed rows one batch at a time, visiting batches in a
// seeded random order that is redrawn every epoch.
class PackedBatchSource final : public BatchSource {
 public:
  // `rows` is row-major [n x row_len] with n a positive multiple of `batch`.
  // Targets equal to `pad_id` are ignored by the loss.
  PackedBatchSource(std::vector<int> rows, std::size_t row_len, std::size_t batch, std::uint64_t seed,
                    int pad_id = -1);

  Batch next() override;
  void reshuffle(std::uint64_t seed) override;
  std::size_t batches_per_epoch() const { return order_.size(); }

 private:
  void new_epoch();

  std::vector<int> rows_;
  std::size_t row_len_;
  std::size_t batch_;
  int pad_id_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Runs `steps` training steps. With a manager, a checkpoint is taken before
// the first step and every policy.interval applied updates, and a divergent
// step triggers rollback plus reshuffle.
TrainLog train_loop(Trainer& trainer, BatchSource& source, std::uint64_t steps,
                    CheckpointManager* manager = nullptr);

}  // namespace sparselm
