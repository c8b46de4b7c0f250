// Copyright 2026 The sparselm Authors
// SPDX-License-Identifier: Apache-2.0

#include "sparselm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sparselm/error.hpp"
#include "sparselm/rng.hpp"

namespace sparselm {

double lr_schedule(std::uint64_t t, std::uint64_t warmup_steps, double peak) {
  if (t == 0) throw ConfigError("lr_schedule: step must be >= 1");
  if (t <= warmup_steps) return peak;
  return peak * std::sqrt(static_cast<double>(warmup_steps) / static_cast<double>(t));
}

std::uint64_t default_warmup_steps(std::uint64_t total_steps) {
  return std::max<std::uint64_t>(10, total_steps / 100);
}

namespace {

std::pair<std::size_t, std::size_t> matrix_view(const Shape& shape) {
  std::size_t rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
  return {rows, shape.back()};
}

}  // namespace

void adafactor_step(AdafactorState& state, std::span<Tensor> params, double lr) {
  if (state.moments.empty()) {
    state.moments.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = state.moments[i];
      const auto& shape = params[i].shape();
      if (shape.size() >= 2) {
        const auto [rows, cols] = matrix_view(shape);
        m.factored = true;
        m.row.assign(rows, 0.0);
        m.col.assign(cols, 0.0);
      } else {
        m.full.assign(params[i].numel(), 0.0);
      }
    }
  }
  if (state.moments.size() != params.size()) {
    throw DimensionError("adafactor_step: state tracks " + std::to_string(state.moments.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }

  state.step += 1;
  const double beta2 = 1.0 - std::pow(static_cast<double>(state.step), -state.decay_exponent);
  const double eps = state.epsilon;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.moments[i];
    auto g = params[i].mutable_grad();
    auto p = params[i].mutable_data();
    std::vector<double> u(g.size());

    if (m.factored) {
      const auto [rows, cols] = matrix_view(params[i].shape());
      std::vector<double> row_sq(rows, 0.0), col_sq(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double sq = g[r * cols + c] * g[r * cols + c] + eps;
          row_sq[r] += sq;
          col_sq[c] += sq;
        }
      }
      double row_total = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        m.row[r] = beta2 * m.row[r] + (1.0 - beta2) * row_sq[r];
        row_total += m.row[r];
      }
      for (std::size_t c = 0; c < cols; ++c) m.col[c] = beta2 * m.col[c] + (1.0 - beta2) * col_sq[c];
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const double v = m.row[r] * m.col[c] / row_total;
          u[r * cols + c] = g[r * cols + c] / std::sqrt(v);
        }
      }
    } else {
      for (std::size_t k = 0; k < g.size(); ++k) {
        m.full[k] = beta2 * m.full[k] + (1.0 - beta2) * (g[k] * g[k] + eps);
        u[k] = g[k] / std::sqrt(m.full[k]);
      }
    }

    double ms = 0.0;
    for (double x : u) ms += x * x;
    const double rms = std::sqrt(ms / static_cast<double>(u.size()));
    const double denom = std::max(1.0, rms / state.clip_threshold);
    for (std::size_t k = 0; k < u.size(); ++k) p[k] -= lr * u[k] / denom;
  }
}

std::vector<NamedArray> snapshot_optimizer(const AdafactorState& state, const Model& model) {
  std::vector<NamedArray> out;
  if (state.moments.empty()) return out;
  const auto params = model.parameters();
  if (params.size() != state.moments.size()) {
    throw ConfigError("optimizer state does not match the model's parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& m = state.moments[i];
    if (m.factored) {
      out.push_back({params[i].name + ".row", {m.row.size()}, m.row});
      out.push_back({params[i].name + ".col", {m.col.size()}, m.col});
    } else {
      out.push_back({params[i].name + ".full", {m.full.size()}, m.full});
    }
  }
  return out;
}

AdafactorState restore_optimizer(std::span<const NamedArray> slots, std::uint64_t step,
                                 const Model& model) {
  AdafactorState state;
  state.step = step;
  if (slots.empty()) return state;
  const auto find = [&](const std::string& name) -> const NamedArray& {
    auto it = std::find_if(slots.begin(), slots.end(), [&](const NamedArray& a) { return a.name == name; });
    if (it == slots.end()) throw ConfigError("checkpoint is missing optimizer slot " + name);
    return *it;
  };
  for (const auto& p : model.parameters()) {
    SecondMoment m;
    if (p.tensor.rank() >= 2) {
      m.factored = true;
      m.row = find(p.name + ".row").values;
      m.col = find(p.name + ".col").values;
    } else {
      m.full = find(p.name + ".full").values;
    }
    state.moments.push_back(std::move(m));
  }
  return state;
}

Batch make_lm_batch(std::span<const int> rows, std::size_t batch, std::size_t row_len, int pad_id) {
  if (row_len < 2) throw ConfigError("make_lm_batch: rows need at least 2 tokens");
  if (rows.size() != batch * row_len) {
    throw DimensionError("make_lm_batch: expected " + std::to_string(batch * row_len) + " ids, got " +
                         std::to_string(rows.size()));
  }
  Batch b;
  b.batch = batch;
  b.seq = row_len - 1;
  for (std::size_t r = 0; r < batch; ++r) {
    const auto row = rows.subspan(r * row_len, row_len);
    b.inputs.insert(b.inputs.end(), row.begin(), row.end() - 1);
    b.targets.insert(b.targets.end(), row.begin() + 1, row.end());
  }
  if (pad_id >= 0) std::replace(b.targets.begin(), b.targets.end(), pad_id, -1);
  return b;
}

PackedBatchSource::PackedBatchSource(std::vector<int> rows, std::size_t row_len, std::size_t batch,
                                     std::uint64_t seed, int pad_id)
    : rows_(std::move(rows)), row_len_(row_len), batch_(batch), pad_id_(pad_id), rng_(seed) {
  if (row_len_ < 2 || batch_ == 0) throw ConfigError("packed batches need row_len >= 2 and batch >= 1");
  const std::size_t block = row_len_ * batch_;
  if (rows_.empty() || rows_.size() % block != 0) {
    throw DimensionError("packed rows must form a positive whole number of batches");
  }
  order_.resize(rows_.size() / block);
  new_epoch();
}

void PackedBatchSource::new_epoch() {
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_.below(i)]);
  cursor_ = 0;
}

void PackedBatchSource::reshuffle(std::uint64_t seed) {
  rng_ = Rng(seed);
  new_epoch();
}

Batch PackedBatchSource::next() {
  if (cursor_ == order_.size()) new_epoch();
  const std::size_t block = row_len_ * batch_;
  const std::size_t b = order_[cursor_++];
  return make_lm_batch(std::span<const int>(rows_).subspan(b * block, block), batch_, row_len_, pad_id_);
}

void to_json(nlohmann::json& j, const TrainLogEntry& e) {
  j = {{"step", e.step},
       {"optimizer_step", e.optimizer_step},
       {"loss", std::isfinite(e.loss) ? nlohmann::json(e.loss) : nlohmann::json(nullptr)},
       {"cross_entropy", std::isfinite(e.cross_entropy) ? nlohmann::json(e.cross_entropy) : nlohmann::json(nullptr)},
       {"aux_loss", std::isfinite(e.aux_loss) ? nlohmann::json(e.aux_loss) : nlohmann::json(nullptr)},
       {"lr", e.lr},
       {"skipped", e.skipped},
       {"expert_load", e.expert_load}};
  if (e.rollback) {
    j["rollback"] = {{"at_step", e.rollback->at_step},
                     {"restored_step", e.rollback->restored_step},
                     {"new_data_seed", e.rollback->new_data_seed}};
  } else {
    j["rollback"] = nullptr;
  }
}

std::size_t TrainLog::rollbacks() const {
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [](const TrainLogEntry& e) { return e.rollback.has_value(); }));
}

void TrainLog::write_jsonl(std::ostream& out) const {
  for (const auto& e : entries_) out << nlohmann::json(e).dump() << '\n';
}

Trainer::Trainer(Model& model, TrainerOptions options) : model_(model), options_(options) {
  if (options_.aux_coeff < 0.0) throw ConfigError("aux_coeff must be >= 0");
  if (options_.peak_lr <= 0.0) throw ConfigError("peak learning rate must be > 0");
  for (auto& p : model_.parameters()) params_.push_back(p.tensor);
}

namespace {

Tensor lm_loss(const ForwardResult& fwd, const Batch& batch, std::size_t vocab) {
  const Tensor flat = reshape(fwd.logits, {batch.batch * batch.seq, vocab});
  return cross_entropy(flat, batch.targets);
}

}  // namespace

TrainLogEntry Trainer::train_step(const Batch& batch, const GradHook& hook) {
  TrainLogEntry entry;
  entry.step = ++attempts_;
  model_.zero_grad();

  const ForwardResult fwd = model_.forward(batch.inputs, batch.batch, batch.seq);
  const Tensor ce = lm_loss(fwd, batch, model_.config().vocab_size);
  Tensor total = ce;
  if (options_.aux_coeff != 0.0) total = add(ce, scale(fwd.aux_loss, options_.aux_coeff));
  total.backward();
  if (hook) hook(model_);

  entry.cross_entropy = ce.item();
  entry.aux_loss = fwd.aux_loss.item();
  entry.loss = total.item();
  for (const auto& d : fwd.dispatch) entry.expert_load.push_back(d.tokens_per_expert);

  bool finite = true;
  for (auto& p : params_) {
    if (p.has_grad() && !all_finite(p.grad())) {
      finite = false;
      break;
    }
  }
  if (!finite) {
    entry.skipped = true;
    entry.lr = 0.0;
  } else {
    entry.lr = lr_schedule(state_.step + 1, options_.warmup_steps, options_.peak_lr);
    adafactor_step(state_, params_, entry.lr);
  }
  entry.optimizer_step = state_.step;
  return entry;
}

double Trainer::evaluate(const Batch& batch) const {
  NoGradGuard guard;
  const ForwardResult fwd = model_.forward(batch.inputs, batch.batch, batch.seq);
  const Tensor ce = lm_loss(fwd, batch, model_.config().vocab_size);
  return ce.item() + options_.aux_coeff * fwd.aux_loss.item();
}

CheckpointManager::CheckpointManager(CheckpointPolicy policy, std::uint64_t data_seed)
    : policy_(policy), data_seed_(data_seed) {
  if (policy_.divergence_threshold <= 1.0) throw ConfigError("divergence_threshold must be > 1");
  if (policy_.window == 0) throw ConfigError("divergence window must be >= 1");
  if (policy_.interval == 0) throw ConfigError("checkpoint interval must be >= 1");
}

void CheckpointManager::save(const Model& model, const AdafactorState& state, std::uint64_t at_step) {
  Checkpoint c;
  c.config = model.config();
  c.parameters = snapshot_parameters(model);
  c.optimizer_step = state.step;
  c.optimizer_slots = snapshot_optimizer(state, model);
  c.metadata = {{"attempt", at_step}};
  latest_ = std::move(c);
  latest_step_ = at_step;
}

const Checkpoint& CheckpointManager::latest() const {
  if (!latest_) throw ConfigError("no checkpoint has been saved");
  return *latest_;
}

bool CheckpointManager::detect_divergence(double loss) {
  if (!std::isfinite(loss)) return true;
  if (!history_.empty()) {
    const std::size_t n = std::min(history_.size(), policy_.window);
    std::vector<double> tail(history_.end() - static_cast<std::ptrdiff_t>(n), history_.end());
    std::sort(tail.begin(), tail.end());
    const double median = n % 2 == 1 ? tail[n / 2] : 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
    if (loss > policy_.divergence_threshold * median) return true;
  }
  history_.push_back(loss);
  if (history_.size() > policy_.window) history_.erase(history_.begin());
  return false;
}

RollbackEvent CheckpointManager::rollback(Model& model, AdafactorState& state, std::uint64_t at_step) {
  if (!latest_) throw ConfigError("rollback requested before any checkpoint was saved");
  restore_parameters(model, latest_->parameters);
  AdafactorState restored = restore_optimizer(latest_->optimizer_slots, latest_->optimizer_step, model);
  state.step = restored.step;
  state.moments = std::move(restored.moments);
  ++rollbacks_;
  RollbackEvent ev;
  ev.at_step = at_step;
  ev.restored_step = latest_->optimizer_step;
  ev.new_data_seed = derive_seed(data_seed_, "rollback-" + std::to_string(rollbacks_));
  return ev;
}

TrainLog train_loop(Trainer& trainer, BatchSource& source, std::uint64_t steps, CheckpointManager* manager) {
  TrainLog log;
  if (manager) manager->save(trainer.model(), trainer.optimizer_state(), 0);
  for (std::uint64_t i = 0; i < steps; ++i) {
    TrainLogEntry entry = trainer.train_step(source.next());
    if (manager) {
      if (manager->detect_divergence(entry.loss)) {
        const RollbackEvent ev = manager->rollback(trainer.model(), trainer.optimizer_state(), entry.step);
        source.reshuffle(ev.new_data_seed);
        entry.rollback = ev;
        entry.optimizer_step = trainer.optimizer_state().step;
      } else if (!entry.skipped && trainer.optimizer_state().step % manager->policy().interval == 0) {
        manager->save(trainer.model(), trainer.optimizer_state(), entry.step);
      }
    }
    log.append(std::move(entry));
  }
  return log;
}

}  // namespace sparselm
