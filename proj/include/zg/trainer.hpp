#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/attacks.hpp"
#include "zg/data.hpp"
#include "zg/engine.hpp"
#include "zg/rng.hpp"

namespace zg {

enum class ScheduleKind { cyclical, one_drop, constant };

inline std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::cyclical: return "cyclical";
    case ScheduleKind::one_drop: return "one-drop";
    case ScheduleKind::constant: return "constant";
  }
  return "?";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cyclical") return ScheduleKind::cyclical;
  if (s == "one-drop") return ScheduleKind::one_drop;
  if (s == "constant") return ScheduleKind::constant;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected cyclical, one-drop, constant)");
}

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::cyclical;
  double max_lr = 0.2;
  std::size_t epochs = 30;
  std::optional<std::size_t> drop_epoch;  ///< one-drop: first epoch (0-based) at the reduced rate
  double drop_factor = 10.0;

  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

/// Learning rate for optimizer step `step` of `total_steps`.
///
/// cyclical: triangle 0 -> max_lr at total/2 -> 0, evaluated per step.
/// one-drop: max_lr, divided by drop_factor from drop_epoch on (per epoch).
inline double lr_at(const LrSchedule& s, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step > total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  switch (s.kind) {
    case ScheduleKind::constant: return s.max_lr;
    case ScheduleKind::cyclical: {
      const double t = static_cast<double>(step);
      const double half = static_cast<double>(total_steps) / 2.0;
      return t <= half ? s.max_lr * t / half : s.max_lr * (static_cast<double>(total_steps) - t) / half;
    }
    case ScheduleKind::one_drop: {
      const std::size_t epoch = step * s.epochs / total_steps;
      const std::size_t drop = s.drop_epoch.value_or(s.epochs >= 2 ? s.epochs - 2 : s.epochs);
      return epoch >= drop ? s.max_lr / s.drop_factor : s.max_lr;
    }
  }
  return 0.0;
}

struct TrainConfig {
  AttackSpec attack;
  LrSchedule schedule;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::optional<double> grad_clip;
  std::size_t batch_size = 128;
  std::uint64_t master_seed = 0;
  std::size_t checkpoint_every = 1;
};

inline void validate(const TrainConfig& c) {
  validate(c.attack);
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (c.weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (c.grad_clip && !(*c.grad_clip > 0.0)) throw std::invalid_argument("grad_clip must be positive");
  if (c.schedule.epochs == 0) throw std::invalid_argument("schedule.epochs must be positive");
  if (!(c.schedule.max_lr >= 0.0)) throw std::invalid_argument("schedule.max_lr must be non-negative");
  if (!(c.schedule.drop_factor > 0.0)) throw std::invalid_argument("schedule.drop_factor must be positive");
  if (c.checkpoint_every == 0) throw std::invalid_argument("checkpoint_every must be positive");
}

/// Everything needed to continue a run: weights, momentum, how many epochs
/// are done, the RNG lineage and the attack in force (q can escalate).
struct TrainState {
  ParamSet params;
  ParamSet momentum;
  std::size_t epoch = 0;  ///< completed epochs
  RngLineage rng;
  AttackSpec attack;

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline TrainState initial_state(const ArchSpec& arch, const TrainConfig& config) {
  TrainState s;
  s.params = init_params(arch, stream_key(RngLineage{config.master_seed, 0}, Purpose::init).value);
  s.momentum = zeros_like(s.params);
  s.rng = RngLineage{config.master_seed, 0};
  s.attack = config.attack;
  return s;
}

inline double global_norm(const ParamSet& g) {
  double sq = 0.0;
  for (const auto& group : g.groups) {
    for (double v : group.value.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

/// Scales the whole gradient by min(1, clip / ||g||_2); untouched when within bounds.
inline double clip_global_norm(ParamSet& g, double clip) {
  const double norm = global_norm(g);
  if (norm <= clip) return 1.0;
  const double scale = clip / norm;
  for (auto& group : g.groups) {
    for (double& v : group.value.data()) v *= scale;
  }
  return scale;
}

/// v <- momentum v + (g + wd w); w <- w - lr v, after optional global-norm clipping.
inline void sgd_update(TrainState& state, ParamSet grad, double lr, const TrainConfig& config) {
  if (grad.size() != state.params.size()) throw std::invalid_argument("gradient/parameter group count mismatch");
  if (config.grad_clip) clip_global_norm(grad, *config.grad_clip);
  for (std::size_t gi = 0; gi < grad.size(); ++gi) {
    Tensor& w = state.params[gi];
    Tensor& v = state.momentum[gi];
    const Tensor& g = grad[gi];
    if (g.shape() != w.shape() || v.shape() != w.shape()) {
      throw std::invalid_argument("shape mismatch in parameter group " + state.params.groups[gi].name);
    }
    for (std::size_t i = 0; i < w.numel(); ++i) {
      v[i] = config.momentum * v[i] + (g[i] + config.weight_decay * w[i]);
      w[i] = w[i] - lr * v[i];
    }
  }
}

struct EpochTrainStats {
  double train_loss = 0.0;      ///< mean loss at x + delta
  double train_fgsm_acc = 0.0;  ///< accuracy at x + delta
  double mean_l1_x255 = 0.0;    ///< mean per-coordinate |delta|, times 255
};

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) { return (n + batch_size - 1) / batch_size; }

/// One pass over `train`. Shuffle and attack randomness come from the
/// state's lineage keyed by (epoch, batch), so the epoch replays exactly.
inline EpochTrainStats train_epoch(const ArchSpec& arch, TrainState& state, const Dataset& train,
                                   const TrainConfig& config) {
  const std::size_t epoch = state.epoch;
  const std::size_t spe = steps_per_epoch(train.size(), config.batch_size);
  const std::size_t total = spe * config.schedule.epochs;
  const auto order = batches(train.size(), config.batch_size, stream_key(state.rng, Purpose::shuffle, epoch));
  double loss_sum = 0.0;
  long double l1_sum = 0.0L;
  std::size_t correct = 0;
  for (std::size_t bi = 0; bi < order.size(); ++bi) {
    const Batch batch = gather(train, order[bi]);
    const Perturbation pert =
        craft(arch, state.params, batch.x, batch.y, state.attack, stream_key(state.rng, Purpose::attack, epoch, bi));
    const Tensor adv = detail::add(batch.x, pert.delta);
    LossGrad lg = loss_and_grads(arch, state.params, adv, batch.y, GradRequest{true, false});
    loss_sum += lg.loss * static_cast<double>(batch.y.size());
    correct += lg.correct(batch.y);
    const std::size_t d = pert.delta.row_size();
    for (std::size_t b = 0; b < batch.y.size(); ++b) {
      long double l1 = 0.0L;
      for (double v : pert.delta.row(b)) l1 += std::abs(v);
      l1_sum += l1 / static_cast<long double>(d);
    }
    const double lr = lr_at(config.schedule, std::min(epoch * spe + bi, total), total);
    sgd_update(state, std::move(*lg.param_grad), lr, config);
  }
  state.epoch = epoch + 1;
  const auto n = static_cast<double>(train.size());
  return {loss_sum / n, static_cast<double>(correct) / n, static_cast<double>(255.0L * l1_sum / n)};
}

}  // namespace zg
