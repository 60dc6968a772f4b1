#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/attacks.hpp"
#include "zg/data.hpp"
#include "zg/engine.hpp"
#include "zg/parallel.hpp"

namespace zg {

struct RobustAccuracy {
  double clean = 0.0;
  double robust = 0.0;
};

/// Clean and attacked accuracy over `data` in fixed batches. With no attack,
/// robust == clean. Batch b's attack stream is key.child(b).
inline RobustAccuracy evaluate_robust(const ArchSpec& arch, const ParamSet& params, const Dataset& data,
                                      const std::optional<AttackSpec>& attack, StreamKey key,
                                      std::size_t batch_size = 256) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_robust: empty dataset");
  const auto order = sequential_batches(data.size(), batch_size);
  std::vector<std::size_t> clean(order.size()), robust(order.size());
  parallel_for(order.size(), [&](std::size_t bi) {
    const Batch b = gather(data, order[bi]);
    const LossGrad lg = loss_and_grads(arch, params, b.x, b.y, GradRequest{});
    clean[bi] = lg.correct(b.y);
    if (!attack) {
      robust[bi] = clean[bi];
      return;
    }
    const Perturbation p = craft(arch, params, b.x, b.y, *attack, key.child(bi), PgdMode::eval);
    robust[bi] = loss_and_grads(arch, params, detail::add(b.x, p.delta), b.y, GradRequest{}).correct(b.y);
  });
  const auto n = static_cast<double>(data.size());
  return {static_cast<double>(std::accumulate(clean.begin(), clean.end(), std::size_t{0})) / n,
          static_cast<double>(std::accumulate(robust.begin(), robust.end(), std::size_t{0})) / n};
}

/// Fires at epoch i (after the warmup) when
///   robust[i] < max(absolute_floor, max(robust[0..i]) - drop_margin)
/// and, if a gate is set, the training (FGSM) accuracy at i exceeds it.
struct OverfitRule {
  double absolute_floor = 0.10;
  double drop_margin = 0.20;
  std::size_t warmup = 3;
  std::optional<double> train_acc_gate;
};

enum class OverfitKind { absolute_floor, drop_from_max };

inline std::string to_string(OverfitKind k) { return k == OverfitKind::absolute_floor ? "absolute-floor" : "drop-from-max"; }

struct OverfitVerdict {
  bool fired = false;
  std::size_t epoch = 0;  ///< index into the history
  double val_robust_acc = 0.0;
  double running_max = 0.0;
  OverfitKind rule = OverfitKind::absolute_floor;
};

/// First firing index in `robust`, or a non-fired verdict describing the last entry.
inline OverfitVerdict detect_overfit(std::span<const double> robust, const OverfitRule& rule,
                                     std::span<const double> train_acc = {}) {
  if (robust.empty()) throw std::invalid_argument("detect_overfit: empty history");
  if (rule.train_acc_gate && train_acc.size() != robust.size()) {
    throw std::invalid_argument("detect_overfit: train accuracy history length differs");
  }
  double running_max = robust[0];
  for (std::size_t i = 0; i < robust.size(); ++i) {
    running_max = std::max(running_max, robust[i]);
    if (i < rule.warmup) continue;
    const bool low = robust[i] < std::max(rule.absolute_floor, running_max - rule.drop_margin);
    const bool gated = !rule.train_acc_gate || train_acc[i] > *rule.train_acc_gate;
    if (low && gated) {
      const auto kind = robust[i] < rule.absolute_floor ? OverfitKind::absolute_floor : OverfitKind::drop_from_max;
      return {true, i, robust[i], running_max, kind};
    }
  }
  return {false, robust.size() - 1, robust.back(), running_max, OverfitKind::absolute_floor};
}

struct RollbackPolicy {
  double q_increment = 0.10;
  double q_max = 0.70;
  std::size_t resume_offset = 1;
};

class QMaxExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kQTolerance = 1e-12;

/// q after one escalation; throws QMaxExceeded past the ceiling.
inline double escalate_q(double q, const RollbackPolicy& policy) {
  const double next = q + policy.q_increment;
  if (next > policy.q_max + kQTolerance) {
    throw QMaxExceeded("q " + std::to_string(q) + " + " + std::to_string(policy.q_increment) + " exceeds q_max " +
                       std::to_string(policy.q_max));
  }
  return std::min(next, policy.q_max);
}

/// Index of the best (highest) value; ties go to the earliest.
inline std::size_t best_index(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("best_index: empty history");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace zg
