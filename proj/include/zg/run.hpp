#pragma once

// A training run on disk:
//
//   config.json        resolved configuration
//   epochs.csv         one EpochRecord per completed epoch
//   events.jsonl       guard verdicts and rollbacks
//   ckpt/epoch_NNNN.zgc  state after NNNN completed epochs (0000 = initial)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/checkpoint.hpp"
#include "zg/data.hpp"
#include "zg/diagnostics.hpp"
#include "zg/guard.hpp"
#include "zg/serialize.hpp"
#include "zg/trainer.hpp"

namespace zg {

namespace fs = std::filesystem;

enum class GuardMode { off, monitor, stop, rollback };

inline std::string to_string(GuardMode m) {
  switch (m) {
    case GuardMode::off: return "off";
    case GuardMode::monitor: return "monitor";
    case GuardMode::stop: return "stop";
    case GuardMode::rollback: return "rollback";
  }
  return "?";
}

inline GuardMode guard_mode_from_string(const std::string& s) {
  if (s == "off") return GuardMode::off;
  if (s == "monitor") return GuardMode::monitor;
  if (s == "stop") return GuardMode::stop;
  if (s == "rollback") return GuardMode::rollback;
  throw std::invalid_argument("unknown guard mode '" + s + "' (expected off, monitor, stop, rollback)");
}

struct GuardConfig {
  GuardMode mode = GuardMode::monitor;
  OverfitRule rule;
  RollbackPolicy policy;
  std::size_t monitor_steps = 10;
  std::size_t monitor_restarts = 1;
  double monitor_alpha_ratio = 0.25;
};

struct DiagnosticsConfig {
  std::size_t probe_size = 128;
  bool sign_diff = true;
};

struct RunSpec {
  ArchSpec arch;
  TrainConfig train;
  GuardConfig guard;
  DiagnosticsConfig diagnostics;
};

struct RunData {
  Dataset train;
  Dataset val;
};

inline void validate(const RunSpec& spec) {
  validate(spec.arch);
  validate(spec.train);
  const auto& g = spec.guard;
  if (g.mode == GuardMode::rollback && spec.train.attack.kind != AttackKind::zerograd) {
    throw std::invalid_argument("guard mode rollback escalates q and needs attack kind zerograd");
  }
  if (!(g.policy.q_increment > 0.0)) throw std::invalid_argument("guard.q_increment must be positive");
  if (!(g.policy.q_max < 1.0)) throw std::invalid_argument("guard.q_max must be below 1");
  if (g.policy.resume_offset == 0) throw std::invalid_argument("guard.resume_offset must be at least 1");
  if (g.monitor_steps == 0 || g.monitor_restarts == 0) throw std::invalid_argument("guard monitor needs steps and restarts >= 1");
  if (spec.diagnostics.probe_size == 0) throw std::invalid_argument("diagnostics.probe_size must be positive");
}

/// PGD used for per-epoch monitoring and the sign-disagreement reference.
inline AttackSpec monitor_attack(const RunSpec& spec) {
  AttackSpec a = make_attack(AttackKind::pgd, spec.train.attack.epsilon);
  a.alpha_ratio = spec.guard.monitor_alpha_ratio;
  a.steps = spec.guard.monitor_steps;
  a.restarts = spec.guard.monitor_restarts;
  a.clamp_image_box = spec.train.attack.clamp_image_box;
  return a;
}

inline Batch probe_batch(const RunSpec& spec, const Dataset& train) {
  const auto p = permutation(train.size(), frozen_key(spec.train.master_seed, Purpose::probe_select));
  const std::size_t k = std::min(spec.diagnostics.probe_size, train.size());
  return gather(train, std::span(p).first(k));
}

struct RunHooks {
  /// Called after every epoch (after its checkpoint and CSV row are written).
  std::function<void(const EpochRecord&, const TrainState&)> on_epoch;
  /// Replaces the validation PGD monitor when set.
  std::function<RobustAccuracy(const TrainState&)> monitor;
};

/// Everything in an EpochRecord beyond the training pass itself. Pure in
/// (before, after, stats), which is what lets epochs.csv be rebuilt.
inline EpochRecord epoch_metrics(const RunSpec& spec, const RunData& data, const Batch& probe, const TrainState& before,
                                 const TrainState& after, const EpochTrainStats& stats, const RunHooks& hooks = {}) {
  EpochRecord r;
  r.epoch = after.epoch;
  r.train_loss = stats.train_loss;
  r.train_fgsm_acc = stats.train_fgsm_acc;
  r.mean_l1_x255 = stats.mean_l1_x255;
  r.weight_update_mse = weight_update_mse(before.params, after.params);
  const AttackSpec pgd = monitor_attack(spec);
  const std::uint64_t seed = spec.train.master_seed;
  if (hooks.monitor) {
    const RobustAccuracy acc = hooks.monitor(after);
    r.val_clean_acc = acc.clean;
    r.val_robust_acc = acc.robust;
  } else {
    const RobustAccuracy acc = evaluate_robust(spec.arch, after.params, data.val, pgd, frozen_key(seed, Purpose::monitor_attack));
    r.val_clean_acc = acc.clean;
    r.val_robust_acc = acc.robust;
  }
  const StreamKey probe_key = frozen_key(seed, Purpose::probe_attack);
  const Perturbation prev = craft(spec.arch, before.params, probe.x, probe.y, after.attack, probe_key);
  const Perturbation curr = craft(spec.arch, after.params, probe.x, probe.y, after.attack, probe_key);
  r.probe_pert_mse = probe_pert_mse(prev.delta, curr.delta);
  if (spec.diagnostics.sign_diff) {
    const Perturbation ref = craft(spec.arch, after.params, probe.x, probe.y, pgd, frozen_key(seed, Purpose::probe_attack, 1));
    r.sign_diff_pgd_pct = sign_diff_vs_pgd(curr.delta, ref.delta);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Run directory

inline fs::path checkpoint_path(const fs::path& run_dir, std::size_t epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%04zu.zgc", epoch);
  return run_dir / "ckpt" / name;
}

inline json to_json(const OverfitRule& r) {
  return {{"absolute_floor", r.absolute_floor},
          {"drop_margin", r.drop_margin},
          {"warmup", r.warmup},
          {"train_acc_gate", r.train_acc_gate ? json(*r.train_acc_gate) : json(nullptr)}};
}

inline json to_json(const RunSpec& s) {
  const auto& t = s.train;
  const auto& g = s.guard;
  json train = {{"attack", to_json(t.attack)},
                {"schedule", to_json(t.schedule)},
                {"momentum", t.momentum},
                {"weight_decay", t.weight_decay},
                {"grad_clip", t.grad_clip ? json(*t.grad_clip) : json(nullptr)},
                {"batch_size", t.batch_size},
                {"checkpoint_every", t.checkpoint_every}};
  json guard = to_json(g.rule);
  guard["mode"] = to_string(g.mode);
  guard["q_increment"] = g.policy.q_increment;
  guard["q_max"] = g.policy.q_max;
  guard["resume_offset"] = g.policy.resume_offset;
  guard["monitor_steps"] = g.monitor_steps;
  guard["monitor_restarts"] = g.monitor_restarts;
  guard["monitor_alpha_ratio"] = g.monitor_alpha_ratio;
  return {{"arch", to_json(s.arch)},
          {"seed", t.master_seed},
          {"train", train},
          {"guard", guard},
          {"diagnostics", {{"probe_size", s.diagnostics.probe_size}, {"sign_diff", s.diagnostics.sign_diff}}}};
}

inline void append_event(const fs::path& run_dir, const json& event) {
  const fs::path path = run_dir / "events.jsonl";
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for appending");
  out << event.dump() << "\n";
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

inline std::vector<json> read_events(const fs::path& run_dir) {
  std::vector<json> out;
  std::ifstream in(run_dir / "events.jsonl");
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error((run_dir / "events.jsonl").string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline json make_event(std::size_t epoch, const std::string& type, double q_before, double q_after, double robust) {
  return {{"epoch", epoch}, {"type", type}, {"q_before", q_before}, {"q_after", q_after}, {"val_robust_acc", robust}};
}

/// Resume point for a fired verdict: the checkpoint `resume_offset` epochs
/// before the detection epoch, with q escalated and a fresh RNG branch.
/// `verdict.epoch` is a 0-based history index, so detection epoch = index + 1.
inline TrainState rollback_step(const fs::path& run_dir, const OverfitVerdict& verdict, const TrainState& current,
                                const RollbackPolicy& policy, std::uint64_t new_branch) {
  if (!verdict.fired) throw std::invalid_argument("rollback_step: verdict did not fire");
  if (new_branch == current.rng.branch) throw std::invalid_argument("rollback_step: resume must use a fresh RNG branch");
  const std::size_t detected = verdict.epoch + 1;
  if (policy.resume_offset > detected) {
    throw std::invalid_argument("rollback_step: resume_offset " + std::to_string(policy.resume_offset) + " precedes epoch 0");
  }
  const double q = escalate_q(current.attack.q, policy);
  const fs::path path = checkpoint_path(run_dir, detected - policy.resume_offset);
  if (!fs::exists(path)) throw CheckpointError(path.string() + ": rollback checkpoint missing");
  TrainState s = load_checkpoint(path).state;
  s.attack.q = q;
  s.rng.branch = new_branch;
  return s;
}

struct EarlyStopChoice {
  std::size_t epoch = 0;
  double val_robust_acc = 0.0;
  fs::path checkpoint;
};

/// Best validation robust accuracy among epochs that have a checkpoint; ties -> earliest.
inline EarlyStopChoice early_stop_select(const fs::path& run_dir) {
  const auto records = read_csv(run_dir / "epochs.csv");
  std::optional<EarlyStopChoice> best;
  for (const auto& r : records) {
    const fs::path p = checkpoint_path(run_dir, r.epoch);
    if (!fs::exists(p)) continue;
    if (!best || r.val_robust_acc > best->val_robust_acc) best = EarlyStopChoice{r.epoch, r.val_robust_acc, p};
  }
  if (!best) throw std::runtime_error(run_dir.string() + ": no checkpoints for any recorded epoch");
  return *best;
}

enum class RunStatus { completed, stopped, q_max_exhausted };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::stopped: return "stopped";
    case RunStatus::q_max_exhausted: return "q_max_exhausted";
  }
  return "?";
}

struct RunResult {
  TrainState state;
  std::vector<EpochRecord> records;  ///< as in epochs.csv (rolled-back epochs removed)
  std::vector<json> events;
  RunStatus status = RunStatus::completed;
  std::size_t rollbacks = 0;
  EarlyStopChoice best;
};

inline std::vector<std::string> group_names(const ArchSpec& arch) {
  std::vector<std::string> names;
  for (const auto& g : param_layout(arch)) names.push_back(g.name);
  return names;
}

/// Trains into `run_dir`, which must not already hold checkpoints or epochs.csv.
/// Writes config.json from `spec` unless the caller already wrote one.
inline RunResult train_run(const RunSpec& spec, const RunData& data, const fs::path& run_dir, const RunHooks& hooks = {}) {
  validate(spec);
  check_input(spec.arch, data.train.inputs);
  if (data.val.size() == 0 && !hooks.monitor) throw std::invalid_argument("train_run: validation set is empty");
  if (fs::exists(run_dir / "epochs.csv") || fs::exists(run_dir / "ckpt")) {
    throw std::runtime_error(run_dir.string() + ": already holds a run");
  }
  fs::create_directories(run_dir / "ckpt");
  if (!fs::exists(run_dir / "config.json")) {
    std::ofstream out(run_dir / "config.json");
    if (!out) throw std::runtime_error((run_dir / "config.json").string() + ": cannot open for writing");
    out << to_json(spec).dump(2) << "\n";
  }

  const auto& cfg = spec.train;
  const auto groups = group_names(spec.arch);
  const Batch probe = probe_batch(spec, data.train);
  RunResult res;
  TrainState state = initial_state(spec.arch, cfg);
  auto save = [&](const TrainState& s) { save_checkpoint(Checkpoint{spec.arch, cfg.schedule, s}, checkpoint_path(run_dir, s.epoch)); };
  save(state);
  write_csv(run_dir / "epochs.csv", groups, res.records);
  std::uint64_t next_branch = 1;
  auto event = [&](const json& e) {
    append_event(run_dir, e);
    res.events.push_back(e);
  };

  while (state.epoch < cfg.schedule.epochs) {
    const TrainState before = state;
    const EpochTrainStats stats = train_epoch(spec.arch, state, data.train, cfg);
    res.records.push_back(epoch_metrics(spec, data, probe, before, state, stats, hooks));
    const EpochRecord& rec = res.records.back();

    bool fired = false;
    OverfitVerdict verdict;
    if (spec.guard.mode != GuardMode::off) {
      std::vector<double> robust, train_acc;
      for (const auto& r : res.records) {
        robust.push_back(r.val_robust_acc);
        train_acc.push_back(r.train_fgsm_acc);
      }
      verdict = detect_overfit(robust, spec.guard.rule, train_acc);
      fired = verdict.fired && verdict.epoch + 1 == res.records.size();
    }
    const bool acting = fired && (spec.guard.mode == GuardMode::stop || spec.guard.mode == GuardMode::rollback);
    // rollback resumes from an arbitrary earlier epoch, so it needs every checkpoint
    const bool every = spec.guard.mode == GuardMode::rollback || state.epoch % cfg.checkpoint_every == 0;
    if (every || state.epoch == cfg.schedule.epochs || acting) save(state);
    write_csv(run_dir / "epochs.csv", groups, res.records);
    if (hooks.on_epoch) hooks.on_epoch(rec, state);
    if (!fired) continue;

    const double q = state.attack.q;
    const double robust = rec.val_robust_acc;
    if (spec.guard.mode == GuardMode::monitor) {
      event(make_event(state.epoch, "detect", q, q, robust));
    } else if (spec.guard.mode == GuardMode::stop) {
      event(make_event(state.epoch, "stop", q, q, robust));
      res.status = RunStatus::stopped;
      break;
    } else {
      TrainState resumed;
      try {
        resumed = rollback_step(run_dir, verdict, state, spec.guard.policy, next_branch);
      } catch (const QMaxExceeded&) {
        event(make_event(state.epoch, "q_max_exhausted", q, q, robust));
        res.status = RunStatus::q_max_exhausted;
        break;
      }
      ++next_branch;
      ++res.rollbacks;
      event(make_event(state.epoch, "rollback", q, resumed.attack.q, robust));
      state = std::move(resumed);
      res.records.resize(state.epoch);
      write_csv(run_dir / "epochs.csv", groups, res.records);
    }
  }
  res.state = std::move(state);
  res.best = early_stop_select(run_dir);
  return res;
}

/// Rebuilds epochs.csv text from the checkpoints alone. Epoch E is replayed
/// from checkpoint E-1 under the RNG branch and attack stored in checkpoint
/// E; the replayed parameters must match checkpoint E bit for bit.
inline std::string recompute_epochs_csv(const RunSpec& spec, const RunData& data, const fs::path& run_dir,
                                        std::size_t epochs, const RunHooks& hooks = {}) {
  const Batch probe = probe_batch(spec, data.train);
  std::vector<EpochRecord> records;
  Checkpoint prev = load_checkpoint(checkpoint_path(run_dir, 0));
  for (std::size_t e = 1; e <= epochs; ++e) {
    const Checkpoint next = load_checkpoint(checkpoint_path(run_dir, e));
    TrainState state = prev.state;
    state.rng = next.state.rng;
    state.attack = next.state.attack;
    const TrainState before = state;
    const EpochTrainStats stats = train_epoch(spec.arch, state, data.train, spec.train);
    if (!(state.params == next.state.params) || !(state.momentum == next.state.momentum)) {
      throw std::runtime_error("replay of epoch " + std::to_string(e) + " does not reproduce " +
                               checkpoint_path(run_dir, e).string());
    }
    records.push_back(epoch_metrics(spec, data, probe, before, state, stats, hooks));
    prev = next;
  }
  return csv_text(group_names(spec.arch), records);
}

}  // namespace zg
