#include <gtest/gtest.h>

#include <random>

#include "support.hpp"
#include "zg/run.hpp"

using namespace zg;

namespace {

OverfitVerdict detect(std::vector<double> robust, OverfitRule rule = {}) { return detect_overfit(robust, rule); }

TEST(Detect, FlatHistoryNeverFires) { EXPECT_FALSE(detect({0.45, 0.45, 0.45, 0.45}).fired); }

TEST(Detect, CollapseBelowFloorFires) {
  const auto v = detect({0.40, 0.44, 0.45, 0.03});
  ASSERT_TRUE(v.fired);
  EXPECT_EQ(v.epoch, 3u);
  EXPECT_EQ(v.rule, OverfitKind::absolute_floor);
  EXPECT_EQ(v.running_max, 0.45);
}

TEST(Detect, ModestDropDoesNotFire) { EXPECT_FALSE(detect({0.40, 0.44, 0.45, 0.30}).fired); }

TEST(Detect, LargeDropFromMaxFires) {
  const auto v = detect({0.40, 0.44, 0.45, 0.20});
  ASSERT_TRUE(v.fired);
  EXPECT_EQ(v.rule, OverfitKind::drop_from_max);
}

TEST(Detect, WarmupEpochsAreIgnored) {
  EXPECT_FALSE(detect({0.01, 0.02, 0.05}).fired);
  EXPECT_EQ(detect({0.01, 0.02, 0.05, 0.04}).epoch, 3u);
}

TEST(Detect, TrainAccuracyGate) {
  OverfitRule rule;
  rule.train_acc_gate = 0.70;
  const std::vector<double> robust{0.5, 0.6, 0.6, 0.05, 0.05};
  EXPECT_FALSE(detect_overfit(robust, rule, std::vector<double>{0.5, 0.6, 0.7, 0.10, 0.65}).fired);
  const auto v = detect_overfit(robust, rule, std::vector<double>{0.5, 0.6, 0.7, 0.10, 0.75});
  ASSERT_TRUE(v.fired);
  EXPECT_EQ(v.epoch, 4u);
  EXPECT_THROW(detect_overfit(robust, rule, std::vector<double>{0.9}), std::invalid_argument);
  EXPECT_THROW(detect(std::vector<double>{}), std::invalid_argument);
}

// Brute force: scan every prefix, recomputing its maximum.
std::optional<std::size_t> oracle_first_fire(const std::vector<double>& r, const OverfitRule& rule) {
  for (std::size_t i = rule.warmup; i < r.size(); ++i) {
    const double m = *std::max_element(r.begin(), r.begin() + static_cast<std::ptrdiff_t>(i) + 1);
    if (r[i] < rule.absolute_floor || r[i] < m - rule.drop_margin) return i;
  }
  return std::nullopt;
}

TEST(Detect, MatchesBruteForceOnRandomHistories) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 0.8);
  for (int t = 0; t < 2000; ++t) {
    std::vector<double> r(1 + gen() % 20);
    for (double& v : r) v = u(gen);
    OverfitRule rule;
    rule.warmup = gen() % 5;
    rule.drop_margin = 0.1 + 0.4 * std::generate_canonical<double, 53>(gen);
    const auto v = detect_overfit(r, rule);
    const auto o = oracle_first_fire(r, rule);
    ASSERT_EQ(v.fired, o.has_value()) << t;
    if (o) EXPECT_EQ(v.epoch, *o);
  }
}

TEST(Detect, LoweringAHistoryNeverDelaysFloorFiring) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  OverfitRule rule;
  rule.drop_margin = 1.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> r(2 + gen() % 15);
    for (double& v : r) v = u(gen);
    std::vector<double> lower = r;
    for (double& v : lower) v -= u(gen) * v;
    const auto a = detect_overfit(r, rule);
    const auto b = detect_overfit(lower, rule);
    if (a.fired) {
      ASSERT_TRUE(b.fired);
      EXPECT_LE(b.epoch, a.epoch);
    }
  }
}

TEST(BestIndex, EarliestMaximum) {
  EXPECT_EQ(best_index(std::vector<double>{0.30, 0.42, 0.41, 0.05}), 1u);
  EXPECT_EQ(best_index(std::vector<double>{0.2, 0.5, 0.5}), 1u);
  EXPECT_THROW(best_index(std::vector<double>{}), std::invalid_argument);
}

TEST(BestIndex, InvariantUnderPositiveScaling) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> r(1 + gen() % 30), s;
    for (double& v : r) v = u(gen);
    const double k = 0.01 + 10.0 * u(gen);
    for (double v : r) s.push_back(v * k);
    EXPECT_EQ(best_index(r), best_index(s));
  }
}

TEST(Escalate, StepsByIncrementUpToCeiling) {
  EXPECT_NEAR(escalate_q(0.25, {0.20, 0.70, 1}), 0.45, 1e-15);
  EXPECT_NEAR(escalate_q(0.35, {}), 0.45, 1e-15);
  EXPECT_EQ(escalate_q(0.6, {0.1, 0.7, 1}), 0.7);  // lands on the ceiling
  EXPECT_THROW(escalate_q(0.65, {0.1, 0.7, 1}), QMaxExceeded);
  EXPECT_THROW(escalate_q(0.7, {}), QMaxExceeded);
}

ArchSpec small_mlp() {
  ArchSpec a;
  a.kind = ArchKind::mlp_small;
  a.input = {1, 8, 8};
  a.num_classes = 8;
  return a;
}

TEST(EvaluateRobust, ZeroEpsilonMatchesClean) {
  const ArchSpec a = small_mlp();
  const Dataset d = synth_blobs(1, 300, 8);
  const ParamSet p = init_params(a, 2);
  for (AttackKind k : {AttackKind::pgd, AttackKind::fgsm, AttackKind::zerograd}) {
    const auto r = evaluate_robust(a, p, d, make_attack(k, 0.0), stream_key(RngLineage{}, Purpose::monitor_attack), 64);
    EXPECT_EQ(r.robust, r.clean) << to_string(k);
  }
  const auto none = evaluate_robust(a, p, d, std::nullopt, stream_key(RngLineage{}, Purpose::monitor_attack));
  EXPECT_EQ(none.robust, none.clean);
}

TEST(EvaluateRobust, UntrainedNetworkIsNearChance) {
  const ArchSpec a = small_mlp();
  const Dataset d = synth_blobs(3, 4000, 8);
  double mean = 0.0;
  for (std::uint64_t s = 0; s < 8; ++s) mean += evaluate_robust(a, init_params(a, s), d, std::nullopt, {}).clean / 8.0;
  EXPECT_NEAR(mean, 1.0 / 8.0, 0.06);
}

TEST(EvaluateRobust, CleanIndependentOfBatchingAndAttackNeverHelps) {
  const ArchSpec a = small_mlp();
  const Dataset d = synth_blobs(4, 250, 8);
  const ParamSet p = init_params(a, 5);
  const StreamKey key = stream_key(RngLineage{}, Purpose::monitor_attack);
  const auto r1 = evaluate_robust(a, p, d, make_attack(AttackKind::pgd, 0.1), key, 7);
  const auto r2 = evaluate_robust(a, p, d, make_attack(AttackKind::pgd, 0.1), key, 256);
  EXPECT_EQ(r1.clean, r2.clean);
  EXPECT_LE(r1.robust, r1.clean);
  EXPECT_LE(r2.robust, r2.clean);
  EXPECT_THROW(evaluate_robust(a, p, Dataset{}, std::nullopt, key), std::invalid_argument);
}

struct SynthRun {
  RunSpec spec;
  RunData data;
};

SynthRun synth_run(std::size_t epochs, GuardMode mode) {
  SynthRun r;
  r.spec.arch = small_mlp();
  r.spec.train.attack = make_attack(AttackKind::zerograd, 0.1);
  r.spec.train.schedule = {ScheduleKind::constant, 0.02, epochs, std::nullopt, 10.0};
  r.spec.train.batch_size = 50;
  r.spec.train.master_seed = 12;
  r.spec.guard.mode = mode;
  r.spec.guard.monitor_steps = 3;
  r.spec.diagnostics.probe_size = 32;
  r.data.train = synth_blobs(21, 300, 8);
  r.data.val = synth_blobs(22, 100, 8);
  return r;
}

/// Monitor that collapses at `epoch` whenever q is below `q_ok`.
RunHooks collapse_hook(std::size_t epoch, double q_ok) {
  RunHooks h;
  h.monitor = [=](const TrainState& s) {
    const bool bad = s.epoch >= epoch && s.attack.q < q_ok - kQTolerance;
    return RobustAccuracy{0.9, bad ? 0.02 : 0.5 + 0.01 * static_cast<double>(s.epoch)};
  };
  return h;
}

TEST(Rollback, StepRestoresCheckpointWithEscalatedQ) {
  const fs::path dir = zgt::scratch_dir("guard_rollback_step");
  SynthRun r = synth_run(3, GuardMode::monitor);
  const RunResult res = train_run(r.spec, r.data, dir);
  const OverfitVerdict v{true, 2, 0.01, 0.5, OverfitKind::absolute_floor};
  const TrainState resumed = rollback_step(dir, v, res.state, {}, 1);
  const TrainState saved = load_checkpoint(checkpoint_path(dir, 2)).state;
  EXPECT_TRUE(resumed.params == saved.params);
  EXPECT_TRUE(resumed.momentum == saved.momentum);
  EXPECT_EQ(resumed.epoch, 2u);
  EXPECT_NEAR(resumed.attack.q, 0.45, 1e-15);
  EXPECT_EQ(resumed.rng.branch, 1u);
  EXPECT_EQ(rollback_step(dir, v, res.state, {0.1, 0.7, 3}, 1).epoch, 0u);

  EXPECT_THROW(rollback_step(dir, OverfitVerdict{}, res.state, {}, 1), std::invalid_argument);
  EXPECT_THROW(rollback_step(dir, v, res.state, {}, 0), std::invalid_argument);
  EXPECT_THROW(rollback_step(dir, v, res.state, {0.1, 0.7, 4}, 1), std::invalid_argument);
  TrainState high = res.state;
  high.attack.q = 0.65;
  EXPECT_THROW(rollback_step(dir, v, high, {}, 1), QMaxExceeded);
}

TEST(Rollback, ResumingWithoutEscalationReproducesTheEpoch) {
  const fs::path dir = zgt::scratch_dir("guard_resume");
  SynthRun r = synth_run(3, GuardMode::monitor);
  train_run(r.spec, r.data, dir);
  TrainState s = load_checkpoint(checkpoint_path(dir, 2)).state;
  train_epoch(r.spec.arch, s, r.data.train, r.spec.train);
  EXPECT_TRUE(s == load_checkpoint(checkpoint_path(dir, 3)).state);
}

TEST(Rollback, GuardedRunEscalatesOnceAndCompletes) {
  const fs::path dir = zgt::scratch_dir("guard_run_rollback");
  SynthRun r = synth_run(6, GuardMode::rollback);
  r.spec.train.checkpoint_every = 4;  // rollback keeps every checkpoint regardless
  const TrainState pre = [&] {
    SynthRun m = synth_run(6, GuardMode::monitor);
    const fs::path mdir = zgt::scratch_dir("guard_run_reference");
    train_run(m.spec, m.data, mdir, collapse_hook(5, 0.45));
    return load_checkpoint(checkpoint_path(mdir, 4)).state;
  }();
  const RunResult res = train_run(r.spec, r.data, dir, collapse_hook(5, 0.45));
  EXPECT_EQ(res.status, RunStatus::completed);
  EXPECT_EQ(res.rollbacks, 1u);
  ASSERT_EQ(res.events.size(), 1u);
  EXPECT_EQ(res.events[0]["type"], "rollback");
  EXPECT_EQ(res.events[0]["epoch"], 5);
  EXPECT_NEAR(res.events[0]["q_after"].get<double>(), 0.45, 1e-15);
  EXPECT_EQ(res.state.epoch, 6u);
  EXPECT_NEAR(res.state.attack.q, 0.45, 1e-15);
  EXPECT_EQ(res.state.rng.branch, 1u);
  ASSERT_EQ(res.records.size(), 6u);
  for (const auto& rec : res.records) EXPECT_GT(rec.val_robust_acc, 0.1);
  EXPECT_EQ(read_csv(dir / "epochs.csv"), res.records);
  // the checkpoint resumed from holds the pre-collapse parameters of an unguarded run
  const TrainState resumed_from = load_checkpoint(checkpoint_path(dir, 4)).state;
  EXPECT_TRUE(resumed_from.params == pre.params);
  EXPECT_EQ(res.best.epoch, 6u);
}

TEST(Rollback, ExhaustingQStopsTheRun) {
  const fs::path dir = zgt::scratch_dir("guard_run_exhaust");
  SynthRun r = synth_run(6, GuardMode::rollback);
  r.spec.guard.policy = {0.2, 0.7, 1};
  const RunResult res = train_run(r.spec, r.data, dir, collapse_hook(4, 2.0));
  EXPECT_EQ(res.status, RunStatus::q_max_exhausted);
  EXPECT_EQ(res.rollbacks, 1u);  // 0.35 -> 0.55, then 0.75 > 0.7
  ASSERT_EQ(res.events.size(), 2u);
  EXPECT_EQ(res.events[1]["type"], "q_max_exhausted");
  EXPECT_EQ(read_events(dir).size(), 2u);
}

TEST(Guard, StopModeHaltsAndSelectsBestCheckpoint) {
  const fs::path dir = zgt::scratch_dir("guard_run_stop");
  SynthRun r = synth_run(8, GuardMode::stop);
  r.spec.train.checkpoint_every = 2;
  const RunResult res = train_run(r.spec, r.data, dir, collapse_hook(5, 2.0));
  EXPECT_EQ(res.status, RunStatus::stopped);
  EXPECT_EQ(res.records.size(), 5u);
  EXPECT_TRUE(fs::exists(checkpoint_path(dir, 5)));
  EXPECT_FALSE(fs::exists(checkpoint_path(dir, 3)));
  // epoch 4 scores highest but only 2 and 4 have checkpoints before the collapse
  EXPECT_EQ(res.best.epoch, 4u);
  EXPECT_EQ(early_stop_select(dir).checkpoint, checkpoint_path(dir, 4));
}

TEST(Guard, MonitorModeOnlyRecords) {
  const fs::path dir = zgt::scratch_dir("guard_run_monitor");
  SynthRun r = synth_run(6, GuardMode::monitor);
  const RunResult res = train_run(r.spec, r.data, dir, collapse_hook(4, 2.0));
  EXPECT_EQ(res.status, RunStatus::completed);
  EXPECT_EQ(res.records.size(), 6u);
  ASSERT_EQ(res.events.size(), 1u);
  EXPECT_EQ(res.events[0]["type"], "detect");
  EXPECT_EQ(res.events[0]["epoch"], 4);
  EXPECT_EQ(res.best.epoch, 3u);
}

TEST(Guard, RollbackNeedsZeroGrad) {
  SynthRun r = synth_run(2, GuardMode::rollback);
  r.spec.train.attack = make_attack(AttackKind::fgsm_rs, 0.1);
  EXPECT_THROW(validate(r.spec), std::invalid_argument);
  r.spec.guard.mode = GuardMode::stop;
  EXPECT_NO_THROW(validate(r.spec));
  EXPECT_THROW(guard_mode_from_string("pause"), std::invalid_argument);
}

TEST(Guard, RefusesToOverwriteARun) {
  const fs::path dir = zgt::scratch_dir("guard_run_twice");
  SynthRun r = synth_run(1, GuardMode::off);
  train_run(r.spec, r.data, dir);
  EXPECT_THROW(train_run(r.spec, r.data, dir), std::runtime_error);
}

}  // namespace
