// zg: train, evaluate and inspect single-step adversarial training runs.
//
//   zg train    --config run.json --data DIR --out RUN [--seed N]
//   zg eval     --checkpoint RUN/ckpt/epoch_0030.zgc --data DIR --attack pgd --steps 50 --restarts 10 --epsilon 8/255
//   zg diagnose --run RUN [--saliency OUT --data DIR]
//
// Exit codes: 0 success, 1 error, 2 the guard ran out of q escalations.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "zg/config.hpp"
#include "zg/diagnostics.hpp"
#include "zg/guard.hpp"
#include "zg/run.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitQMax = 2;

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

bool empty_or_absent(const fs::path& dir) { return !fs::exists(dir) || (fs::is_directory(dir) && fs::is_empty(dir)); }

int cmd_train(const fs::path& config_path, const fs::path& data_dir, const fs::path& out, std::optional<std::uint64_t> seed) {
  if (!empty_or_absent(out)) {
    std::cerr << "error: " << out.string() << " exists and is not empty; refusing to overwrite a run\n";
    return kExitError;
  }
  zg::RunConfig config = zg::load_run_config(config_path);
  if (seed) config.spec.train.master_seed = *seed;
  const zg::LoadedData data = zg::load_data(config, data_dir);
  zg::validate(config.spec);

  fs::create_directories(out);
  {
    std::ofstream f(out / "config.json");
    if (!f) throw std::runtime_error((out / "config.json").string() + ": cannot open for writing");
    f << zg::to_json(config).dump(2) << "\n";
  }
  std::cout << "train " << data.run.train.size() << " / val " << data.run.val.size() << " samples, "
            << zg::to_string(config.spec.arch.kind) << ", attack " << zg::to_string(config.spec.train.attack.kind)
            << " eps " << fixed(config.spec.train.attack.epsilon) << "\n";
  zg::RunHooks hooks;
  hooks.on_epoch = [](const zg::EpochRecord& r, const zg::TrainState& s) {
    std::cout << "epoch " << r.epoch << "  loss " << fixed(r.train_loss) << "  fgsm_acc " << fixed(r.train_fgsm_acc)
              << "  val_clean " << fixed(r.val_clean_acc) << "  val_robust " << fixed(r.val_robust_acc) << "  q "
              << fixed(s.attack.q, 2) << std::endl;
  };
  const zg::RunResult res = zg::train_run(config.spec, data.run, out, hooks);
  for (const auto& e : res.events) std::cout << "guard: " << e.dump() << "\n";
  std::cout << "status " << zg::to_string(res.status) << "; best epoch " << res.best.epoch << " (val robust "
            << fixed(res.best.val_robust_acc) << ") " << res.best.checkpoint.string() << "\n";
  return res.status == zg::RunStatus::q_max_exhausted ? kExitQMax : kExitOk;
}

/// The run's config.json when the checkpoint sits in a run directory.
std::optional<zg::RunConfig> run_config_for(const fs::path& checkpoint) {
  const fs::path cfg = checkpoint.parent_path().parent_path() / "config.json";
  if (!fs::exists(cfg)) return std::nullopt;
  return zg::load_run_config(cfg);
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_dir, const std::string& attack, std::size_t steps,
             std::size_t restarts, const std::optional<std::string>& epsilon_text, std::string split) {
  const zg::Checkpoint ck = zg::load_checkpoint(ckpt_path);
  std::optional<zg::RunConfig> config = run_config_for(ckpt_path);
  zg::Dataset data;
  if (config) {
    zg::LoadedData loaded = zg::load_data(*config, data_dir);
    if (split == "auto") split = loaded.test.size() > 0 ? "test" : "val";
    if (split == "test") {
      data = std::move(loaded.test);
    } else if (split == "val") {
      data = std::move(loaded.run.val);
    } else {
      data = zg::load_source(config->data, data_dir);
    }
  } else {
    if (split == "val" || split == "test") throw std::runtime_error("--split " + split + " needs the run's config.json");
    split = "all";
    data = zg::load_idx(data_dir / "train-images-idx3-ubyte", data_dir / "train-labels-idx1-ubyte");
  }
  if (data.size() == 0) throw std::runtime_error("split '" + split + "' is empty");
  const zg::InputShape s = data.shape();
  const zg::InputShape want = ck.arch.input;
  if (!(s == want) || data.num_classes > ck.arch.num_classes) {
    throw std::runtime_error("checkpoint arch expects input [" + std::to_string(want.channels) + "," +
                             std::to_string(want.height) + "," + std::to_string(want.width) + "] and " +
                             std::to_string(ck.arch.num_classes) + " classes, data is [" + std::to_string(s.channels) +
                             "," + std::to_string(s.height) + "," + std::to_string(s.width) + "] with " +
                             std::to_string(data.num_classes) + " classes");
  }

  const double eps = epsilon_text ? zg::parse_fraction(*epsilon_text) : ck.state.attack.epsilon;
  std::optional<zg::AttackSpec> spec;
  if (attack == "pgd") {
    spec = zg::make_attack(zg::AttackKind::pgd, eps);
    spec->steps = steps;
    spec->restarts = restarts;
  } else if (attack == "fgsm") {
    spec = zg::make_attack(zg::AttackKind::fgsm, eps);
  }
  if (spec) zg::validate(*spec);
  const zg::RobustAccuracy acc =
      zg::evaluate_robust(ck.arch, ck.state.params, data, spec, zg::frozen_key(ck.state.rng.master_seed, zg::Purpose::eval_attack));

  zg::json report = {{"schema", 1},
                     {"checkpoint", ckpt_path.string()},
                     {"epoch", ck.state.epoch},
                     {"split", split},
                     {"samples", data.size()},
                     {"attack", spec ? zg::to_json(*spec) : zg::json("none")},
                     {"clean_acc", acc.clean},
                     {"robust_acc", acc.robust}};
  const fs::path out = ckpt_path.parent_path() / "eval.json";
  std::ofstream f(out);
  if (!f) throw std::runtime_error(out.string() + ": cannot open for writing");
  f << report.dump(2) << "\n";
  std::cout << "epoch " << ck.state.epoch << " on " << split << " (" << data.size() << " samples): clean "
            << fixed(acc.clean) << ", robust " << fixed(acc.robust) << " under " << attack << "\n"
            << "wrote " << out.string() << "\n";
  return kExitOk;
}

int cmd_diagnose(const fs::path& run_dir, const std::optional<fs::path>& saliency_dir, const std::optional<fs::path>& data_dir,
                 std::size_t samples) {
  const fs::path csv = run_dir / "epochs.csv";
  if (!fs::exists(csv)) throw std::runtime_error(csv.string() + ": missing (not a run directory?)");
  const auto records = zg::read_csv(csv);
  const auto events = zg::read_events(run_dir);

  std::printf("%5s %9s %8s %8s %8s %11s %11s %7s %8s\n", "epoch", "loss", "fgsm", "clean", "robust", "wupd_max",
              "probe_mse", "l1x255", "signdiff");
  for (const auto& r : records) {
    std::string flag;
    for (const auto& e : events) {
      if (e.value("epoch", std::size_t{0}) == r.epoch) flag += "  <- " + e.value("type", std::string("?"));
    }
    std::printf("%5zu %9.4f %8.4f %8.4f %8.4f %11.4g %11.4g %7.3f %8s%s\n", r.epoch, r.train_loss, r.train_fgsm_acc,
                r.val_clean_acc, r.val_robust_acc, r.max_weight_update_mse(), r.probe_pert_mse, r.mean_l1_x255,
                r.sign_diff_pgd_pct ? fixed(*r.sign_diff_pgd_pct, 2).c_str() : "-", flag.c_str());
  }
  if (events.empty()) {
    std::cout << "no overfitting detected\n";
  } else {
    for (const auto& e : events) {
      std::cout << e.value("type", std::string("?")) << " at epoch " << e.value("epoch", std::size_t{0}) << ": val robust "
                << fixed(e.value("val_robust_acc", 0.0)) << ", q " << fixed(e.value("q_before", 0.0), 2) << " -> "
                << fixed(e.value("q_after", 0.0), 2) << "\n";
    }
  }
  const zg::EarlyStopChoice best = zg::early_stop_select(run_dir);
  std::cout << "best epoch " << best.epoch << " (val robust " << fixed(best.val_robust_acc) << "): "
            << best.checkpoint.string() << "\n";

  if (saliency_dir) {
    zg::RunConfig config = zg::load_run_config(run_dir / "config.json");
    const zg::LoadedData data = zg::load_data(config, data_dir.value_or(fs::path(".")));
    const zg::Checkpoint ck = zg::load_checkpoint(best.checkpoint);
    const zg::Dataset& val = data.run.val;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < std::min(samples, val.size()); ++i) idx.push_back(i);
    const zg::Batch b = zg::gather(val, idx);
    zg::AttackSpec mg = zg::make_attack(zg::AttackKind::multigrad, ck.state.attack.epsilon);
    const zg::SaliencyMaps maps = zg::dump_gradient_images(ck.arch, ck.state.params, b.x, b.y, mg,
                                                           zg::frozen_key(config.spec.train.master_seed, zg::Purpose::eval_attack),
                                                           *saliency_dir);
    double survival = 0.0;
    for (std::size_t i = 0; i < maps.plain.size(); ++i) survival += zg::top_decile_survival(maps.plain[i], maps.masked[i]);
    std::cout << "saliency: wrote " << 3 * maps.plain.size() << " images to " << saliency_dir->string()
              << "; top-decile survival under the agreement mask " << fixed(survival / static_cast<double>(maps.plain.size()))
              << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-step adversarial training with catastrophic-overfitting guards"};
  app.require_subcommand(1);

  fs::path config, data, out, checkpoint, run_dir;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Train a model and write a run directory");
  train->add_option("--config", config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", data, "Directory holding the dataset files (ignored for synth)");
  train->add_option("--out", out, "Run directory to create (absent or empty)")->required();
  train->add_option("--seed", seed, "Master seed (overrides the config)");

  std::string attack = "pgd", split = "auto";
  std::size_t steps = 50, restarts = 10;
  std::optional<std::string> epsilon;
  auto* eval = app.add_subcommand("eval", "Clean and robust accuracy of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file (.zgc)")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--attack", attack, "pgd, fgsm or none")->check(CLI::IsMember({"pgd", "fgsm", "none"}));
  eval->add_option("--steps", steps, "PGD steps")->check(CLI::PositiveNumber);
  eval->add_option("--restarts", restarts, "PGD restarts")->check(CLI::PositiveNumber);
  eval->add_option("--epsilon", epsilon, "Radius, decimal or fraction such as 8/255 (default: the checkpoint's)");
  eval->add_option("--split", split, "auto, all, val or test")->check(CLI::IsMember({"auto", "all", "val", "test"}));

  std::optional<fs::path> saliency;
  std::size_t samples = 8;
  auto* diagnose = app.add_subcommand("diagnose", "Summarize a run directory");
  diagnose->add_option("--run", run_dir, "Run directory")->required();
  diagnose->add_option("--saliency", saliency, "Also dump saliency images of the best checkpoint here");
  diagnose->add_option("--data", data, "Dataset directory (for --saliency)");
  diagnose->add_option("--samples", samples, "Validation samples to dump")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(config, data, out, seed);
    if (*eval) return cmd_eval(checkpoint, data, attack, steps, restarts, epsilon, split);
    if (*diagnose) return cmd_diagnose(run_dir, saliency, data.empty() ? std::nullopt : std::optional(data), samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
