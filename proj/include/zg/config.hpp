#pragma once

// Run configuration files. Every key is optional; unknown keys are errors.
// The resolved form (every default filled in, arch shape taken from the
// data) is what a run directory stores as config.json.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "zg/data.hpp"
#include "zg/run.hpp"
#include "zg/serialize.hpp"

namespace zg {

enum class DataFormat { idx, cifar, synth };

inline std::string to_string(DataFormat f) {
  switch (f) {
    case DataFormat::idx: return "idx";
    case DataFormat::cifar: return "cifar";
    case DataFormat::synth: return "synth";
  }
  return "?";
}

inline DataFormat data_format_from_string(const std::string& s) {
  if (s == "idx") return DataFormat::idx;
  if (s == "cifar") return DataFormat::cifar;
  if (s == "synth") return DataFormat::synth;
  throw ConfigError("unknown data format '" + s + "' (expected idx, cifar, synth)");
}

struct DataSource {
  DataFormat format = DataFormat::idx;
  std::string images = "train-images-idx3-ubyte";
  std::string labels = "train-labels-idx1-ubyte";
  std::vector<std::string> files = {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
                                    "data_batch_5.bin"};
  std::size_t val_size = 1000;
  std::size_t test_size = 0;
  std::size_t train_limit = 0;  ///< 0 = no cap
  std::uint64_t split_seed = 0;
  std::size_t synth_n = 2000;
  std::size_t synth_classes = 8;
  double synth_noise = 0.15;
};

struct RunConfig {
  RunSpec spec;
  DataSource data;
};

inline json to_json(const DataSource& d) {
  return {{"format", to_string(d.format)}, {"images", d.images},         {"labels", d.labels},
          {"files", d.files},              {"val_size", d.val_size},     {"test_size", d.test_size},
          {"train_limit", d.train_limit},  {"split_seed", d.split_seed}, {"synth_n", d.synth_n},
          {"synth_classes", d.synth_classes}, {"synth_noise", d.synth_noise}};
}

inline json to_json(const RunConfig& c) {
  json j = to_json(c.spec);
  j["data"] = to_json(c.data);
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  ObjectReader top(j, "");
  RunConfig c;
  RunSpec& s = c.spec;
  s.train.master_seed = top.get_u64("seed", 0);

  if (top.has("arch")) {
    s.arch = arch_from_json(top.raw("arch"), "arch");
  } else {
    top.raw("arch");
  }
  if (top.has("data")) {
    ObjectReader r(top.raw("data"), "data");
    DataSource& d = c.data;
    d.format = data_format_from_string(r.get<std::string>("format", "idx"));
    d.images = r.get<std::string>("images", d.images);
    d.labels = r.get<std::string>("labels", d.labels);
    d.files = r.get<std::vector<std::string>>("files", d.files);
    d.val_size = r.get<std::size_t>("val_size", d.val_size);
    d.test_size = r.get<std::size_t>("test_size", d.test_size);
    d.train_limit = r.get<std::size_t>("train_limit", d.train_limit);
    d.split_seed = r.get_u64("split_seed", d.split_seed);
    d.synth_n = r.get<std::size_t>("synth_n", d.synth_n);
    d.synth_classes = r.get<std::size_t>("synth_classes", d.synth_classes);
    d.synth_noise = r.get_real("synth_noise", d.synth_noise);
    r.finish();
  } else {
    top.raw("data");
  }
  if (top.has("train")) {
    ObjectReader r(top.raw("train"), "train");
    TrainConfig& t = s.train;
    if (r.has("attack")) {
      t.attack = attack_from_json(r.raw("attack"), "train.attack");
    } else {
      r.raw("attack");
    }
    if (r.has("schedule")) {
      t.schedule = schedule_from_json(r.raw("schedule"), "train.schedule");
    } else {
      r.raw("schedule");
    }
    t.momentum = r.get_real("momentum", t.momentum);
    t.weight_decay = r.get_real("weight_decay", t.weight_decay);
    if (r.has("grad_clip")) t.grad_clip = r.get_real("grad_clip", 0.0);
    r.raw("grad_clip");
    t.batch_size = r.get<std::size_t>("batch_size", t.batch_size);
    t.checkpoint_every = r.get<std::size_t>("checkpoint_every", t.checkpoint_every);
    r.finish();
  } else {
    top.raw("train");
  }
  if (top.has("guard")) {
    ObjectReader r(top.raw("guard"), "guard");
    GuardConfig& g = s.guard;
    try {
      g.mode = guard_mode_from_string(r.get<std::string>("mode", to_string(g.mode)));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("guard.mode: ") + e.what());
    }
    g.rule.absolute_floor = r.get_real("absolute_floor", g.rule.absolute_floor);
    g.rule.drop_margin = r.get_real("drop_margin", g.rule.drop_margin);
    g.rule.warmup = r.get<std::size_t>("warmup", g.rule.warmup);
    if (r.has("train_acc_gate")) g.rule.train_acc_gate = r.get_real("train_acc_gate", 0.0);
    r.raw("train_acc_gate");
    g.policy.q_increment = r.get_real("q_increment", g.policy.q_increment);
    g.policy.q_max = r.get_real("q_max", g.policy.q_max);
    g.policy.resume_offset = r.get<std::size_t>("resume_offset", g.policy.resume_offset);
    g.monitor_steps = r.get<std::size_t>("monitor_steps", g.monitor_steps);
    g.monitor_restarts = r.get<std::size_t>("monitor_restarts", g.monitor_restarts);
    g.monitor_alpha_ratio = r.get_real("monitor_alpha_ratio", g.monitor_alpha_ratio);
    r.finish();
  } else {
    top.raw("guard");
  }
  if (top.has("diagnostics")) {
    ObjectReader r(top.raw("diagnostics"), "diagnostics");
    s.diagnostics.probe_size = r.get<std::size_t>("probe_size", s.diagnostics.probe_size);
    s.diagnostics.sign_diff = r.get<bool>("sign_diff", s.diagnostics.sign_diff);
    r.finish();
  } else {
    top.raw("diagnostics");
  }
  top.finish();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open for reading");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return run_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

struct LoadedData {
  RunData run;
  Dataset test;
};

inline Dataset load_source(const DataSource& d, const std::filesystem::path& dir) {
  switch (d.format) {
    case DataFormat::idx: return load_idx(dir / d.images, dir / d.labels);
    case DataFormat::cifar: {
      std::vector<std::filesystem::path> paths;
      for (const auto& f : d.files) paths.push_back(dir / f);
      return load_cifar_bin(paths);
    }
    case DataFormat::synth: return synth_blobs(frozen_key(d.split_seed, Purpose::synth).value, d.synth_n, d.synth_classes, d.synth_noise);
  }
  throw ConfigError("unreachable data format");
}

/// Loads and splits the data and fills the arch's input shape and class count from it.
inline LoadedData load_data(RunConfig& config, const std::filesystem::path& dir) {
  const Dataset all = load_source(config.data, dir);
  Splits s = split_dataset(all, config.data.val_size, config.data.test_size, config.data.split_seed, config.data.train_limit);
  config.spec.arch.input = all.shape();
  config.spec.arch.num_classes = all.num_classes;
  return {{std::move(s.train), std::move(s.val)}, std::move(s.test)};
}

}  // namespace zg
