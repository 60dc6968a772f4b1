#pragma once

// JSON forms of the configuration types. Readers are strict: a key that is
// not consumed is reported with its full path.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "zg/attacks.hpp"
#include "zg/engine.hpp"
#include "zg/rng.hpp"
#include "zg/trainer.hpp"

namespace zg {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses "8/255" or a decimal.
inline double parse_fraction(const std::string& text) {
  auto number = [&](const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError("cannot parse number '" + text + "'");
    return v;
  };
  if (const auto slash = text.find('/'); slash != std::string::npos) {
    const double den = number(text.substr(slash + 1));
    if (den == 0.0) throw ConfigError("zero denominator in '" + text + "'");
    return number(text.substr(0, slash)) / den;
  }
  return number(text);
}

/// Reads keys from one JSON object and rejects the ones nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  /// Marks the key consumed; null when absent.
  const json& raw(const std::string& key) {
    static const json null_value;
    seen_.insert(key);
    return j_.contains(key) ? j_.at(key) : null_value;
  }

  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  template <class T>
  std::optional<T> get_optional(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return get<T>(key, T{});
  }

  /// Number or fraction string ("8/255").
  double get_real(const std::string& key, double fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      try {
        return parse_fraction(v.get<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(path(key) + ": " + e.what());
      }
    }
    throw ConfigError(path(key) + ": expected a number or fraction string");
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_string()) {
      try {
        return from_hex(v.get<std::string>());
      } catch (const std::exception&) {
        throw ConfigError(path(key) + ": expected an unsigned integer or hex string");
      }
    }
    throw ConfigError(path(key) + ": expected an unsigned integer");
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline json to_json(const ArchSpec& a) {
  return {{"kind", to_string(a.kind)},
          {"input_shape", {a.input.channels, a.input.height, a.input.width}},
          {"num_classes", a.num_classes}};
}

inline ArchSpec arch_from_json(const json& j, const std::string& path, const ArchSpec& defaults = {}) {
  ObjectReader r(j, path);
  ArchSpec a = defaults;
  try {
    a.kind = arch_kind_from_string(r.get<std::string>("kind", to_string(a.kind)));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.path("kind") + ": " + e.what());
  }
  if (r.has("input_shape")) {
    const auto shape = r.get<std::vector<std::size_t>>("input_shape", {});
    if (shape.size() != 3) throw ConfigError(r.path("input_shape") + ": expected [channels, height, width]");
    a.input = InputShape{shape[0], shape[1], shape[2]};
  } else {
    r.raw("input_shape");
  }
  a.num_classes = r.get<std::size_t>("num_classes", a.num_classes);
  r.finish();
  return a;
}

inline json to_json(const AttackSpec& s) {
  return {{"kind", to_string(s.kind)},           {"epsilon", s.epsilon},
          {"alpha_ratio", s.alpha_ratio},        {"q", s.q},
          {"n_samples", s.n_samples},            {"steps", s.steps},
          {"restarts", s.restarts},              {"clamp_image_box", s.clamp_image_box},
          {"random_start", s.random_start},      {"zero_final_delta", s.zero_final_delta}};
}

/// Missing fields take the per-kind defaults (alpha_ratio, q).
inline AttackSpec attack_from_json(const json& j, const std::string& path, bool default_box = true) {
  ObjectReader r(j, path);
  AttackSpec s;
  try {
    s = make_attack(attack_kind_from_string(r.get<std::string>("kind", "fgsm-rs")), 8.0 / 255.0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.path("kind") + ": " + e.what());
  }
  s.epsilon = r.get_real("epsilon", s.epsilon);
  s.alpha_ratio = r.get_real("alpha_ratio", s.alpha_ratio);
  s.q = r.get_real("q", s.q);
  s.n_samples = r.get<std::size_t>("n_samples", s.n_samples);
  s.steps = r.get<std::size_t>("steps", s.steps);
  s.restarts = r.get<std::size_t>("restarts", s.restarts);
  s.clamp_image_box = r.get<bool>("clamp_image_box", default_box);
  s.random_start = r.get<bool>("random_start", s.random_start);
  s.zero_final_delta = r.get<bool>("zero_final_delta", s.zero_final_delta);
  r.finish();
  try {
    validate(s);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return s;
}

inline json to_json(const LrSchedule& s) {
  json j = {{"kind", to_string(s.kind)}, {"max_lr", s.max_lr}, {"epochs", s.epochs}, {"drop_factor", s.drop_factor}};
  j["drop_epoch"] = s.drop_epoch ? json(*s.drop_epoch) : json(nullptr);
  return j;
}

inline LrSchedule schedule_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  LrSchedule s;
  try {
    s.kind = schedule_kind_from_string(r.get<std::string>("kind", "cyclical"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(r.path("kind") + ": " + e.what());
  }
  s.max_lr = r.get_real("max_lr", s.max_lr);
  s.epochs = r.get<std::size_t>("epochs", s.epochs);
  s.drop_epoch = r.get_optional<std::size_t>("drop_epoch");
  s.drop_factor = r.get_real("drop_factor", s.drop_factor);
  r.finish();
  return s;
}

inline json to_json(const RngLineage& l) { return {{"master_seed", to_hex(l.master_seed)}, {"branch", to_hex(l.branch)}}; }

inline RngLineage lineage_from_json(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  RngLineage l;
  l.master_seed = r.get_u64("master_seed", 0);
  l.branch = r.get_u64("branch", 0);
  r.finish();
  return l;
}

}  // namespace zg
