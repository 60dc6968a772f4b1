#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace zg {

/// Master seed plus branch counter. Every random stream in a run is derived
/// from this pair and a (purpose, a, b, c) coordinate, so any stream can be
/// regenerated from a checkpoint. A rollback moves to a fresh branch.
struct RngLineage {
  std::uint64_t master_seed = 0;
  std::uint64_t branch = 0;

  friend bool operator==(const RngLineage&, const RngLineage&) = default;
};

enum class Purpose : std::uint64_t {
  init = 1,
  shuffle = 2,
  attack = 3,
  probe_select = 4,
  probe_attack = 5,
  monitor_attack = 6,
  split = 7,
  synth = 8,
  eval_attack = 9,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v)); }

/// Key for a family of streams; individual streams are its slots.
struct StreamKey {
  std::uint64_t value = 0;

  StreamKey child(std::uint64_t v) const { return StreamKey{mix(value, v)}; }
};

inline StreamKey stream_key(const RngLineage& lineage, Purpose purpose, std::uint64_t a = 0,
                            std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = mix(splitmix64(lineage.master_seed), lineage.branch);
  h = mix(h, static_cast<std::uint64_t>(purpose));
  h = mix(h, a);
  h = mix(h, b);
  return StreamKey{mix(h, c)};
}

/// Branch-independent streams (probe batch, monitoring attacks) stay frozen
/// across rollbacks so their metrics only move when the parameters do.
inline StreamKey frozen_key(std::uint64_t master_seed, Purpose purpose, std::uint64_t a = 0) {
  return stream_key(RngLineage{master_seed, 0xfffffffffffffff0ULL}, purpose, a);
}

/// mt19937_64 with distributions implemented here: the standard library's
/// distributions are implementation-defined, the engine's bit stream is not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  explicit Rng(StreamKey key) : engine_(key.value) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller (second variate cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::string to_hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::uint64_t from_hex(const std::string& s) {
  std::size_t pos = 0;
  const std::uint64_t v = std::stoull(s, &pos, 16);
  if (pos != s.size()) throw std::invalid_argument("bad hex value '" + s + "'");
  return v;
}

}  // namespace zg
