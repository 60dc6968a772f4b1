#pragma once

// l-infinity attacks: FGSM, FGSM-RS, PGD-k with restarts, ZeroGrad and
// MultiGrad. Step sizes are multiples of epsilon (alpha_ratio). Every random
// draw comes from a StreamKey slot: slot 0 is the single random start of
// FGSM-RS / ZeroGrad, slot j the j-th MultiGrad start or PGD restart.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/engine.hpp"
#include "zg/parallel.hpp"
#include "zg/rng.hpp"
#include "zg/tensor.hpp"

namespace zg {

enum class AttackKind { fgsm, fgsm_rs, pgd, zerograd, multigrad };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::fgsm_rs: return "fgsm-rs";
    case AttackKind::pgd: return "pgd";
    case AttackKind::zerograd: return "zerograd";
    case AttackKind::multigrad: return "multigrad";
  }
  return "?";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "fgsm-rs") return AttackKind::fgsm_rs;
  if (s == "pgd") return AttackKind::pgd;
  if (s == "zerograd") return AttackKind::zerograd;
  if (s == "multigrad") return AttackKind::multigrad;
  throw std::invalid_argument("unknown attack kind '" + s + "' (expected fgsm, fgsm-rs, pgd, zerograd, multigrad)");
}

/// Largest useful step for each method, and the PGD evaluation step (2/255 at 8/255).
inline double default_alpha_ratio(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return 1.0;
    case AttackKind::fgsm_rs: return 1.25;
    case AttackKind::pgd: return 0.25;
    case AttackKind::zerograd: return 2.0;
    case AttackKind::multigrad: return 1.0;
  }
  return 1.0;
}

struct AttackSpec {
  AttackKind kind = AttackKind::fgsm_rs;
  double epsilon = 8.0 / 255.0;
  double alpha_ratio = 1.25;
  double q = 0.0;              ///< zerograd: lower quantile of |grad| to suppress
  std::size_t n_samples = 3;   ///< multigrad: random starts that must agree
  std::size_t steps = 10;      ///< pgd
  std::size_t restarts = 1;    ///< pgd
  bool clamp_image_box = true;
  bool random_start = true;    ///< pgd: uniform start in the ball, else zero
  bool zero_final_delta = false;  ///< zerograd: mask the final step instead of the gradient

  double step() const { return alpha_ratio * epsilon; }

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

inline AttackSpec make_attack(AttackKind kind, double epsilon) {
  AttackSpec s;
  s.kind = kind;
  s.epsilon = epsilon;
  s.alpha_ratio = default_alpha_ratio(kind);
  if (kind == AttackKind::zerograd) s.q = 0.35;
  return s;
}

inline void validate(const AttackSpec& s) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("attack: " + what); };
  if (!(s.epsilon >= 0.0 && s.epsilon < 1.0)) fail("epsilon must lie in [0, 1)");
  if (!(s.alpha_ratio > 0.0)) fail("alpha_ratio must be positive");
  if ((s.kind == AttackKind::zerograd || s.kind == AttackKind::fgsm_rs) && s.alpha_ratio > 2.0) {
    fail("alpha_ratio above 2 overshoots the ball from any random start");
  }
  if (s.kind == AttackKind::multigrad && s.alpha_ratio > 1.0) fail("multigrad steps from the clean point; alpha_ratio must be <= 1");
  if (!(s.q >= 0.0 && s.q < 1.0)) fail("q must lie in [0, 1)");
  if (s.n_samples == 0) fail("n_samples must be positive");
  if (s.steps == 0) fail("steps must be positive");
  if (s.restarts == 0) fail("restarts must be positive");
}

struct Perturbation {
  Tensor delta;
  /// 1 where the gradient coordinate was suppressed (zerograd, multigrad).
  std::vector<std::uint8_t> zero_mask;
  std::optional<double> loss_at_delta;
};

// ---------------------------------------------------------------------------
// Quantile thresholding

/// Linearly interpolated lower q-quantile: h = q (d - 1) on the ascending sort.
inline double quantile_threshold(std::span<const double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty vector");
  if (!(q >= 0.0 && q < 1.0)) throw std::invalid_argument("quantile level must lie in [0, 1)");
  std::vector<double> v(values.begin(), values.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
  const double below = v[lo];
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0) return below;
  const double above = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
  // The min() keeps the threshold monotone in q under rounding.
  return std::min(above, below + frac * (above - below));
}

/// Zeroes |grad_i| < t in place (strict, so q = 0 and constant magnitudes are
/// untouched). Sets mask_i = 1 for zeroed coordinates; returns their count.
inline std::size_t zero_small_grads_inplace(std::span<double> grad, double q, std::span<std::uint8_t> mask) {
  std::vector<double> mag(grad.size());
  std::transform(grad.begin(), grad.end(), mag.begin(), [](double g) { return std::abs(g); });
  const double t = quantile_threshold(mag, q);
  std::size_t zeroed = 0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const bool small = mag[i] < t;
    mask[i] = small;
    if (small) {
      grad[i] = 0.0;
      ++zeroed;
    }
  }
  return zeroed;
}

struct ZeroedGrad {
  std::vector<double> grad;
  std::vector<std::uint8_t> zero_mask;
};

inline ZeroedGrad zero_small_grads(std::span<const double> grad, double q) {
  ZeroedGrad r{{grad.begin(), grad.end()}, std::vector<std::uint8_t>(grad.size())};
  zero_small_grads_inplace(r.grad, q, r.zero_mask);
  return r;
}

// ---------------------------------------------------------------------------
// Sign agreement

struct AgreementMask {
  Tensor omega;                    ///< mean of the N sign tensors
  std::vector<std::uint8_t> mask;  ///< 1 where |omega| = 1
};

inline AgreementMask sign_agreement_mask(std::span<const Tensor> grads) {
  if (grads.empty()) throw std::invalid_argument("sign agreement needs at least one gradient");
  for (const auto& g : grads) {
    if (g.shape() != grads[0].shape()) {
      throw std::invalid_argument("sign agreement: shape " + shape_str(g.shape()) + " differs from " +
                                  shape_str(grads[0].shape()));
    }
  }
  const auto n = static_cast<double>(grads.size());
  AgreementMask r{Tensor(grads[0].shape()), std::vector<std::uint8_t>(grads[0].numel())};
  for (std::size_t i = 0; i < r.mask.size(); ++i) {
    double sum = 0.0;  // integer-valued, exact
    for (const auto& g : grads) sum += sign(g[i]);
    r.omega[i] = sum / n;
    r.mask[i] = std::abs(sum) == n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Crafting

namespace detail {

inline Tensor add(const Tensor& x, const Tensor& delta) {
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += delta[i];
  return out;
}

/// Clamp to the epsilon ball, then (optionally) keep x + delta inside [0, 1].
inline double project(double d, double x, double eps, bool box) {
  d = std::clamp(d, -eps, eps);
  if (box) d = std::clamp(x + d, 0.0, 1.0) - x;
  return d;
}

inline Tensor random_start(const Tensor& x, const AttackSpec& s, Rng& rng) {
  Tensor d(x.shape());
  for (std::size_t i = 0; i < d.numel(); ++i) {
    d[i] = project(rng.uniform(-s.epsilon, s.epsilon), x[i], s.epsilon, s.clamp_image_box);
  }
  return d;
}

/// delta <- project(delta + step * sgn(g)).
inline void sign_step(Tensor& delta, const Tensor& g, const Tensor& x, const AttackSpec& s) {
  const double step = s.step();
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    delta[i] = project(delta[i] + step * sign(g[i]), x[i], s.epsilon, s.clamp_image_box);
  }
}

inline Tensor input_grad(const ArchSpec& arch, const ParamSet& params, const Tensor& x, const Tensor& delta,
                         std::span<const int> y) {
  return loss_and_grads(arch, params, add(x, delta), y, GradRequest{false, true}).input_grad;
}

inline void require(const AttackSpec& s, std::initializer_list<AttackKind> kinds, const char* fn) {
  validate(s);
  for (AttackKind k : kinds) {
    if (s.kind == k) return;
  }
  throw std::invalid_argument(std::string(fn) + " cannot craft attack kind " + to_string(s.kind));
}

}  // namespace detail

/// FGSM-RS (kind fgsm-rs) or plain FGSM (kind fgsm, zero start).
inline Perturbation craft_fgsm_rs(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                                  std::span<const int> y, const AttackSpec& spec, StreamKey key) {
  detail::require(spec, {AttackKind::fgsm, AttackKind::fgsm_rs}, "craft_fgsm_rs");
  Rng rng(key.child(0));
  Tensor delta = spec.kind == AttackKind::fgsm ? Tensor(x.shape()) : detail::random_start(x, spec, rng);
  const Tensor g = detail::input_grad(arch, params, x, delta, y);
  detail::sign_step(delta, g, x, spec);
  return {std::move(delta), {}, std::nullopt};
}

/// ZeroGrad: FGSM-RS whose input gradient has its per-sample lower q-quantile
/// (by magnitude) zeroed. Zeroed coordinates keep their random start.
inline Perturbation craft_zerograd(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                                   std::span<const int> y, const AttackSpec& spec, StreamKey key) {
  detail::require(spec, {AttackKind::zerograd}, "craft_zerograd");
  Rng rng(key.child(0));
  Tensor delta = detail::random_start(x, spec, rng);
  Tensor g = detail::input_grad(arch, params, x, delta, y);
  std::vector<std::uint8_t> mask(g.numel());
  const std::size_t d = g.row_size();
  if (spec.zero_final_delta) {
    // Mask the finished step: delta_bar = delta * 1(|g| >= t).
    Tensor zeroed = g;
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      zero_small_grads_inplace(zeroed.row(b), spec.q, std::span(mask).subspan(b * d, d));
    }
    detail::sign_step(delta, g, x, spec);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) delta[i] = 0.0;
    }
  } else {
    for (std::size_t b = 0; b < x.dim(0); ++b) {
      zero_small_grads_inplace(g.row(b), spec.q, std::span(mask).subspan(b * d, d));
    }
    detail::sign_step(delta, g, x, spec);
  }
  return {std::move(delta), std::move(mask), std::nullopt};
}

/// MultiGrad: N random-start gradients; keep the first gradient only where
/// all N signs agree, then step from the clean point.
inline Perturbation craft_multigrad(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                                    std::span<const int> y, const AttackSpec& spec, StreamKey key) {
  detail::require(spec, {AttackKind::multigrad}, "craft_multigrad");
  std::vector<Tensor> grads(spec.n_samples);
  parallel_for(spec.n_samples, [&](std::size_t j) {
    Rng rng(key.child(j));
    grads[j] = detail::input_grad(arch, params, x, detail::random_start(x, spec, rng), y);
  });
  AgreementMask agree = sign_agreement_mask(grads);
  Tensor effective = std::move(grads[0]);
  std::vector<std::uint8_t> suppressed(effective.numel());
  for (std::size_t i = 0; i < effective.numel(); ++i) {
    if (!agree.mask[i]) {
      effective[i] = 0.0;
      suppressed[i] = 1;
    }
  }
  Tensor delta(x.shape());
  detail::sign_step(delta, effective, x, spec);
  return {std::move(delta), std::move(suppressed), std::nullopt};
}

enum class PgdMode { train, eval };

/// PGD-k with restarts. Per sample, training mode keeps the max-loss restart;
/// evaluation mode keeps the first restart that misclassifies, else max loss.
inline Perturbation craft_pgd(const ArchSpec& arch, const ParamSet& params, const Tensor& x, std::span<const int> y,
                              const AttackSpec& spec, StreamKey key, PgdMode mode = PgdMode::train) {
  detail::require(spec, {AttackKind::pgd}, "craft_pgd");
  struct Restart {
    Tensor delta;
    LossGrad at_end;
  };
  std::vector<Restart> runs(spec.restarts);
  parallel_for(spec.restarts, [&](std::size_t r) {
    Rng rng(key.child(r));
    Tensor delta = spec.random_start ? detail::random_start(x, spec, rng) : Tensor(x.shape());
    for (std::size_t s = 0; s < spec.steps; ++s) {
      const Tensor g = detail::input_grad(arch, params, x, delta, y);
      detail::sign_step(delta, g, x, spec);
    }
    LossGrad end = loss_and_grads(arch, params, detail::add(x, delta), y, GradRequest{});
    runs[r] = Restart{std::move(delta), std::move(end)};
  });

  const std::size_t batch = x.dim(0);
  const std::size_t d = x.row_size();
  Perturbation out{std::move(runs[0].delta), {}, std::nullopt};
  std::vector<double> best_loss = runs[0].at_end.sample_loss;
  std::vector<std::uint8_t> fooled(batch);
  for (std::size_t b = 0; b < batch; ++b) fooled[b] = runs[0].at_end.predicted[b] != static_cast<std::size_t>(y[b]);
  for (std::size_t r = 1; r < runs.size(); ++r) {
    const LossGrad& lg = runs[r].at_end;
    for (std::size_t b = 0; b < batch; ++b) {
      bool take = false;
      if (mode == PgdMode::eval) {
        if (fooled[b]) continue;
        const bool fools = lg.predicted[b] != static_cast<std::size_t>(y[b]);
        take = fools || lg.sample_loss[b] > best_loss[b];
        fooled[b] = fools;
      } else {
        take = lg.sample_loss[b] > best_loss[b];
      }
      if (take) {
        best_loss[b] = lg.sample_loss[b];
        std::copy_n(runs[r].delta.ptr() + b * d, d, out.delta.ptr() + b * d);
      }
    }
  }
  double total = 0.0;
  for (double l : best_loss) total += l;
  out.loss_at_delta = total / static_cast<double>(batch);
  return out;
}

/// Dispatch on spec.kind.
inline Perturbation craft(const ArchSpec& arch, const ParamSet& params, const Tensor& x, std::span<const int> y,
                          const AttackSpec& spec, StreamKey key, PgdMode mode = PgdMode::train) {
  switch (spec.kind) {
    case AttackKind::fgsm:
    case AttackKind::fgsm_rs: return craft_fgsm_rs(arch, params, x, y, spec, key);
    case AttackKind::zerograd: return craft_zerograd(arch, params, x, y, spec, key);
    case AttackKind::multigrad: return craft_multigrad(arch, params, x, y, spec, key);
    case AttackKind::pgd: return craft_pgd(arch, params, x, y, spec, key, mode);
  }
  throw std::logic_error("unreachable attack kind");
}

}  // namespace zg
