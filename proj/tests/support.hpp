#pragma once

// Test-side oracles. The reference network is a deliberately naive
// long-double implementation that shares no code with the engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "zg/engine.hpp"
#include "zg/tensor.hpp"

namespace zgt {

using zg::ArchKind;
using zg::ArchSpec;
using zg::ParamSet;
using zg::Tensor;

using ld = long double;

struct RefResult {
  ld loss = 0;               ///< mean cross-entropy
  std::vector<ld> logits;    ///< [B, K]
  std::vector<ld> preacts;   ///< every ReLU input, for kink detection
};

namespace detail {

/// 3x3 convolution, zero padding 1. in: [C, H, W], w: [F, C, 3, 3].
inline std::vector<ld> conv3x3(const std::vector<ld>& in, std::size_t c, std::size_t h, std::size_t w,
                               const std::vector<ld>& weight, const std::vector<ld>& bias, std::size_t f,
                               std::size_t stride, std::size_t& oh, std::size_t& ow) {
  oh = (h + 2 - 3) / stride + 1;
  ow = (w + 2 - 3) / stride + 1;
  std::vector<ld> out(f * oh * ow);
  for (std::size_t o = 0; o < f; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        ld s = bias[o];
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - 1;
              const long ix = static_cast<long>(x * stride + kx) - 1;
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              s += weight[((o * c + ch) * 3 + ky) * 3 + kx] * in[(ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
            }
          }
        }
        out[(o * oh + y) * ow + x] = s;
      }
    }
  }
  return out;
}

inline std::vector<ld> dense(const std::vector<ld>& in, const std::vector<ld>& weight, const std::vector<ld>& bias) {
  const std::size_t out_n = bias.size();
  const std::size_t in_n = in.size();
  std::vector<ld> out(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    ld s = bias[o];
    for (std::size_t i = 0; i < in_n; ++i) s += weight[o * in_n + i] * in[i];
    out[o] = s;
  }
  return out;
}

inline void relu(std::vector<ld>& v, std::vector<ld>& record, bool identity) {
  record.insert(record.end(), v.begin(), v.end());
  if (identity) return;
  for (ld& a : v) a = a > 0 ? a : 0;
}

}  // namespace detail

using LdParams = std::vector<std::vector<ld>>;

inline LdParams to_ld(const ParamSet& p) {
  LdParams out;
  for (const auto& g : p.groups) out.emplace_back(g.value.data().begin(), g.value.data().end());
  return out;
}

inline std::vector<ld> to_ld(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline RefResult reference(const ArchSpec& arch, const LdParams& p, const std::vector<ld>& x, std::size_t batch,
                           const std::vector<int>& labels) {
  RefResult r;
  const auto& in = arch.input;
  const std::size_t d = in.numel();
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<ld> sample(x.begin() + static_cast<long>(b * d), x.begin() + static_cast<long>((b + 1) * d));
    std::vector<ld> logits;
    if (arch.kind == ArchKind::mlp_small) {
      auto h1 = detail::dense(sample, p[0], p[1]);
      detail::relu(h1, r.preacts, arch.identity_activation);
      auto h2 = detail::dense(h1, p[2], p[3]);
      detail::relu(h2, r.preacts, arch.identity_activation);
      logits = detail::dense(h2, p[4], p[5]);
    } else {
      std::size_t h1, w1, h2, w2;
      auto a1 = detail::conv3x3(sample, in.channels, in.height, in.width, p[0], p[1], zg::kConv1Filters, 1, h1, w1);
      detail::relu(a1, r.preacts, arch.identity_activation);
      auto a2 = detail::conv3x3(a1, zg::kConv1Filters, h1, w1, p[2], p[3], zg::kConv2Filters, 2, h2, w2);
      detail::relu(a2, r.preacts, arch.identity_activation);
      logits = detail::dense(a2, p[4], p[5]);
    }
    const ld m = *std::max_element(logits.begin(), logits.end());
    ld z = 0;
    for (ld v : logits) z += std::exp(v - m);
    r.loss += -(logits[static_cast<std::size_t>(labels[b])] - m - std::log(z));
    r.logits.insert(r.logits.end(), logits.begin(), logits.end());
  }
  r.loss /= static_cast<ld>(batch);
  return r;
}

/// Central difference of the reference loss along one coordinate. `kinked`
/// reports a ReLU input changing sign inside [v - h, v + h], where the
/// difference quotient is not a derivative estimate.
struct FdValue {
  ld value = 0;
  bool kinked = false;
};

template <class Perturb>
FdValue central_difference(const ArchSpec& arch, LdParams p, std::vector<ld> x, std::size_t batch,
                           const std::vector<int>& labels, ld h, Perturb&& at) {
  ld& v = at(p, x);
  const ld orig = v;
  v = orig + h;
  const RefResult up = reference(arch, p, x, batch, labels);
  v = orig - h;
  const RefResult down = reference(arch, p, x, batch, labels);
  v = orig;
  FdValue out{(up.loss - down.loss) / (2 * h), false};
  if (!arch.identity_activation) {
    for (std::size_t i = 0; i < up.preacts.size(); ++i) {
      if ((up.preacts[i] > 0) != (down.preacts[i] > 0)) {
        out.kinked = true;
        break;
      }
    }
  }
  return out;
}

/// Relative error with an absolute floor for tiny magnitudes.
inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_tol, double tiny) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < tiny) return std::abs(analytic - numeric) <= abs_tol;
  return std::abs(analytic - numeric) / mag <= rel_tol;
}

inline Tensor random_images(std::mt19937_64& gen, zg::Shape shape) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : t.data()) v = u(gen);
  return t;
}

inline std::vector<int> random_labels(std::mt19937_64& gen, std::size_t n, std::size_t k) {
  std::vector<int> y(n);
  std::uniform_int_distribution<int> u(0, static_cast<int>(k) - 1);
  for (int& v : y) v = u(gen);
  return y;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("zg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct GradCheckStats {
  std::size_t checked = 0;
  std::size_t kinked = 0;  ///< skipped: difference straddles a ReLU kink
  std::size_t failed = 0;
  double max_rel_err = 0.0;
  std::string first_failure;
};

struct GradCheckOptions {
  std::size_t batch = 3;
  std::size_t per_group = 40;     ///< sampled coordinates per parameter group
  std::size_t input_coords = 64;  ///< sampled input coordinates
  ld h = 1e-6L;
  double rel_tol = 1e-5;
  double abs_tol = 1e-10;
  double tiny = 1e-8;
};

/// Analytic input and parameter gradients against central differences of
/// the reference network on one random instance.
inline GradCheckStats check_gradients(const ArchSpec& arch, std::uint64_t seed, const GradCheckOptions& opt = {}) {
  std::mt19937_64 gen(seed);
  ParamSet params = zg::init_params(arch, seed);
  std::normal_distribution<double> bias(0.0, 0.1);
  for (auto& g : params.groups) {
    if (g.name.ends_with(".bias")) {
      for (double& v : g.value.data()) v = bias(gen);
    }
  }
  const auto& in = arch.input;
  const Tensor x = random_images(gen, {opt.batch, in.channels, in.height, in.width});
  const auto y = random_labels(gen, opt.batch, arch.num_classes);
  const zg::LossGrad lg = zg::loss_and_grads(arch, params, x, y, zg::GradRequest{true, true});
  const LdParams lp = to_ld(params);
  const std::vector<ld> lx = to_ld(x);

  GradCheckStats st;
  auto record = [&](double analytic, const FdValue& fd, const std::string& where) {
    if (fd.kinked) {
      ++st.kinked;
      return;
    }
    ++st.checked;
    const double numeric = static_cast<double>(fd.value);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    if (mag >= opt.tiny) st.max_rel_err = std::max(st.max_rel_err, std::abs(analytic - numeric) / mag);
    if (!grad_close(analytic, numeric, opt.rel_tol, opt.abs_tol, opt.tiny)) {
      if (st.failed++ == 0) {
        st.first_failure = where + ": analytic " + std::to_string(analytic) + " numeric " + std::to_string(numeric);
      }
    }
  };
  auto pick = [&](std::size_t n, std::size_t want) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (want < n) {
      std::shuffle(idx.begin(), idx.end(), gen);
      idx.resize(want);
    }
    return idx;
  };
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    for (std::size_t i : pick(params[gi].numel(), opt.per_group)) {
      const FdValue fd = central_difference(arch, lp, lx, opt.batch, y, opt.h,
                                            [&](LdParams& p, std::vector<ld>&) -> ld& { return p[gi][i]; });
      record((*lg.param_grad)[gi][i], fd, params.groups[gi].name + "[" + std::to_string(i) + "]");
    }
  }
  for (std::size_t i : pick(x.numel(), opt.input_coords)) {
    const FdValue fd = central_difference(arch, lp, lx, opt.batch, y, opt.h,
                                          [&](LdParams&, std::vector<ld>& v) -> ld& { return v[i]; });
    record(lg.input_grad[i], fd, "input[" + std::to_string(i) + "]");
  }
  return st;
}

/// Sort-based reference for the zeroing rule: the lower q-quantile of |g| by
/// linear interpolation on the full ascending sort, then |g_i| < t.
inline std::vector<std::uint8_t> oracle_zero_mask(const std::vector<double>& g, double q) {
  std::vector<double> mag(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mag[i] = std::abs(g[i]);
  std::vector<double> sorted = mag;
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double t = sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  std::vector<std::uint8_t> mask(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) mask[i] = mag[i] < t;
  return mask;
}

/// Random gradient-like vectors that exercise ties, zeros and constants.
inline std::vector<double> tricky_vector(std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_int_distribution<int> style(0, 4);
  const std::size_t d = dim(gen);
  std::vector<double> v(d);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> small(-3, 3);
  switch (style(gen)) {
    case 0:  // continuous
      for (double& x : v) x = n(gen);
      break;
    case 1:  // heavy ties
      for (double& x : v) x = 0.25 * small(gen);
      break;
    case 2: {  // constant magnitude, random signs
      const double c = std::abs(n(gen));
      for (double& x : v) x = small(gen) < 0 ? -c : c;
      break;
    }
    case 3:  // all zero
      break;
    default:  // sparse
      for (double& x : v) x = small(gen) == 0 ? n(gen) : 0.0;
  }
  return v;
}

inline double random_q(std::mt19937_64& gen, std::size_t d) {
  std::uniform_int_distribution<int> style(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  switch (style(gen)) {
    case 0: return 0.0;
    case 1: {  // lands exactly on an order statistic
      if (d < 2) return 0.0;
      std::uniform_int_distribution<std::size_t> k(0, d - 2);
      return static_cast<double>(k(gen)) / static_cast<double>(d - 1);
    }
    default: return std::min(u(gen), 0.999);
  }
}

}  // namespace zgt
