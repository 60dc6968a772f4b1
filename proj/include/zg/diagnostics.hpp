#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zg/attacks.hpp"
#include "zg/engine.hpp"
#include "zg/tensor.hpp"

namespace zg {

/// One row of epochs.csv. `epoch` counts completed epochs (first row is 1).
struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_fgsm_acc = 0.0;
  double val_clean_acc = 0.0;
  double val_robust_acc = 0.0;
  std::vector<std::pair<std::string, double>> weight_update_mse;
  double probe_pert_mse = 0.0;
  double mean_l1_x255 = 0.0;
  std::optional<double> sign_diff_pgd_pct;

  double max_weight_update_mse() const {
    double m = 0.0;
    for (const auto& [name, v] : weight_update_mse) m = std::max(m, v);
    return m;
  }

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

namespace detail {

inline void same_shape(const Tensor& a, const Tensor& b, const char* fn) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(fn) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline double mse(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

}  // namespace detail

/// Per group: mean squared elementwise change.
inline std::vector<std::pair<std::string, double>> weight_update_mse(const ParamSet& before, const ParamSet& after) {
  if (before.size() != after.size()) throw std::invalid_argument("weight_update_mse: group count mismatch");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t g = 0; g < before.size(); ++g) {
    if (before.groups[g].name != after.groups[g].name) {
      throw std::invalid_argument("weight_update_mse: group " + before.groups[g].name + " vs " + after.groups[g].name);
    }
    detail::same_shape(before[g], after[g], "weight_update_mse");
    out.emplace_back(before.groups[g].name, detail::mse(before[g], after[g]));
  }
  return out;
}

/// Mean squared difference between the probe perturbations of two epochs.
inline double probe_pert_mse(const Tensor& delta_prev, const Tensor& delta_curr) {
  detail::same_shape(delta_prev, delta_curr, "probe_pert_mse");
  return detail::mse(delta_prev, delta_curr);
}

/// Per-sample mean |delta| (so input size drops out), averaged over samples, times 255.
/// Accumulated in long double so a saturated step comes back as exactly 255 eps.
inline double mean_l1_norm(const Tensor& deltas) {
  const std::size_t n = deltas.dim(0);
  const std::size_t d = deltas.row_size();
  long double total = 0.0L;
  for (std::size_t b = 0; b < n; ++b) {
    long double l1 = 0.0L;
    for (double v : deltas.row(b)) l1 += std::abs(v);
    total += l1 / static_cast<long double>(d);
  }
  return static_cast<double>(255.0L * total / static_cast<long double>(n));
}

/// Percent of coordinates where the method's step points against PGD's.
/// Coordinates where either side is zero never count.
inline double sign_diff_vs_pgd(const Tensor& delta_method, const Tensor& delta_pgd) {
  detail::same_shape(delta_method, delta_pgd, "sign_diff_vs_pgd");
  std::size_t opposed = 0;
  for (std::size_t i = 0; i < delta_method.numel(); ++i) {
    const double a = sign(delta_method[i]);
    if (a != 0.0 && a == -sign(delta_pgd[i])) ++opposed;
  }
  return 100.0 * static_cast<double>(opposed) / static_cast<double>(delta_method.numel());
}

// ---------------------------------------------------------------------------
// Saliency

/// |grad| at the clean input, and the same map with MultiGrad's disagreeing
/// coordinates zeroed. Channels are averaged so each map is H x W.
struct SaliencyMaps {
  std::size_t height = 0, width = 0;
  std::vector<std::vector<double>> plain;
  std::vector<std::vector<double>> masked;
};

inline SaliencyMaps saliency_maps(const ArchSpec& arch, const ParamSet& params, const Tensor& x, std::span<const int> y,
                                  const AttackSpec& multigrad, StreamKey key) {
  detail::require(multigrad, {AttackKind::multigrad}, "saliency_maps");
  const Tensor g = loss_and_grads(arch, params, x, y, GradRequest{false, true}).input_grad;
  std::vector<Tensor> starts(multigrad.n_samples);
  for (std::size_t j = 0; j < multigrad.n_samples; ++j) {
    Rng rng(key.child(j));
    starts[j] = detail::input_grad(arch, params, x, detail::random_start(x, multigrad, rng), y);
  }
  const AgreementMask agree = sign_agreement_mask(starts);
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  SaliencyMaps out{h, w, {}, {}};
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    std::vector<double> plain(h * w), masked(h * w);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < h * w; ++p) {
        const std::size_t i = (b * c + ch) * h * w + p;
        plain[p] += std::abs(g[i]) / static_cast<double>(c);
        if (agree.mask[i]) masked[p] += std::abs(g[i]) / static_cast<double>(c);
      }
    }
    out.plain.push_back(std::move(plain));
    out.masked.push_back(std::move(masked));
  }
  return out;
}

/// Fraction of the top-decile pixels of `plain` (at least one pixel) whose
/// masked value is nonzero.
inline double top_decile_survival(const std::vector<double>& plain, const std::vector<double>& masked) {
  const std::size_t k = std::max<std::size_t>(1, (plain.size() + 9) / 10);
  std::vector<std::size_t> idx(plain.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return plain[a] > plain[b]; });
  std::size_t kept = 0;
  for (std::size_t i = 0; i < k; ++i) kept += masked[idx[i]] != 0.0;
  return static_cast<double>(kept) / static_cast<double>(k);
}

/// Maps values to 0..255 with lo -> 0 and hi -> 255; a flat map is all zeros.
inline std::vector<unsigned char> to_gray(const std::vector<double>& v, double lo, double hi) {
  std::vector<unsigned char> out(v.size(), 0);
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::lround(std::clamp((v[i] - lo) / (hi - lo), 0.0, 1.0) * 255.0));
  }
  return out;
}

inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      const std::vector<unsigned char>& pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

/// Writes sample_<i>_input.pgm, sample_<i>_saliency.pgm and
/// sample_<i>_masked.pgm. The masked map reuses the plain map's min-max.
inline SaliencyMaps dump_gradient_images(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                                         std::span<const int> y, const AttackSpec& multigrad, StreamKey key,
                                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SaliencyMaps maps = saliency_maps(arch, params, x, y, multigrad, key);
  const std::size_t c = x.dim(1), hw = maps.height * maps.width;
  for (std::size_t b = 0; b < maps.plain.size(); ++b) {
    std::vector<double> image(hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t p = 0; p < hw; ++p) image[p] += x[(b * c + ch) * hw + p] / static_cast<double>(c);
    }
    const auto& plain = maps.plain[b];
    const auto [lo, hi] = std::minmax_element(plain.begin(), plain.end());
    const std::string stem = "sample_" + std::to_string(b);
    write_pgm(dir / (stem + "_input.pgm"), maps.width, maps.height, to_gray(image, 0.0, 1.0));
    write_pgm(dir / (stem + "_saliency.pgm"), maps.width, maps.height, to_gray(plain, *lo, *hi));
    write_pgm(dir / (stem + "_masked.pgm"), maps.width, maps.height, to_gray(maps.masked[b], *lo, *hi));
  }
  return maps;
}

// ---------------------------------------------------------------------------
// epochs.csv

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string csv_header(const std::vector<std::string>& groups) {
  std::string h = "epoch,train_loss,train_fgsm_acc,val_clean_acc,val_robust_acc,probe_pert_mse,mean_l1_x255,sign_diff_pgd_pct";
  for (const auto& g : groups) h += ",wupd_mse_" + g;
  return h + "\n";
}

inline std::string csv_row(const EpochRecord& r) {
  std::string s = std::to_string(r.epoch);
  for (double v : {r.train_loss, r.train_fgsm_acc, r.val_clean_acc, r.val_robust_acc, r.probe_pert_mse, r.mean_l1_x255}) {
    s += "," + format_real(v);
  }
  s += ",";
  if (r.sign_diff_pgd_pct) s += format_real(*r.sign_diff_pgd_pct);
  for (const auto& [name, v] : r.weight_update_mse) s += "," + format_real(v);
  return s + "\n";
}

inline std::string csv_text(const std::vector<std::string>& groups, const std::vector<EpochRecord>& records) {
  std::string s = csv_header(groups);
  for (const auto& r : records) s += csv_row(r);
  return s;
}

inline void write_csv(const std::filesystem::path& path, const std::vector<std::string>& groups,
                      const std::vector<EpochRecord>& records) {
  const std::string text = csv_text(groups, records);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

/// strtod without the range error on subnormals, so every printed double reads back.
inline double parse_real(const std::string& s) {
  if (s.empty()) throw std::invalid_argument("empty field");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

inline std::vector<EpochRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path.string() + ": cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header row");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
  }
  const std::size_t fixed = 8;
  if (cols.size() < fixed || cols[0] != "epoch" || cols[4] != "val_robust_acc") {
    throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
  }
  std::vector<EpochRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != cols.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols.size()) +
                               " fields, got " + std::to_string(f.size()));
    }
    try {
      EpochRecord r;
      r.epoch = std::stoul(f[0]);
      r.train_loss = parse_real(f[1]);
      r.train_fgsm_acc = parse_real(f[2]);
      r.val_clean_acc = parse_real(f[3]);
      r.val_robust_acc = parse_real(f[4]);
      r.probe_pert_mse = parse_real(f[5]);
      r.mean_l1_x255 = parse_real(f[6]);
      if (!f[7].empty()) r.sign_diff_pgd_pct = parse_real(f[7]);
      for (std::size_t i = fixed; i < cols.size(); ++i) r.weight_update_mse.emplace_back(cols[i].substr(9), parse_real(f[i]));
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return out;
}

}  // namespace zg
