#pragma once

// Exact-gradient engine for two fixed architectures.
//
//   mlp-small: flatten -> dense(256) -> ReLU -> dense(256) -> ReLU -> dense(K)
//   cnn-small: conv3x3(16, s1, p1) -> ReLU -> conv3x3(32, s2, p1) -> ReLU
//              -> flatten -> dense(K)
//
// Loss is mean softmax cross-entropy over the batch. Both the parameter and
// the input gradient are computed analytically by a hand-written backward
// pass; matrix products go through Eigen.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "zg/rng.hpp"
#include "zg/tensor.hpp"

namespace zg {

enum class ArchKind { mlp_small, cnn_small };

inline std::string to_string(ArchKind k) { return k == ArchKind::mlp_small ? "mlp-small" : "cnn-small"; }

inline ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "mlp-small") return ArchKind::mlp_small;
  if (s == "cnn-small") return ArchKind::cnn_small;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected mlp-small or cnn-small)");
}

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 8;
  std::size_t width = 8;

  std::size_t numel() const { return channels * height * width; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

struct ArchSpec {
  ArchKind kind = ArchKind::mlp_small;
  InputShape input;
  std::size_t num_classes = 10;
  /// Test-only: replace every ReLU by the identity, making the network linear.
  bool identity_activation = false;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

inline constexpr std::size_t kMlpHidden = 256;
inline constexpr std::size_t kConv1Filters = 16;
inline constexpr std::size_t kConv2Filters = 32;

inline std::size_t conv2_out(std::size_t n) { return (n + 2 - 3) / 2 + 1; }

struct ParamGroup {
  std::string name;
  Tensor value;

  friend bool operator==(const ParamGroup&, const ParamGroup&) = default;
};

/// Named parameter tensors in a fixed order determined by the ArchSpec.
struct ParamSet {
  std::vector<ParamGroup> groups;

  std::size_t size() const { return groups.size(); }
  Tensor& operator[](std::size_t i) { return groups[i].value; }
  const Tensor& operator[](std::size_t i) const { return groups[i].value; }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.value.numel();
    return n;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;
};

struct GroupLayout {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 for biases
};

inline std::vector<GroupLayout> param_layout(const ArchSpec& arch) {
  const InputShape& in = arch.input;
  const std::size_t k = arch.num_classes;
  if (arch.kind == ArchKind::mlp_small) {
    const std::size_t d = in.numel();
    return {
        {"fc1.weight", {kMlpHidden, d}, d},
        {"fc1.bias", {kMlpHidden}, 0},
        {"fc2.weight", {kMlpHidden, kMlpHidden}, kMlpHidden},
        {"fc2.bias", {kMlpHidden}, 0},
        {"fc3.weight", {k, kMlpHidden}, kMlpHidden},
        {"fc3.bias", {k}, 0},
    };
  }
  const std::size_t flat = kConv2Filters * conv2_out(in.height) * conv2_out(in.width);
  return {
      {"conv1.weight", {kConv1Filters, in.channels, 3, 3}, in.channels * 9},
      {"conv1.bias", {kConv1Filters}, 0},
      {"conv2.weight", {kConv2Filters, kConv1Filters, 3, 3}, kConv1Filters * 9},
      {"conv2.bias", {kConv2Filters}, 0},
      {"fc.weight", {k, flat}, flat},
      {"fc.bias", {k}, 0},
  };
}

inline void validate(const ArchSpec& arch) {
  if (arch.num_classes == 0) throw std::invalid_argument("num_classes must be positive");
  if (arch.input.channels == 0 || arch.input.height == 0 || arch.input.width == 0) {
    throw std::invalid_argument("input shape dimensions must be positive");
  }
}

/// All-zero ParamSet with the layout of `arch` (also used for momentum buffers).
inline ParamSet zeros_like(const ArchSpec& arch) {
  ParamSet p;
  for (auto& g : param_layout(arch)) p.groups.push_back({g.name, Tensor(g.shape)});
  return p;
}

inline ParamSet zeros_like(const ParamSet& ref) {
  ParamSet p;
  for (const auto& g : ref.groups) p.groups.push_back({g.name, Tensor(g.value.shape())});
  return p;
}

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases.
inline ParamSet init_params(const ArchSpec& arch, std::uint64_t seed) {
  validate(arch);
  Rng rng(seed);
  ParamSet p;
  for (auto& g : param_layout(arch)) {
    Tensor t(g.shape);
    if (g.fan_in > 0) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(g.fan_in));
      for (double& v : t.data()) v = stddev * rng.normal();
    }
    p.groups.push_back({g.name, std::move(t)});
  }
  return p;
}

inline void check_params(const ArchSpec& arch, const ParamSet& params) {
  const auto layout = param_layout(arch);
  if (params.size() != layout.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params.size()) + " groups, architecture " +
                                to_string(arch.kind) + " expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.groups[i].name != layout[i].name || params[i].shape() != layout[i].shape) {
      throw std::invalid_argument("parameter group " + std::to_string(i) + " is " + params.groups[i].name +
                                  shape_str(params[i].shape()) + ", expected " + layout[i].name +
                                  shape_str(layout[i].shape));
    }
  }
}

inline void check_input(const ArchSpec& arch, const Tensor& x) {
  const InputShape& in = arch.input;
  const Shape want{in.channels, in.height, in.width};
  if (x.rank() != 4 || Shape(x.shape().begin() + 1, x.shape().end()) != want) {
    throw std::invalid_argument("input batch shape " + shape_str(x.shape()) + " does not match [B," +
                                std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                                std::to_string(in.width) + "] required by " + to_string(arch.kind));
  }
}

struct GradRequest {
  bool params = false;
  bool input = false;
};

struct LossGrad {
  double loss = 0.0;                  ///< mean cross-entropy over the batch
  std::vector<double> sample_loss;    ///< per-sample cross-entropy
  std::vector<std::size_t> predicted; ///< argmax class per sample
  Tensor input_grad;                  ///< empty unless requested
  std::optional<ParamSet> param_grad;

  std::size_t correct(std::span<const int> labels) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) n += predicted[i] == static_cast<std::size_t>(labels[i]);
    return n;
  }
};

namespace detail {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using Idx = Eigen::Index;

inline constexpr std::size_t kChunk = 16;

inline Idx ix(std::size_t v) { return static_cast<Idx>(v); }

inline ConstRowMap as_matrix(const Tensor& t, std::size_t rows) {
  return ConstRowMap(t.ptr(), ix(rows), ix(t.numel() / rows));
}
inline RowMap as_matrix(Tensor& t, std::size_t rows) { return RowMap(t.ptr(), ix(rows), ix(t.numel() / rows)); }
inline ConstVecMap as_vector(const Tensor& t) { return ConstVecMap(t.ptr(), ix(t.numel())); }
inline VecMap as_vector(Tensor& t) { return VecMap(t.ptr(), ix(t.numel())); }

/// Gather table for a 3x3 pad-1 convolution of one sample: for im2col row
/// r = c*9 + ky*3 + kx and output position p, the offset inside input channel
/// plane c, or -1 for padding.
struct ConvPlan {
  std::size_t channels = 0, in_h = 0, in_w = 0, out_h = 0, out_w = 0;
  std::vector<int> offset;  // [9][out_plane], shared by all channels

  std::size_t rows() const { return channels * 9; }
  std::size_t in_plane() const { return in_h * in_w; }
  std::size_t out_plane() const { return out_h * out_w; }
};

inline ConvPlan make_plan(std::size_t channels, std::size_t in_h, std::size_t in_w, std::size_t stride) {
  ConvPlan plan{channels, in_h, in_w, (in_h - 1) / stride + 1, (in_w - 1) / stride + 1, {}};
  plan.offset.assign(9 * plan.out_plane(), -1);
  for (std::size_t k = 0; k < 9; ++k) {
    for (std::size_t oy = 0; oy < plan.out_h; ++oy) {
      for (std::size_t ox = 0; ox < plan.out_w; ++ox) {
        const long iy = static_cast<long>(oy * stride + k / 3) - 1;
        const long jx = static_cast<long>(ox * stride + k % 3) - 1;
        if (iy < 0 || jx < 0 || iy >= static_cast<long>(in_h) || jx >= static_cast<long>(in_w)) continue;
        plan.offset[k * plan.out_plane() + oy * plan.out_w + ox] = static_cast<int>(iy * static_cast<long>(in_w) + jx);
      }
    }
  }
  return plan;
}

/// Strided view of a chunk of feature maps: element (c, b, q) lives at
/// base[c * channel_stride + b * sample_stride + q].
struct Planes {
  std::size_t channel_stride;
  std::size_t sample_stride;
};

// cols is row-major [rows, nb * out_plane].
inline void im2col(const ConvPlan& plan, std::size_t nb, const double* src, Planes s, double* cols) {
  const std::size_t op = plan.out_plane();
  const std::size_t width = nb * op;
  for (std::size_t c = 0; c < plan.channels; ++c) {
    for (std::size_t k = 0; k < 9; ++k) {
      const int* off = plan.offset.data() + k * op;
      double* dst = cols + (c * 9 + k) * width;
      for (std::size_t b = 0; b < nb; ++b) {
        const double* in = src + c * s.channel_stride + b * s.sample_stride;
        double* out = dst + b * op;
        for (std::size_t p = 0; p < op; ++p) out[p] = off[p] < 0 ? 0.0 : in[off[p]];
      }
    }
  }
}

inline void col2im(const ConvPlan& plan, std::size_t nb, const double* cols, Planes s, double* dst) {
  const std::size_t op = plan.out_plane();
  const std::size_t width = nb * op;
  for (std::size_t c = 0; c < plan.channels; ++c) {
    for (std::size_t k = 0; k < 9; ++k) {
      const int* off = plan.offset.data() + k * op;
      const double* src = cols + (c * 9 + k) * width;
      for (std::size_t b = 0; b < nb; ++b) {
        double* out = dst + c * s.channel_stride + b * s.sample_stride;
        const double* in = src + b * op;
        for (std::size_t p = 0; p < op; ++p) {
          if (off[p] >= 0) out[off[p]] += in[p];
        }
      }
    }
  }
}

/// bias_grad[r] += sum_j m(r, j), summed in column order. Eigen's vectorized
/// reductions peel by address alignment, which would make the rounding
/// depend on where the scratch buffer happens to live.
template <class M>
void add_row_sums(Tensor& bias_grad, const M& m) {
  for (Idx r = 0; r < m.rows(); ++r) {
    double s = 0.0;
    for (Idx j = 0; j < m.cols(); ++j) s += m(r, j);
    bias_grad[static_cast<std::size_t>(r)] += s;
  }
}

/// Per-thread scratch, sized for one chunk and reused across calls so the
/// hot loop does not touch fresh pages.
struct Scratch {
  std::vector<double, Eigen::aligned_allocator<double>> buf[8];

  double* get(std::size_t slot, std::size_t n) {
    if (buf[slot].size() < n) buf[slot].resize(n);
    return buf[slot].data();
  }
  static Scratch& local() {
    thread_local Scratch s;
    return s;
  }
};

inline void relu_inplace(double* v, std::size_t n, bool identity) {
  if (identity) return;
  for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
}

// ReLU'(0) = 0. With a = max(z, 0), z > 0 exactly when a > 0.
inline void relu_backward(double* grad, const double* act, std::size_t n, bool identity) {
  if (identity) return;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(act[i] > 0.0)) grad[i] = 0.0;
  }
}

/// Writes per-sample loss and prediction for columns [first, first + nb) and,
/// if dlogits is non-null, the gradient of the batch-mean loss.
inline void softmax_xent(const MatMap& logits, std::span<const int> labels, std::size_t first, std::size_t batch,
                         LossGrad& out, double* dlogits) {
  const Idx k = logits.rows();
  for (Idx j = 0; j < logits.cols(); ++j) {
    const std::size_t b = first + static_cast<std::size_t>(j);
    Idx arg = 0;
    const double m = logits.col(j).maxCoeff(&arg);
    out.predicted[b] = static_cast<std::size_t>(arg);
    if (labels.empty()) continue;
    const Eigen::ArrayXd e = (logits.col(j).array() - m).exp();
    const double s = e.sum();
    const auto y = static_cast<Idx>(labels[b]);
    out.sample_loss[b] = std::log(s) - (logits(y, j) - m);
    if (dlogits) {
      MatMap d(dlogits, k, logits.cols());
      d.col(j) = (e / s).matrix() / static_cast<double>(batch);
      d(y, j) -= 1.0 / static_cast<double>(batch);
    }
  }
}

struct Pass {
  const ArchSpec& arch;
  const ParamSet& p;
  const Tensor& x;
  std::span<const int> labels;
  GradRequest req;
  LossGrad& out;
  double* logits_all;  // optional K x B column-major
};

inline void mlp_chunk(Pass& ps, std::size_t first, std::size_t nb) {
  Scratch& sc = Scratch::local();
  const std::size_t d = ps.arch.input.numel();
  const std::size_t k = ps.arch.num_classes;
  const bool id = ps.arch.identity_activation;
  const std::size_t h = kMlpHidden;
  const Eigen::Map<const Mat> in(ps.x.ptr() + first * d, ix(d), ix(nb));

  MatMap a1(sc.get(0, h * nb), ix(h), ix(nb));
  a1.noalias() = as_matrix(ps.p[0], h) * in;
  a1.colwise() += as_vector(ps.p[1]);
  relu_inplace(a1.data(), a1.size(), id);
  MatMap a2(sc.get(1, h * nb), ix(h), ix(nb));
  a2.noalias() = as_matrix(ps.p[2], h) * a1;
  a2.colwise() += as_vector(ps.p[3]);
  relu_inplace(a2.data(), a2.size(), id);
  MatMap logits(sc.get(2, k * nb), ix(k), ix(nb));
  logits.noalias() = as_matrix(ps.p[4], k) * a2;
  logits.colwise() += as_vector(ps.p[5]);
  if (ps.logits_all) MatMap(ps.logits_all + first * k, ix(k), ix(nb)) = logits;

  const bool backward = ps.req.params || ps.req.input;
  MatMap dz3(sc.get(3, k * nb), ix(k), ix(nb));
  softmax_xent(logits, ps.labels, first, ps.x.dim(0), ps.out, backward ? dz3.data() : nullptr);
  if (!backward) return;

  ParamSet* g = ps.req.params ? &*ps.out.param_grad : nullptr;
  if (g) {
    as_matrix((*g)[4], k).noalias() += dz3 * a2.transpose();
    add_row_sums((*g)[5], dz3);
  }
  MatMap dz2(sc.get(4, h * nb), ix(h), ix(nb));
  dz2.noalias() = as_matrix(ps.p[4], k).transpose() * dz3;
  relu_backward(dz2.data(), a2.data(), dz2.size(), id);
  if (g) {
    as_matrix((*g)[2], h).noalias() += dz2 * a1.transpose();
    add_row_sums((*g)[3], dz2);
  }
  MatMap dz1(sc.get(5, h * nb), ix(h), ix(nb));
  dz1.noalias() = as_matrix(ps.p[2], h).transpose() * dz2;
  relu_backward(dz1.data(), a1.data(), dz1.size(), id);
  if (g) {
    as_matrix((*g)[0], h).noalias() += dz1 * in.transpose();
    add_row_sums((*g)[1], dz1);
  }
  if (ps.req.input) {
    MatMap dx(ps.out.input_grad.ptr() + first * d, ix(d), ix(nb));
    dx.noalias() = as_matrix(ps.p[0], h).transpose() * dz1;
  }
}

struct CnnPlans {
  ConvPlan conv1, conv2;
};

inline const CnnPlans& cnn_plans(const InputShape& in) {
  thread_local InputShape cached{0, 0, 0};
  thread_local CnnPlans plans;
  if (!(cached == in)) {
    plans.conv1 = make_plan(in.channels, in.height, in.width, 1);
    plans.conv2 = make_plan(kConv1Filters, in.height, in.width, 2);
    cached = in;
  }
  return plans;
}

inline void cnn_chunk(Pass& ps, std::size_t first, std::size_t nb) {
  Scratch& sc = Scratch::local();
  const InputShape& in = ps.arch.input;
  const CnnPlans& plans = cnn_plans(in);
  const ConvPlan& c1 = plans.conv1;
  const ConvPlan& c2 = plans.conv2;
  const std::size_t k = ps.arch.num_classes;
  const bool id = ps.arch.identity_activation;
  const std::size_t n1 = nb * c1.out_plane();
  const std::size_t n2 = nb * c2.out_plane();
  const std::size_t p2 = c2.out_plane();
  const std::size_t flat = kConv2Filters * p2;
  const std::size_t sample = in.numel();

  // Layers are stored row-major [channels, nb * plane].
  RowMap cols1(sc.get(0, c1.rows() * n1), ix(c1.rows()), ix(n1));
  im2col(c1, nb, ps.x.ptr() + first * sample, Planes{c1.in_plane(), sample}, cols1.data());
  RowMap a1(sc.get(1, kConv1Filters * n1), ix(kConv1Filters), ix(n1));
  a1.noalias() = as_matrix(ps.p[0], kConv1Filters) * cols1;
  a1.colwise() += as_vector(ps.p[1]);
  relu_inplace(a1.data(), a1.size(), id);

  RowMap cols2(sc.get(2, c2.rows() * n2), ix(c2.rows()), ix(n2));
  im2col(c2, nb, a1.data(), Planes{n1, c1.out_plane()}, cols2.data());
  RowMap a2(sc.get(3, kConv2Filters * n2), ix(kConv2Filters), ix(n2));
  a2.noalias() = as_matrix(ps.p[2], kConv2Filters) * cols2;
  a2.colwise() += as_vector(ps.p[3]);
  relu_inplace(a2.data(), a2.size(), id);

  // Flatten each sample in (channel, y, x) order.
  MatMap feat(sc.get(4, flat * nb), ix(flat), ix(nb));
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < kConv2Filters; ++c) {
      std::copy_n(a2.data() + c * n2 + b * p2, p2, feat.data() + b * flat + c * p2);
    }
  }
  MatMap logits(sc.get(5, k * nb), ix(k), ix(nb));
  logits.noalias() = as_matrix(ps.p[4], k) * feat;
  logits.colwise() += as_vector(ps.p[5]);
  if (ps.logits_all) MatMap(ps.logits_all + first * k, ix(k), ix(nb)) = logits;

  const bool backward = ps.req.params || ps.req.input;
  MatMap dlogits(sc.get(6, k * nb), ix(k), ix(nb));
  softmax_xent(logits, ps.labels, first, ps.x.dim(0), ps.out, backward ? dlogits.data() : nullptr);
  if (!backward) return;

  ParamSet* g = ps.req.params ? &*ps.out.param_grad : nullptr;
  if (g) {
    as_matrix((*g)[4], k).noalias() += dlogits * feat.transpose();
    add_row_sums((*g)[5], dlogits);
  }
  MatMap dfeat(sc.get(7, flat * nb), ix(flat), ix(nb));
  dfeat.noalias() = as_matrix(ps.p[4], k).transpose() * dlogits;
  // feat's slot is free once the fc weight gradient is taken.
  RowMap dz2(sc.get(4, kConv2Filters * n2), ix(kConv2Filters), ix(n2));
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t c = 0; c < kConv2Filters; ++c) {
      std::copy_n(dfeat.data() + b * flat + c * p2, p2, dz2.data() + c * n2 + b * p2);
    }
  }
  relu_backward(dz2.data(), a2.data(), dz2.size(), id);
  if (g) {
    as_matrix((*g)[2], kConv2Filters).noalias() += dz2 * cols2.transpose();
    add_row_sums((*g)[3], dz2);
  }
  // cols2 is dead after the weight gradient; its buffer receives dcols2.
  RowMap dcols2(sc.get(2, c2.rows() * n2), ix(c2.rows()), ix(n2));
  dcols2.noalias() = as_matrix(ps.p[2], kConv2Filters).transpose() * dz2;
  RowMap dz1(sc.get(7, kConv1Filters * n1), ix(kConv1Filters), ix(n1));
  dz1.setZero();
  col2im(c2, nb, dcols2.data(), Planes{n1, c1.out_plane()}, dz1.data());
  relu_backward(dz1.data(), a1.data(), dz1.size(), id);
  if (g) {
    as_matrix((*g)[0], kConv1Filters).noalias() += dz1 * cols1.transpose();
    add_row_sums((*g)[1], dz1);
  }
  if (ps.req.input) {
    RowMap dcols1(sc.get(0, c1.rows() * n1), ix(c1.rows()), ix(n1));
    dcols1.noalias() = as_matrix(ps.p[0], kConv1Filters).transpose() * dz1;
    col2im(c1, nb, dcols1.data(), Planes{c1.in_plane(), sample}, ps.out.input_grad.ptr() + first * sample);
  }
}

inline LossGrad run(const ArchSpec& arch, const ParamSet& params, const Tensor& x, std::span<const int> labels,
                    GradRequest req, bool need_loss, double* logits_out = nullptr) {
  check_input(arch, x);
  check_params(arch, params);
  const std::size_t batch = x.dim(0);
  if (need_loss) {
    if (labels.size() != batch) {
      throw std::invalid_argument("got " + std::to_string(labels.size()) + " labels for a batch of " +
                                  std::to_string(batch));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= arch.num_classes) {
        throw std::out_of_range("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                                " outside [0, " + std::to_string(arch.num_classes) + ")");
      }
    }
  } else {
    labels = {};
    req = {};
  }
  LossGrad out;
  out.predicted.resize(batch);
  if (need_loss) out.sample_loss.resize(batch);
  if (req.params) out.param_grad = zeros_like(params);
  if (req.input) out.input_grad = Tensor(x.shape());
  Pass ps{arch, params, x, labels, req, out, logits_out};
  for (std::size_t first = 0; first < batch; first += kChunk) {
    const std::size_t nb = std::min(kChunk, batch - first);
    if (arch.kind == ArchKind::mlp_small) {
      mlp_chunk(ps, first, nb);
    } else {
      cnn_chunk(ps, first, nb);
    }
  }
  if (need_loss) {
    double total = 0.0;
    for (double l : out.sample_loss) total += l;
    out.loss = total / static_cast<double>(batch);
  }
  return out;
}

}  // namespace detail

/// Logits of shape [B, num_classes].
inline Tensor forward(const ArchSpec& arch, const ParamSet& params, const Tensor& x) {
  // Column-major K x B is row-major [B, K].
  Tensor logits({x.dim(0), arch.num_classes});
  detail::run(arch, params, x, {}, {}, false, logits.ptr());
  return logits;
}

/// Mean cross-entropy with the requested exact gradients.
inline LossGrad loss_and_grads(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                               std::span<const int> labels, GradRequest req) {
  return detail::run(arch, params, x, labels, req, true);
}

inline LossGrad loss_and_grads(const ArchSpec& arch, const ParamSet& params, const Tensor& x,
                               std::span<const int> labels, bool want_param_grad, bool want_input_grad) {
  return loss_and_grads(arch, params, x, labels, GradRequest{want_param_grad, want_input_grad});
}

}  // namespace zg
