#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "zg/engine.hpp"
#include "zg/rng.hpp"
#include "zg/tensor.hpp"

namespace zg {

/// Images in [0, 1] as [n, C, H, W] plus integer labels.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  InputShape shape() const { return {inputs.dim(1), inputs.dim(2), inputs.dim(3)}; }
};

struct Batch {
  Tensor x;
  std::vector<int> y;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t pos, const std::filesystem::path& path) {
  if (pos + 4 > buf.size()) {
    throw DataError(path.string() + ": truncated at byte " + std::to_string(buf.size()) + " while reading header field at byte " +
                    std::to_string(pos));
  }
  return (std::uint32_t{buf[pos]} << 24) | (std::uint32_t{buf[pos + 1]} << 16) | (std::uint32_t{buf[pos + 2]} << 8) |
         std::uint32_t{buf[pos + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// IDX (MNIST-style) image + label files; pixels scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  if (const auto m = detail::read_be32(img, 0, images_path); m != kIdxImageMagic) {
    throw DataError(images_path.string() + ": bad magic at byte 0 (got " + to_hex(m) + ", expected 0x00000803)");
  }
  if (const auto m = detail::read_be32(lab, 0, labels_path); m != kIdxLabelMagic) {
    throw DataError(labels_path.string() + ": bad magic at byte 0 (got " + to_hex(m) + ", expected 0x00000801)");
  }
  const std::size_t n = detail::read_be32(img, 4, images_path);
  const std::size_t h = detail::read_be32(img, 8, images_path);
  const std::size_t w = detail::read_be32(img, 12, images_path);
  const std::size_t nl = detail::read_be32(lab, 4, labels_path);
  if (n != nl) {
    throw DataError(images_path.string() + " holds " + std::to_string(n) + " images but " + labels_path.string() + " holds " +
                    std::to_string(nl) + " labels");
  }
  if (n == 0 || h == 0 || w == 0) throw DataError(images_path.string() + ": empty image set");
  if (img.size() < 16 + n * h * w) {
    throw DataError(images_path.string() + ": truncated at byte " + std::to_string(img.size()) + ", expected " +
                    std::to_string(16 + n * h * w));
  }
  if (lab.size() < 8 + n) {
    throw DataError(labels_path.string() + ": truncated at byte " + std::to_string(lab.size()) + ", expected " +
                    std::to_string(8 + n));
  }
  Dataset ds{Tensor({n, 1, h, w}), std::vector<int>(n), 0};
  for (std::size_t i = 0; i < n * h * w; ++i) ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;
  return ds;
}

inline constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

/// CIFAR-10 binary batches: records of 1 label byte + R, G, B 32x32 planes.
inline Dataset load_cifar_bin(const std::vector<std::filesystem::path>& paths, std::size_t num_classes = 10) {
  std::vector<unsigned char> all;
  for (const auto& p : paths) {
    auto buf = detail::read_file(p);
    if (buf.size() % kCifarRecord != 0) {
      throw DataError(p.string() + ": truncated record at byte " + std::to_string(buf.size() - buf.size() % kCifarRecord) +
                      " (file size " + std::to_string(buf.size()) + " is not a multiple of 3073)");
    }
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const std::size_t n = all.size() / kCifarRecord;
  if (n == 0) throw DataError("CIFAR input holds no records");
  Dataset ds{Tensor({n, 3, 32, 32}), std::vector<int>(n), num_classes};
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + i * kCifarRecord;
    if (rec[0] >= num_classes) {
      throw DataError("CIFAR record " + std::to_string(i) + ": label " + std::to_string(rec[0]) + " outside [0, " +
                      std::to_string(num_classes) + ")");
    }
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < kCifarRecord - 1; ++j) ds.inputs[i * (kCifarRecord - 1) + j] = rec[1 + j] / 255.0;
  }
  return ds;
}

/// Synthetic 8x8 bars: class c < 4 is a horizontal 2-pixel bar at rows
/// 2c..2c+1, class c >= 4 a vertical bar at columns 2(c-4)..2(c-4)+1, plus
/// Gaussian pixel noise, clamped to [0, 1]. Labels cycle so classes are balanced.
inline Dataset synth_blobs(std::uint64_t seed, std::size_t n, std::size_t classes, double noise_sigma = 0.15) {
  if (classes == 0 || classes > 8) throw std::invalid_argument("synth_blobs supports 1..8 classes");
  if (n == 0) throw std::invalid_argument("synth_blobs needs n > 0");
  constexpr std::size_t side = 8;
  Rng rng(seed);
  std::vector<int> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i % classes);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Dataset ds{Tensor({n, 1, side, side}), order, classes};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(order[i]);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const bool on = c < 4 ? (y / 2 == c) : (x / 2 == c - 4);
        double v = on ? 1.0 : 0.0;
        if (noise_sigma > 0.0) v += noise_sigma * rng.normal();
        ds.inputs[(i * side + y) * side + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return ds;
}

inline Batch gather(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t d = ds.inputs.row_size();
  const InputShape s = ds.shape();
  Batch b{Tensor({idx.size(), s.channels, s.height, s.width}), std::vector<int>(idx.size())};
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= ds.size()) throw std::out_of_range("sample index " + std::to_string(idx[i]) + " out of range");
    std::copy_n(ds.inputs.ptr() + idx[i] * d, d, b.x.ptr() + i * d);
    b.y[i] = ds.labels[idx[i]];
  }
  return b;
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Batch b = gather(ds, idx);
  return Dataset{std::move(b.x), std::move(b.y), ds.num_classes};
}

inline std::vector<std::size_t> permutation(std::size_t n, StreamKey key) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(key);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

/// Fisher-Yates order cut into batches; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, StreamKey epoch_key) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  const auto order = permutation(n, epoch_key);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  }
  return out;
}

/// Sequential (unshuffled) batches for evaluation.
inline std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size) {
    std::vector<std::size_t> b(std::min(n, i + batch_size) - i);
    std::iota(b.begin(), b.end(), i);
    out.push_back(std::move(b));
  }
  return out;
}

struct Splits {
  Dataset train, val, test;
};

/// Seeded disjoint split: the first val_size of a permutation go to val, the
/// next test_size to test, the rest (optionally capped) to train.
inline Splits split_dataset(const Dataset& ds, std::size_t val_size, std::size_t test_size, std::uint64_t seed,
                            std::size_t train_limit = 0) {
  if (val_size + test_size >= ds.size()) {
    throw std::invalid_argument("split sizes " + std::to_string(val_size) + "+" + std::to_string(test_size) +
                                " leave no training data out of " + std::to_string(ds.size()));
  }
  const auto p = permutation(ds.size(), frozen_key(seed, Purpose::split));
  auto slice = [&](std::size_t from, std::size_t to) {
    return std::vector<std::size_t>(p.begin() + static_cast<std::ptrdiff_t>(from), p.begin() + static_cast<std::ptrdiff_t>(to));
  };
  std::size_t train_end = ds.size();
  if (train_limit > 0) train_end = std::min(train_end, val_size + test_size + train_limit);
  Splits s;
  s.train = subset(ds, slice(val_size + test_size, train_end));
  if (val_size > 0) s.val = subset(ds, slice(0, val_size));
  if (test_size > 0) s.test = subset(ds, slice(val_size, val_size + test_size));
  s.val.num_classes = s.test.num_classes = ds.num_classes;
  return s;
}

}  // namespace zg
