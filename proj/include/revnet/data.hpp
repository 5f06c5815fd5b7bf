#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "revnet/tensor.hpp"

namespace revnet {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Augment { none, crop_flip };

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;
  std::vector<Index> labels;
};

/// Two (or k) Gaussian class-conditional image blobs with a controllable
/// margin; every sample is generated on demand from (seed, index), so the
/// dataset is hermetic and reproducible.
struct SyntheticSpec {
  Index count = 2048;
  Index classes = 2;
  Index channels = 3;
  Index height = 8;
  Index width = 8;
  double margin = 1.0;
  double noise = 0.25;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0) {
  return splitmix64(seed ^ splitmix64(a ^ splitmix64(b)));
}

}  // namespace detail

inline constexpr Index kCifarPixels = 3072;  // 3 x 32 x 32, channel-major
inline constexpr Index kCifarRecordBytes = kCifarPixels + 1;

/// In-memory image dataset: either a seeded synthetic generator or CIFAR-10
/// records loaded from the standard binary layout (1 label byte + 3072
/// channel-major pixel bytes per record).
class Dataset {
 public:
  static Dataset synthetic(const SyntheticSpec& spec) {
    Dataset d;
    d.synth_ = spec;
    d.classes_ = spec.classes;
    d.channels_ = spec.channels;
    d.height_ = spec.height;
    d.width_ = spec.width;
    d.count_ = spec.count;
    return d;
  }

  /// Loads one CIFAR-10 binary file. Pixels are scaled to [0, 1] and the
  /// per-dataset mean image is subtracted when batches are materialized.
  static Dataset cifar10(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cifar10: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    const std::size_t whole = bytes.size() / kCifarRecordBytes;
    if (whole * kCifarRecordBytes != bytes.size())
      throw IoError("cifar10: truncated record at byte offset " +
                    std::to_string(whole * kCifarRecordBytes) + " in '" +
                    path + "' (file size " + std::to_string(bytes.size()) +
                    " is not a multiple of " +
                    std::to_string(kCifarRecordBytes) + ")");
    if (whole == 0) throw IoError("cifar10: '" + path + "' holds no records");

    Dataset d;
    d.classes_ = 10;
    d.channels_ = 3;
    d.height_ = 32;
    d.width_ = 32;
    d.count_ = static_cast<Index>(whole);
    d.labels_.resize(whole);
    d.pixels_.resize(whole * kCifarPixels);
    for (std::size_t r = 0; r < whole; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kCifarRecordBytes;
      if (rec[0] > 9)
        throw IoError("cifar10: label " + std::to_string(rec[0]) +
                      " out of range in record " + std::to_string(r));
      d.labels_[r] = rec[0];
      std::copy_n(rec + 1, kCifarPixels, d.pixels_.data() + r * kCifarPixels);
    }
    d.mean_.assign(kCifarPixels, 0.0);
    for (std::size_t r = 0; r < whole; ++r)
      for (Index i = 0; i < kCifarPixels; ++i)
        d.mean_[static_cast<std::size_t>(i)] +=
            d.pixels_[r * kCifarPixels + static_cast<std::size_t>(i)] /
            255.0;
    for (double& m : d.mean_) m /= static_cast<double>(whole);
    return d;
  }

  Index size() const { return count_; }
  Index classes() const { return classes_; }
  Index channels() const { return channels_; }
  Index height() const { return height_; }
  Index width() const { return width_; }
  bool is_synthetic() const { return synth_.has_value(); }

  /// Raw stored label/pixel access (cifar datasets).
  const std::vector<std::uint8_t>& raw_labels() const { return labels_; }
  const std::vector<std::uint8_t>& raw_pixels() const { return pixels_; }

  /// Materializes a batch. Augmentation (4-pixel zero pad, random crop,
  /// random horizontal flip) draws from `aug_rng` and belongs to training
  /// only; evaluation passes must use Augment::none.
  template <typename Scalar>
  Batch<Scalar> make_batch(const std::vector<Index>& indices, Augment aug,
                           Rng* aug_rng = nullptr) const {
    Batch<Scalar> batch;
    const Index n = static_cast<Index>(indices.size());
    batch.images = Tensor<Scalar>(n, channels_, height_, width_);
    batch.labels.resize(indices.size());
    Tensor<double> sample(1, channels_, height_, width_);
    for (Index b = 0; b < n; ++b) {
      const Index idx = indices[static_cast<std::size_t>(b)];
      require(idx >= 0 && idx < count_,
              "make_batch: index " + std::to_string(idx) + " out of range");
      batch.labels[static_cast<std::size_t>(b)] = fill_sample(idx, sample);
      if (aug == Augment::crop_flip) {
        require(aug_rng != nullptr, "make_batch: augmentation needs an rng");
        augment_crop_flip(sample, *aug_rng);
      }
      for (Index i = 0; i < sample.numel(); ++i)
        batch.images[b * sample.numel() + i] = static_cast<Scalar>(sample[i]);
    }
    return batch;
  }

 private:
  Index fill_sample(Index idx, Tensor<double>& out) const {
    if (synth_.has_value()) {
      const SyntheticSpec& s = *synth_;
      const Index label = idx % s.classes;
      Rng pattern_rng(detail::mix_seed(s.seed, 0xc1a55,
                                       static_cast<std::uint64_t>(label)));
      Rng noise_rng(detail::mix_seed(s.seed, 0xda7a,
                                     static_cast<std::uint64_t>(idx)));
      for (Index i = 0; i < out.numel(); ++i)
        out[i] = s.margin * pattern_rng.normal() + s.noise * noise_rng.normal();
      return label;
    }
    const std::size_t base =
        static_cast<std::size_t>(idx) * static_cast<std::size_t>(kCifarPixels);
    for (Index i = 0; i < out.numel(); ++i)
      out[i] = pixels_[base + static_cast<std::size_t>(i)] / 255.0 -
               mean_[static_cast<std::size_t>(i)];
    return labels_[static_cast<std::size_t>(idx)];
  }

  /// 4-pixel zero pad, random crop back to the original size, then a fair
  /// coin for horizontal flip.
  void augment_crop_flip(Tensor<double>& img, Rng& rng) const {
    const Shape& s = img.shape();
    const Index pad = 4;
    const Index dy = static_cast<Index>(rng.raw() % (2 * pad + 1)) - pad;
    const Index dx = static_cast<Index>(rng.raw() % (2 * pad + 1)) - pad;
    const bool flip = (rng.raw() & 1) != 0;
    Tensor<double> out(s);
    for (Index c = 0; c < s.c; ++c)
      for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x) {
          const Index sy = y + dy;
          const Index sx0 = x + dx;
          const Index sx = flip ? s.w - 1 - sx0 : sx0;
          double v = 0.0;
          if (sy >= 0 && sy < s.h && sx0 >= 0 && sx0 < s.w)
            v = img(0, c, sy, sx);
          out(0, c, y, x) = v;
        }
    img = std::move(out);
  }

  std::optional<SyntheticSpec> synth_;
  std::vector<std::uint8_t> labels_;
  std::vector<std::uint8_t> pixels_;
  std::vector<double> mean_;
  Index count_ = 0;
  Index classes_ = 0;
  Index channels_ = 0;
  Index height_ = 0;
  Index width_ = 0;
};

/// Writes records in the CIFAR-10 binary layout (1 label byte + 3072 pixel
/// bytes each); the write/read round trip is bit-exact.
inline void write_cifar10(const std::string& path,
                          const std::vector<std::uint8_t>& labels,
                          const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != labels.size() * static_cast<std::size_t>(kCifarPixels))
    throw IoError("write_cifar10: " + std::to_string(labels.size()) +
                  " labels need " +
                  std::to_string(labels.size() * kCifarPixels) +
                  " pixel bytes, got " + std::to_string(pixels.size()));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_cifar10: cannot open '" + path + "'");
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out.put(static_cast<char>(labels[r]));
    out.write(reinterpret_cast<const char*>(pixels.data() +
                                            r * kCifarPixels),
              kCifarPixels);
  }
  if (!out) throw IoError("write_cifar10: short write to '" + path + "'");
}

}  // namespace revnet
