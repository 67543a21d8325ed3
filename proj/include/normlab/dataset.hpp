#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// CIFAR-10-shaped image set. Records are kept as raw bytes (one label byte,
/// then 3072 pixel bytes, channel-planar R,G,B, each plane row-major 32x32);
/// batch assembly scales to [0,1], optionally augments (mirror + shift), and
/// standardizes with the configured per-channel statistics.
class Cifar10Set {
 public:
  static constexpr int kImage = 32;
  static constexpr int kChannels = 3;
  static constexpr int kClasses = 10;
  static constexpr int kPixels = kChannels * kImage * kImage;  // 3072
  static constexpr int kRecordBytes = kPixels + 1;             // 3073

  Cifar10Set() = default;
  Cifar10Set(std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels);

  int size() const { return static_cast<int>(labels_.size()); }
  int label(int i) const { return labels_[static_cast<std::size_t>(i)]; }

  /// Per-channel mean/std of the [0,1]-scaled pixels of this set.
  void compute_standardization();
  void set_standardization(const std::array<double, 3>& mean,
                           const std::array<double, 3>& stddev);
  const std::array<double, 3>& channel_mean() const { return mean_; }
  const std::array<double, 3>& channel_std() const { return std_; }

  /// Assembled (N, 3, 32, 32) batch. Augmentation draws (flip, dx, dy) per
  /// image from `rng` in index order; shifting pads 4 black pixels per side
  /// and crops at the drawn offset.
  Tensor4 batch(std::span<const int> indices, bool augment, Rng* rng) const;
  std::vector<int> batch_labels(std::span<const int> indices) const;

  /// Byte-exact record round trip.
  std::array<std::uint8_t, kRecordBytes> serialize_record(int i) const;

 private:
  std::vector<std::uint8_t> pixels_;  // size() * kPixels
  std::vector<std::uint8_t> labels_;
  std::array<double, 3> mean_{0, 0, 0};
  std::array<double, 3> std_{1, 1, 1};
};

struct Cifar10 {
  Cifar10Set train;
  Cifar10Set test;
};

/// Parses one binary file of 3073-byte records. Rejects files that are
/// missing, empty, truncated mid-record, or carry labels outside [0, 10).
Cifar10Set parse_cifar10_file(const std::string& path);

/// Standard layout: data_batch_1..5.bin for training, test_batch.bin for
/// testing. Standardization statistics come from the training split and are
/// applied to both.
Cifar10 load_cifar10(const std::string& dir);

/// Gaussian-blob stand-in with the same record shape. Each class gets a
/// random prototype image; samples mix prototype and pixel noise:
///   pixel = clamp01(0.5 + signal*(proto-0.5) + noise*N(0,1)).
/// signal 0 makes classes indistinguishable; signal near 1 with small noise
/// is linearly separable.
struct SyntheticSpec {
  int classes = 2;
  int per_class_train = 256;
  int per_class_test = 64;
  std::uint64_t seed = 1;
  double signal = 1.0;
  double noise = 0.05;
};

Cifar10 make_synthetic(const SyntheticSpec& spec);

}  // namespace normlab
