#include "normlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace normlab {

Cifar10Set::Cifar10Set(std::vector<std::uint8_t> pixels,
                       std::vector<std::uint8_t> labels)
    : pixels_(std::move(pixels)), labels_(std::move(labels)) {
  if (pixels_.size() != labels_.size() * static_cast<std::size_t>(kPixels))
    throw CorruptDataset("Cifar10Set: pixel/label count mismatch");
  for (const std::uint8_t l : labels_)
    if (l >= kClasses)
      throw CorruptDataset("Cifar10Set: label " + std::to_string(l) +
                           " outside [0, 10)");
}

void Cifar10Set::compute_standardization() {
  if (size() == 0) throw CorruptDataset("Cifar10Set: empty set");
  const std::size_t plane = static_cast<std::size_t>(kImage) * kImage;
  for (int c = 0; c < kChannels; ++c) {
    acc_t sum = 0.0;
    for (int i = 0; i < size(); ++i) {
      const std::uint8_t* p =
          pixels_.data() + static_cast<std::size_t>(i) * kPixels + c * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += p[j] / 255.0;
    }
    const acc_t n = static_cast<acc_t>(size()) * plane;
    const acc_t mean = sum / n;
    acc_t sq = 0.0;
    for (int i = 0; i < size(); ++i) {
      const std::uint8_t* p =
          pixels_.data() + static_cast<std::size_t>(i) * kPixels + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const acc_t d = p[j] / 255.0 - mean;
        sq += d * d;
      }
    }
    mean_[c] = mean;
    std_[c] = std::max(std::sqrt(sq / n), 1e-8);
  }
}

void Cifar10Set::set_standardization(const std::array<double, 3>& mean,
                                     const std::array<double, 3>& stddev) {
  mean_ = mean;
  std_ = stddev;
}

Tensor4 Cifar10Set::batch(std::span<const int> indices, bool augment,
                          Rng* rng) const {
  const int n = static_cast<int>(indices.size());
  Tensor4 out(n, kChannels, kImage, kImage);
  std::array<double, static_cast<std::size_t>(kPixels)> img{};
  const std::size_t plane = static_cast<std::size_t>(kImage) * kImage;

  for (int s = 0; s < n; ++s) {
    const int idx = indices[s];
    const std::uint8_t* rec =
        pixels_.data() + static_cast<std::size_t>(idx) * kPixels;
    bool flip = false;
    int dy = 4, dx = 4;  // offsets into the 4-pixel padding; (4,4) = centered
    if (augment && rng) {
      flip = rng->coin();
      dy = static_cast<int>(rng->below(9));
      dx = static_cast<int>(rng->below(9));
    }
    for (int c = 0; c < kChannels; ++c)
      for (int y = 0; y < kImage; ++y)
        for (int x = 0; x < kImage; ++x) {
          const int sy = y + dy - 4;
          int sx = x + dx - 4;
          double v = 0.0;  // black padding
          if (sy >= 0 && sy < kImage && sx >= 0 && sx < kImage) {
            if (flip) sx = kImage - 1 - sx;
            v = rec[c * plane + static_cast<std::size_t>(sy) * kImage + sx] / 255.0;
          }
          img[c * plane + static_cast<std::size_t>(y) * kImage + x] = v;
        }
    for (int c = 0; c < kChannels; ++c) {
      const double m = mean_[c], inv = 1.0 / std_[c];
      real* dst = &out.raw()[out.index(s, c, 0, 0)];
      for (std::size_t j = 0; j < plane; ++j)
        dst[j] = static_cast<real>((img[c * plane + j] - m) * inv);
    }
  }
  return out;
}

std::vector<int> Cifar10Set::batch_labels(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (const int i : indices) out.push_back(label(i));
  return out;
}

std::array<std::uint8_t, Cifar10Set::kRecordBytes>
Cifar10Set::serialize_record(int i) const {
  std::array<std::uint8_t, kRecordBytes> rec{};
  rec[0] = labels_[static_cast<std::size_t>(i)];
  std::copy_n(pixels_.data() + static_cast<std::size_t>(i) * kPixels, kPixels,
              rec.data() + 1);
  return rec;
}

Cifar10Set parse_cifar10_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw CorruptDataset("cannot open dataset file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  if (bytes.empty())
    throw CorruptDataset("empty dataset file: " + path);
  if (bytes.size() % Cifar10Set::kRecordBytes != 0)
    throw CorruptDataset("truncated dataset file (size " +
                         std::to_string(bytes.size()) +
                         " is not a multiple of 3073): " + path);
  const std::size_t n = bytes.size() / Cifar10Set::kRecordBytes;
  std::vector<std::uint8_t> pixels(n * Cifar10Set::kPixels);
  std::vector<std::uint8_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * Cifar10Set::kRecordBytes;
    if (rec[0] >= Cifar10Set::kClasses)
      throw CorruptDataset("label " + std::to_string(rec[0]) +
                           " outside [0, 10) in " + path);
    labels[i] = rec[0];
    std::copy_n(rec + 1, Cifar10Set::kPixels,
                pixels.data() + i * Cifar10Set::kPixels);
  }
  return Cifar10Set(std::move(pixels), std::move(labels));
}

Cifar10 load_cifar10(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::uint8_t> pixels, labels;
  for (int i = 1; i <= 5; ++i) {
    const std::string path =
        (fs::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string();
    Cifar10Set part = parse_cifar10_file(path);
    for (int r = 0; r < part.size(); ++r) {
      const auto rec = part.serialize_record(r);
      labels.push_back(rec[0]);
      pixels.insert(pixels.end(), rec.begin() + 1, rec.end());
    }
  }
  Cifar10 data;
  data.train = Cifar10Set(std::move(pixels), std::move(labels));
  data.test =
      parse_cifar10_file((fs::path(dir) / "test_batch.bin").string());
  data.train.compute_standardization();
  data.test.set_standardization(data.train.channel_mean(),
                                data.train.channel_std());
  return data;
}

namespace {

Cifar10Set synthesize_split(const SyntheticSpec& spec, int per_class,
                            std::uint64_t noise_tag) {
  const std::size_t plane =
      static_cast<std::size_t>(Cifar10Set::kImage) * Cifar10Set::kImage;
  // Class prototypes are independent of the split.
  std::vector<std::vector<double>> protos;
  for (int k = 0; k < spec.classes; ++k) {
    Rng proto_rng(derive_seed(spec.seed, 100 + static_cast<std::uint64_t>(k)));
    std::vector<double> p(static_cast<std::size_t>(Cifar10Set::kPixels));
    for (auto& v : p) v = proto_rng.uniform();
    protos.push_back(std::move(p));
  }
  Rng noise_rng(derive_seed(spec.seed, noise_tag));
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;
  pixels.reserve(static_cast<std::size_t>(spec.classes) * per_class *
                 Cifar10Set::kPixels);
  for (int k = 0; k < spec.classes; ++k)
    for (int s = 0; s < per_class; ++s) {
      labels.push_back(static_cast<std::uint8_t>(k));
      for (std::size_t j = 0; j < plane * Cifar10Set::kChannels; ++j) {
        double v = 0.5 + spec.signal * (protos[k][j] - 0.5) +
                   spec.noise * noise_rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  return Cifar10Set(std::move(pixels), std::move(labels));
}

}  // namespace

Cifar10 make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 1 || spec.classes > Cifar10Set::kClasses)
    throw InvalidInput("make_synthetic: classes must be in [1, 10]");
  if (spec.per_class_train < 1 || spec.per_class_test < 1)
    throw InvalidInput("make_synthetic: per-class counts must be positive");
  Cifar10 data;
  data.train = synthesize_split(spec, spec.per_class_train, 200);
  data.test = synthesize_split(spec, spec.per_class_test, 300);
  data.train.compute_standardization();
  data.test.set_standardization(data.train.channel_mean(),
                                data.train.channel_std());
  return data;
}

}  // namespace normlab
