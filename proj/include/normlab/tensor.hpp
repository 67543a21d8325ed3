#pragma once

#include <cstddef>
#include <vector>

#include "normlab/common.hpp"
#include "normlab/errors.hpp"
#include "normlab/rng.hpp"

namespace normlab {

struct Dims4 {
  int b = 0, c = 0, h = 0, w = 0;
  bool operator==(const Dims4&) const = default;
  std::size_t count() const {
    return static_cast<std::size_t>(b) * static_cast<std::size_t>(c) *
           static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
};

/// Dense rank-4 feature map in row-major (batch, channel, height, width)
/// layout. Operations return new tensors; a constructed tensor is never
/// mutated through the public surface except via data().
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(int b, int c, int h, int w, real value = 0) : dims_{b, c, h, w} {
    if (b < 0 || c < 0 || h < 0 || w < 0)
      throw InvalidShape("Tensor4: negative extent");
    data_.assign(dims_.count(), value);
  }
  explicit Tensor4(Dims4 d, real value = 0) : Tensor4(d.b, d.c, d.h, d.w, value) {}

  static Tensor4 randn(Dims4 d, Rng& rng, double stddev = 1.0) {
    Tensor4 t(d);
    for (auto& v : t.data_) v = static_cast<real>(rng.normal() * stddev);
    return t;
  }

  const Dims4& dims() const { return dims_; }
  int batch() const { return dims_.b; }
  int channels() const { return dims_.c; }
  int height() const { return dims_.h; }
  int width() const { return dims_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(int b, int c, int h, int w) const {
    return ((static_cast<std::size_t>(b) * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  real& at(int b, int c, int h, int w) { return data_[index(b, c, h, w)]; }
  real at(int b, int c, int h, int w) const { return data_[index(b, c, h, w)]; }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::vector<real>& raw() { return data_; }
  const std::vector<real>& raw() const { return data_; }

  bool same_shape(const Tensor4& other) const { return dims_ == other.dims_; }
  bool all_finite() const;

 private:
  Dims4 dims_{};
  std::vector<real> data_;
};

struct AxisSet {
  bool b = false, c = false, h = false, w = false;
  bool any() const { return b || c || h || w; }
  static AxisSet none() { return {}; }
  static AxisSet batch_spatial() { return {true, false, true, true}; }       // per-channel stats
  static AxisSet spatial() { return {false, false, true, true}; }            // per-(sample,channel)
  static AxisSet all() { return {true, true, true, true}; }
};

struct Moments {
  // Reduced axes collapse to extent 1, so mean/var broadcast back naturally.
  Tensor4 mean;
  Tensor4 var;  // population variance (divide by N)
};

/// Mean and population variance over the given axes, one value per remaining
/// index combination. Deterministic: fixed (b,c,h,w) accumulation order,
/// double accumulators.
Moments reduce_stats(const Tensor4& x, AxisSet axes);

/// Read-only grouped-channel view: logical shape (B, G, C/G, H, W) over the
/// same storage. Element (b, g, k, h, w) aliases (b, g*(C/G)+k, h, w).
class GroupView {
 public:
  GroupView(const Tensor4& base, int groups);

  int batch() const { return base_->batch(); }
  int groups() const { return groups_; }
  int group_channels() const { return base_->channels() / groups_; }
  int height() const { return base_->height(); }
  int width() const { return base_->width(); }

  real at(int b, int g, int k, int h, int w) const {
    return base_->at(b, g * group_channels() + k, h, w);
  }
  const Tensor4& base() const { return *base_; }

  /// Inverse reshape: materializes the (B, C, H, W) tensor the view aliases.
  Tensor4 ungroup() const;

 private:
  const Tensor4* base_;
  int groups_;
};

inline GroupView group_reshape(const Tensor4& x, int groups) {
  return GroupView(x, groups);
}

enum class EwOp { add, sub, mul, div };

/// Pointwise arithmetic. `y` must match x's shape exactly or be a
/// per-channel vector of shape (1, C, 1, 1), broadcast over batch and space.
Tensor4 elementwise(const Tensor4& x, const Tensor4& y, EwOp op);
Tensor4 elementwise(const Tensor4& x, real y, EwOp op);

}  // namespace normlab
