#include "normlab/norm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "normlab/serialize.hpp"

namespace normlab {

// ---------------------------------------------------------------- Affine

Affine::Affine(int channels, int pairs) : channels_(channels), pairs_(pairs) {
  if (pairs < 1 || channels % pairs != 0)
    throw InvalidGrouping("Affine: pair count must divide channel count");
  gamma_.resize(static_cast<std::size_t>(pairs));
  beta_.resize(static_cast<std::size_t>(pairs));
  std::fill(gamma_.value.begin(), gamma_.value.end(), real(1));
}

Tensor4 Affine::forward(const Tensor4& y) {
  const Dims4& d = y.dims();
  if (d.c != channels_)
    throw InvalidShape("Affine: channel count mismatch");
  y_ = y;
  const int span = channels_ / pairs_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  Tensor4 z(d);
  std::size_t i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const int p = c / span;
      const real g = gamma_.value[p], bt = beta_.value[p];
      for (std::size_t s = 0; s < hw; ++s, ++i)
        z.data()[i] = g * y.data()[i] + bt;
    }
  return z;
}

Tensor4 Affine::backward(const Tensor4& grad_out) {
  const Dims4& d = y_.dims();
  if (!(grad_out.dims() == d))
    throw InvalidShape("Affine::backward: gradient shape mismatch");
  const int span = channels_ / pairs_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;

  std::vector<acc_t> dg(static_cast<std::size_t>(pairs_), 0.0);
  std::vector<acc_t> db(static_cast<std::size_t>(pairs_), 0.0);
  Tensor4 dy(d);
  std::size_t i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const int p = c / span;
      const real g = gamma_.value[p];
      acc_t sg = 0.0, sb = 0.0;
      for (std::size_t s = 0; s < hw; ++s, ++i) {
        const real go = grad_out.data()[i];
        sg += static_cast<acc_t>(go) * y_.data()[i];
        sb += go;
        dy.data()[i] = g * go;
      }
      dg[p] += sg;
      db[p] += sb;
    }
  for (int p = 0; p < pairs_; ++p) {
    gamma_.grad[p] = static_cast<real>(dg[p]);
    beta_.grad[p] = static_cast<real>(db[p]);
  }
  return dy;
}

void Affine::collect_params(std::vector<Param*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      affine_(channels, channels),
      running_mean_(static_cast<std::size_t>(channels), 0),
      running_var_(static_cast<std::size_t>(channels), 1) {
  if (eps <= 0) throw InvalidInput("BatchNorm: eps must be positive");
}

Tensor4 BatchNorm::forward(const Tensor4& x, Mode mode) {
  const Dims4& d = x.dims();
  if (d.c != channels_) throw InvalidShape("BatchNorm: channel count mismatch");
  if (x.empty()) throw InvalidShape("BatchNorm: empty tensor");
  mode_ = mode;
  in_dims_ = d;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
  xhat_ = Tensor4(d);

  std::vector<acc_t> mean(static_cast<std::size_t>(channels_), 0.0);
  std::vector<acc_t> var(static_cast<std::size_t>(channels_), 0.0);

  if (mode == Mode::train) {
    // Batch statistics need a real batch: a single sample (or a single
    // element) has no meaningful cross-sample variance.
    if (d.b < 2 || slice < 2)
      throw DegenerateBatch("BatchNorm: training forward needs at least 2 samples per channel");
    for (int c = 0; c < channels_; ++c) {
      acc_t s = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const real* p = &x.raw()[x.index(b, c, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean[c] = s / static_cast<acc_t>(slice);
    }
    for (int c = 0; c < channels_; ++c) {
      acc_t s = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const real* p = &x.raw()[x.index(b, c, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) {
          const acc_t dv = static_cast<acc_t>(p[i]) - mean[c];
          s += dv * dv;
        }
      }
      var[c] = s / static_cast<acc_t>(slice);
    }
    for (int c = 0; c < channels_; ++c) {
      running_mean_[c] = static_cast<real>((1.0 - momentum_) * running_mean_[c] +
                                           momentum_ * mean[c]);
      running_var_[c] = static_cast<real>((1.0 - momentum_) * running_var_[c] +
                                          momentum_ * var[c]);
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean[c] = running_mean_[c];
      var[c] = running_var_[c];
    }
  }

  for (int c = 0; c < channels_; ++c)
    inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < channels_; ++c) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      real* q = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      const acc_t mu = mean[c], is = inv_std_[c];
      for (std::size_t i = 0; i < hw; ++i)
        q[i] = static_cast<real>((static_cast<acc_t>(p[i]) - mu) * is);
    }
  return affine_.forward(xhat_);
}

Tensor4 BatchNorm::backward(const Tensor4& grad_out) {
  const Tensor4 dy = affine_.backward(grad_out);
  const Dims4& d = in_dims_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  Tensor4 dx(d);

  if (mode_ == Mode::eval) {
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < channels_; ++c) {
        const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
        real* o = &dx.raw()[dx.index(b, c, 0, 0)];
        const acc_t is = inv_std_[c];
        for (std::size_t i = 0; i < hw; ++i)
          o[i] = static_cast<real>(g[i] * is);
      }
    return dx;
  }

  // dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat)), means over the
  // per-channel slice; this is the gradient through the batch statistics.
  for (int c = 0; c < channels_; ++c) {
    acc_t s1 = 0.0, s2 = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
      const real* xh = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) {
        s1 += g[i];
        s2 += static_cast<acc_t>(g[i]) * xh[i];
      }
    }
    const acc_t m1 = s1 / static_cast<acc_t>(slice);
    const acc_t m2 = s2 / static_cast<acc_t>(slice);
    const acc_t is = inv_std_[c];
    for (int b = 0; b < d.b; ++b) {
      const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
      const real* xh = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      real* o = &dx.raw()[dx.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i)
        o[i] = static_cast<real>(is * (static_cast<acc_t>(g[i]) - m1 -
                                       static_cast<acc_t>(xh[i]) * m2));
    }
  }
  return dx;
}

void BatchNorm::collect_params(std::vector<Param*>& out) {
  affine_.collect_params(out);
}

void BatchNorm::save_state(std::ostream& os) const {
  write_vec(os, running_mean_);
  write_vec(os, running_var_);
}

void BatchNorm::load_state(std::istream& is) {
  read_vec(is, running_mean_);
  read_vec(is, running_var_);
}

// ----------------------------------------------------------- ChannelNorm

ChannelNorm::ChannelNorm(int channels, int groups, double eps,
                         AffineGranularity granularity)
    : channels_(channels),
      groups_(groups),
      eps_(eps),
      affine_(channels,
              granularity == AffineGranularity::per_channel ? channels : groups) {
  if (groups < 1 || channels % groups != 0)
    throw InvalidGrouping("ChannelNorm: " + std::to_string(groups) +
                          " groups do not divide " + std::to_string(channels) +
                          " channels");
  if (eps <= 0) throw InvalidInput("ChannelNorm: eps must be positive");
}

Tensor4 ChannelNorm::forward(const Tensor4& x, Mode) {
  const Dims4& d = x.dims();
  if (d.c != channels_) throw InvalidShape("ChannelNorm: channel count mismatch");
  if (x.empty()) throw InvalidShape("ChannelNorm: empty tensor");
  in_dims_ = d;
  const int cg = channels_ / groups_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(cg) * hw;
  if (slice < 2)
    throw DegenerateGroup("ChannelNorm: group slice has fewer than 2 elements");

  xhat_ = Tensor4(d);
  inv_std_.assign(static_cast<std::size_t>(d.b) * groups_, 0.0);

  for (int b = 0; b < d.b; ++b)
    for (int g = 0; g < groups_; ++g) {
      acc_t s = 0.0;
      for (int k = 0; k < cg; ++k) {
        const real* p = &x.raw()[x.index(b, g * cg + k, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const acc_t mu = s / static_cast<acc_t>(slice);
      acc_t sq = 0.0;
      for (int k = 0; k < cg; ++k) {
        const real* p = &x.raw()[x.index(b, g * cg + k, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) {
          const acc_t dv = static_cast<acc_t>(p[i]) - mu;
          sq += dv * dv;
        }
      }
      const acc_t is = 1.0 / std::sqrt(sq / static_cast<acc_t>(slice) + eps_);
      inv_std_[static_cast<std::size_t>(b) * groups_ + g] = is;
      for (int k = 0; k < cg; ++k) {
        const real* p = &x.raw()[x.index(b, g * cg + k, 0, 0)];
        real* q = &xhat_.raw()[xhat_.index(b, g * cg + k, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i)
          q[i] = static_cast<real>((static_cast<acc_t>(p[i]) - mu) * is);
      }
    }
  return affine_.forward(xhat_);
}

Tensor4 ChannelNorm::backward(const Tensor4& grad_out) {
  const Tensor4 dy = affine_.backward(grad_out);
  const Dims4& d = in_dims_;
  const int cg = channels_ / groups_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(cg) * hw;
  Tensor4 dx(d);

  for (int b = 0; b < d.b; ++b)
    for (int g = 0; g < groups_; ++g) {
      acc_t s1 = 0.0, s2 = 0.0;
      for (int k = 0; k < cg; ++k) {
        const real* gp = &dy.raw()[dy.index(b, g * cg + k, 0, 0)];
        const real* xh = &xhat_.raw()[xhat_.index(b, g * cg + k, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) {
          s1 += gp[i];
          s2 += static_cast<acc_t>(gp[i]) * xh[i];
        }
      }
      const acc_t m1 = s1 / static_cast<acc_t>(slice);
      const acc_t m2 = s2 / static_cast<acc_t>(slice);
      const acc_t is = inv_std_[static_cast<std::size_t>(b) * groups_ + g];
      for (int k = 0; k < cg; ++k) {
        const real* gp = &dy.raw()[dy.index(b, g * cg + k, 0, 0)];
        const real* xh = &xhat_.raw()[xhat_.index(b, g * cg + k, 0, 0)];
        real* o = &dx.raw()[dx.index(b, g * cg + k, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i)
          o[i] = static_cast<real>(is * (static_cast<acc_t>(gp[i]) - m1 -
                                         static_cast<acc_t>(xh[i]) * m2));
      }
    }
  return dx;
}

void ChannelNorm::collect_params(std::vector<Param*>& out) {
  affine_.collect_params(out);
}

// --------------------------------------------------------- FixedStatNorm

FixedStatNorm::FixedStatNorm(int channels, std::vector<real> target_mean,
                             std::vector<real> target_std, double eps,
                             double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      target_mean_(std::move(target_mean)),
      target_std_(std::move(target_std)),
      affine_(channels, channels),
      running_mean_(static_cast<std::size_t>(channels), 0),
      running_var_(static_cast<std::size_t>(channels), 1) {
  if (static_cast<int>(target_mean_.size()) != channels ||
      static_cast<int>(target_std_.size()) != channels)
    throw InvalidShape("FixedStatNorm: target vectors must have one entry per channel");
  for (const real s : target_std_)
    if (!(s > 0)) throw InvalidInput("FixedStatNorm: target std must be positive");
}

Tensor4 FixedStatNorm::forward(const Tensor4& x, Mode mode) {
  const Dims4& d = x.dims();
  if (d.c != channels_)
    throw InvalidShape("FixedStatNorm: channel count mismatch");
  if (x.empty()) throw InvalidShape("FixedStatNorm: empty tensor");
  mode_ = mode;
  in_dims_ = d;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
  xhat_ = Tensor4(d);

  std::vector<acc_t> mean(static_cast<std::size_t>(channels_), 0.0);
  std::vector<acc_t> var(static_cast<std::size_t>(channels_), 0.0);
  if (mode == Mode::train) {
    if (d.b < 2 || slice < 2)
      throw DegenerateBatch("FixedStatNorm: training forward needs at least 2 samples per channel");
    for (int c = 0; c < channels_; ++c) {
      acc_t s = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const real* p = &x.raw()[x.index(b, c, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean[c] = s / static_cast<acc_t>(slice);
    }
    for (int c = 0; c < channels_; ++c) {
      acc_t s = 0.0;
      for (int b = 0; b < d.b; ++b) {
        const real* p = &x.raw()[x.index(b, c, 0, 0)];
        for (std::size_t i = 0; i < hw; ++i) {
          const acc_t dv = static_cast<acc_t>(p[i]) - mean[c];
          s += dv * dv;
        }
      }
      var[c] = s / static_cast<acc_t>(slice);
    }
    for (int c = 0; c < channels_; ++c) {
      running_mean_[c] = static_cast<real>((1.0 - momentum_) * running_mean_[c] +
                                           momentum_ * mean[c]);
      running_var_[c] = static_cast<real>((1.0 - momentum_) * running_var_[c] +
                                          momentum_ * var[c]);
    }
  } else {
    for (int c = 0; c < channels_; ++c) {
      mean[c] = running_mean_[c];
      var[c] = running_var_[c];
    }
  }

  for (int c = 0; c < channels_; ++c)
    inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);

  Tensor4 y(d);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < channels_; ++c) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      real* xh = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      real* q = &y.raw()[y.index(b, c, 0, 0)];
      const acc_t mu = mean[c], is = inv_std_[c];
      const real ts = target_std_[c], tm = target_mean_[c];
      for (std::size_t i = 0; i < hw; ++i) {
        const real h = static_cast<real>((static_cast<acc_t>(p[i]) - mu) * is);
        xh[i] = h;
        q[i] = ts * h + tm;
      }
    }
  return affine_.forward(y);
}

Tensor4 FixedStatNorm::backward(const Tensor4& grad_out) {
  const Tensor4 dy = affine_.backward(grad_out);
  const Dims4& d = in_dims_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  Tensor4 dx(d);

  if (mode_ == Mode::eval) {
    for (int b = 0; b < d.b; ++b)
      for (int c = 0; c < channels_; ++c) {
        const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
        real* o = &dx.raw()[dx.index(b, c, 0, 0)];
        const acc_t f = inv_std_[c] * target_std_[c];
        for (std::size_t i = 0; i < hw; ++i)
          o[i] = static_cast<real>(g[i] * f);
      }
    return dx;
  }

  // Same reduction as batch normalization, applied to dy scaled by the
  // frozen target std (the targets themselves get no gradient).
  for (int c = 0; c < channels_; ++c) {
    const acc_t ts = target_std_[c];
    acc_t s1 = 0.0, s2 = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
      const real* xh = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) {
        const acc_t gh = static_cast<acc_t>(g[i]) * ts;
        s1 += gh;
        s2 += gh * xh[i];
      }
    }
    const acc_t m1 = s1 / static_cast<acc_t>(slice);
    const acc_t m2 = s2 / static_cast<acc_t>(slice);
    const acc_t is = inv_std_[c];
    for (int b = 0; b < d.b; ++b) {
      const real* g = &dy.raw()[dy.index(b, c, 0, 0)];
      const real* xh = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      real* o = &dx.raw()[dx.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i)
        o[i] = static_cast<real>(is * (static_cast<acc_t>(g[i]) * ts - m1 -
                                       static_cast<acc_t>(xh[i]) * m2));
    }
  }
  return dx;
}

Tensor4 FixedStatNorm::last_normalized() const {
  // Pre-affine output: target_std * xhat + target_mean.
  Tensor4 y(xhat_.dims());
  const Dims4& d = xhat_.dims();
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  std::size_t i = 0;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real ts = target_std_[c], tm = target_mean_[c];
      for (std::size_t s = 0; s < hw; ++s, ++i)
        y.data()[i] = ts * xhat_.data()[i] + tm;
    }
  return y;
}

void FixedStatNorm::collect_params(std::vector<Param*>& out) {
  affine_.collect_params(out);
}

void FixedStatNorm::save_state(std::ostream& os) const {
  write_vec(os, target_mean_);
  write_vec(os, target_std_);
  write_vec(os, running_mean_);
  write_vec(os, running_var_);
}

void FixedStatNorm::load_state(std::istream& is) {
  read_vec(is, target_mean_);
  read_vec(is, target_std_);
  read_vec(is, running_mean_);
  read_vec(is, running_var_);
}

// -------------------------------------------------------- estimator_update

void estimator_update(const Tensor4& x, EstimatorState& e) {
  const Dims4& d = x.dims();
  if (static_cast<std::size_t>(d.c) != e.mu_hat.size())
    throw InvalidShape("estimator_update: channel count mismatch");
  if (x.empty()) throw InvalidShape("estimator_update: empty tensor");
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  const double r = e.update_rate;

  for (int c = 0; c < d.c; ++c) {
    acc_t s = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
    }
    const acc_t batch_mean = s / static_cast<acc_t>(slice);

    // Second moment around the pre-update estimate.
    const acc_t mu_pre = e.mu_hat[c];
    acc_t sq = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) {
        const acc_t dv = static_cast<acc_t>(p[i]) - mu_pre;
        sq += dv * dv;
      }
    }
    const acc_t batch_var = sq / static_cast<acc_t>(slice);

    e.mu_hat[c] = static_cast<real>(mu_pre + r * (batch_mean - mu_pre));
    acc_t v = static_cast<acc_t>(e.var_hat[c]) +
              r * (batch_var - static_cast<acc_t>(e.var_hat[c]));
    if (v < e.eps_floor) v = e.eps_floor;
    e.var_hat[c] = static_cast<real>(v);
  }
}

// ---------------------------------------------------------------- BcnLarge

BcnLarge::BcnLarge(int channels, int groups, double eps, double momentum)
    : bn_(channels, eps, momentum),
      cn_(channels, groups, eps, ChannelNorm::AffineGranularity::per_group) {}

Tensor4 BcnLarge::forward(const Tensor4& x, Mode mode) {
  return cn_.forward(bn_.forward(x, mode), mode);
}

Tensor4 BcnLarge::backward(const Tensor4& grad_out) {
  return bn_.backward(cn_.backward(grad_out));
}

void BcnLarge::collect_params(std::vector<Param*>& out) {
  bn_.collect_params(out);
  cn_.collect_params(out);
}

void BcnLarge::save_state(std::ostream& os) const { bn_.save_state(os); }
void BcnLarge::load_state(std::istream& is) { bn_.load_state(is); }

// ---------------------------------------------------------------- BcnMicro

BcnMicro::BcnMicro(int channels, int groups, double eps, double update_rate)
    : channels_(channels),
      estimator_(channels),
      batch_affine_(channels, channels),
      cn_(channels, groups, eps, ChannelNorm::AffineGranularity::per_group) {
  estimator_.update_rate = update_rate;
  estimator_.eps_floor = eps;
}

Tensor4 BcnMicro::forward(const Tensor4& x, Mode mode) {
  const Dims4& d = x.dims();
  if (d.c != channels_) throw InvalidShape("BcnMicro: channel count mismatch");
  if (x.empty()) throw InvalidShape("BcnMicro: empty tensor");
  if (mode == Mode::train) estimator_update(x, estimator_);

  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  inv_sigma_.assign(static_cast<std::size_t>(channels_), 0.0);
  for (int c = 0; c < channels_; ++c)
    inv_sigma_[c] = 1.0 / std::sqrt(static_cast<acc_t>(estimator_.var_hat[c]));

  xhat_ = Tensor4(d);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < channels_; ++c) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      real* q = &xhat_.raw()[xhat_.index(b, c, 0, 0)];
      const acc_t mu = estimator_.mu_hat[c], is = inv_sigma_[c];
      for (std::size_t i = 0; i < hw; ++i)
        q[i] = static_cast<real>((static_cast<acc_t>(p[i]) - mu) * is);
    }
  return cn_.forward(batch_affine_.forward(xhat_), mode);
}

Tensor4 BcnMicro::backward(const Tensor4& grad_out) {
  const Tensor4 dxhat = batch_affine_.backward(cn_.backward(grad_out));
  const Dims4& d = dxhat.dims();
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  Tensor4 dx(d);
  // Estimates are constants for the gradient.
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < channels_; ++c) {
      const real* g = &dxhat.raw()[dxhat.index(b, c, 0, 0)];
      real* o = &dx.raw()[dx.index(b, c, 0, 0)];
      const acc_t is = inv_sigma_[c];
      for (std::size_t i = 0; i < hw; ++i)
        o[i] = static_cast<real>(g[i] * is);
    }
  return dx;
}

void BcnMicro::collect_params(std::vector<Param*>& out) {
  batch_affine_.collect_params(out);
  cn_.collect_params(out);
}

void BcnMicro::save_state(std::ostream& os) const {
  write_vec(os, estimator_.mu_hat);
  write_vec(os, estimator_.var_hat);
}

void BcnMicro::load_state(std::istream& is) {
  read_vec(is, estimator_.mu_hat);
  read_vec(is, estimator_.var_hat);
}

// ----------------------------------------------------------------- factory

const char* to_string(NormKind kind) {
  switch (kind) {
    case NormKind::bn: return "bn";
    case NormKind::ln: return "ln";
    case NormKind::gn: return "gn";
    case NormKind::in: return "in";
    case NormKind::fixed: return "fixed";
    case NormKind::bcn_large: return "bcn-large";
    case NormKind::bcn_micro: return "bcn-micro";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& name) {
  if (name == "bn") return NormKind::bn;
  if (name == "ln") return NormKind::ln;
  if (name == "gn") return NormKind::gn;
  if (name == "in") return NormKind::in;
  if (name == "fixed") return NormKind::fixed;
  if (name == "bcn-large") return NormKind::bcn_large;
  if (name == "bcn-micro") return NormKind::bcn_micro;
  throw InvalidConfig("unknown normalizer kind: " + name);
}

int default_group_count(int channels) {
  int g = channels / 4;
  if (g > 32) g = 32;
  if (g < 1) g = 1;
  while (channels % g != 0) --g;  // keep the divisibility contract
  return g;
}

int resolve_groups(const NormalizerSpec& spec, int channels) {
  return spec.groups > 0 ? spec.groups : default_group_count(channels);
}

FixedStats sample_fixed_stats(int channels, double sigma_mu,
                              double sigma_sigma, Rng& rng) {
  if (sigma_mu < 0 || sigma_sigma < 0)
    throw InvalidInput("sample_fixed_stats: spreads must be non-negative");
  FixedStats fs;
  fs.mean.resize(static_cast<std::size_t>(channels));
  fs.stddev.resize(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c)
    fs.mean[c] = static_cast<real>(rng.normal() * sigma_mu);
  for (int c = 0; c < channels; ++c)
    fs.stddev[c] = static_cast<real>(std::exp(rng.normal() * sigma_sigma));
  return fs;
}

std::unique_ptr<Normalizer> make_normalizer(const NormalizerSpec& spec,
                                            int channels, Rng& fixed_rng) {
  switch (spec.kind) {
    case NormKind::bn:
      return std::make_unique<BatchNorm>(channels, spec.eps, spec.momentum);
    case NormKind::ln:
      return std::make_unique<ChannelNorm>(channels, 1, spec.eps);
    case NormKind::gn:
      return std::make_unique<ChannelNorm>(channels, resolve_groups(spec, channels),
                                           spec.eps);
    case NormKind::in:
      return std::make_unique<ChannelNorm>(channels, channels, spec.eps);
    case NormKind::fixed: {
      FixedStats fs = sample_fixed_stats(channels, spec.sigma_mu,
                                         spec.sigma_sigma, fixed_rng);
      return std::make_unique<FixedStatNorm>(channels, std::move(fs.mean),
                                             std::move(fs.stddev), spec.eps,
                                             spec.momentum);
    }
    case NormKind::bcn_large:
      return std::make_unique<BcnLarge>(channels, resolve_groups(spec, channels),
                                        spec.eps, spec.momentum);
    case NormKind::bcn_micro:
      return std::make_unique<BcnMicro>(channels, resolve_groups(spec, channels),
                                        spec.eps, spec.update_rate);
  }
  throw InvalidConfig("make_normalizer: unhandled kind");
}

}  // namespace normlab
