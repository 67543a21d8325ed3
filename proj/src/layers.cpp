#include "normlab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "normlab/gemm.hpp"
#include "normlab/parallel.hpp"
#include "normlab/ws.hpp"

namespace normlab {

void sgd_step(const std::vector<Param*>& params, const SgdConfig& cfg) {
  for (Param* p : params) {
    const std::size_t n = p->size();
    if (cfg.momentum != 0.0 && p->momentum.size() != n)
      p->momentum.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double g = static_cast<double>(p->grad[i]) +
                 cfg.weight_decay * static_cast<double>(p->value[i]);
      if (cfg.momentum != 0.0) {
        p->momentum[i] = static_cast<real>(cfg.momentum * p->momentum[i] + g);
        g = p->momentum[i];
      }
      p->value[i] = static_cast<real>(p->value[i] - cfg.lr * g);
    }
  }
}

void zero_grads(const std::vector<Param*>& params) {
  for (Param* p : params) p->zero_grad();
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad,
               bool with_bias, bool standardized)
    : in_ch_(in_ch),
      out_ch_(out_ch),
      k_(ksize),
      stride_(stride),
      pad_(pad < 0 ? ksize / 2 : pad),
      has_bias_(with_bias),
      ws_(standardized) {
  if (in_ch < 1 || out_ch < 1)
    throw InvalidShape("Conv2d: channel counts must be positive");
  if (ksize < 1 || ksize % 2 == 0)
    throw InvalidShape("Conv2d: kernel size must be odd and positive");
  if (stride < 1) throw InvalidShape("Conv2d: stride must be positive");
  weight_.resize(static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize);
  if (has_bias_) bias_.resize(static_cast<std::size_t>(out_ch));
}

void Conv2d::init_kaiming(Rng& rng) {
  const int fan_in = in_ch_ * k_ * k_;
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& v : weight_.value) v = static_cast<real>(rng.normal() * stddev);
  if (has_bias_) std::fill(bias_.value.begin(), bias_.value.end(), real(0));
}

Dims4 Conv2d::output_dims(const Dims4& in) const {
  if (in.c != in_ch_)
    throw InvalidShape("Conv2d: input has " + std::to_string(in.c) +
                       " channels, layer expects " + std::to_string(in_ch_));
  const int ho = (in.h + 2 * pad_ - k_) / stride_ + 1;
  const int wo = (in.w + 2 * pad_ - k_) / stride_ + 1;
  if (in.h + 2 * pad_ < k_ || in.w + 2 * pad_ < k_ || ho < 1 || wo < 1)
    throw InvalidShape("Conv2d: spatial extents incompatible with kernel/stride/padding");
  return Dims4{in.b, out_ch_, ho, wo};
}

const real* Conv2d::effective_weight_data() {
  if (!ws_) return weight_.value.data();
  const int rows = out_ch_;
  const int row_len = in_ch_ * k_ * k_;
  w_eff_.resize(weight_.size());
  ws_centered_.resize(weight_.size());
  ws_inv_norm_.resize(static_cast<std::size_t>(rows));
  standardize_rows(weight_.value.data(), rows, row_len, kWsEps, w_eff_.data(),
                   ws_centered_.data(), ws_inv_norm_.data());
  return w_eff_.data();
}

Tensor4 Conv2d::effective_weight() {
  Tensor4 t(out_ch_, in_ch_, k_, k_);
  std::memcpy(t.data(), effective_weight_data(), t.size() * sizeof(real));
  return t;
}

namespace {

// Unpack one image into the (fan_in x out_spatial) patch matrix.
void im2col(const Tensor4& x, int b, int k, int stride, int pad, int ho,
            int wo, real* col) {
  const int ci = x.channels(), hi = x.height(), wi = x.width();
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int ic = 0; ic < ci; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        real* row = col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          real* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= hi) {
            std::memset(dst, 0, static_cast<std::size_t>(wo) * sizeof(real));
            continue;
          }
          const real* src = &x.raw()[x.index(b, ic, iy, 0)];
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[ox] = (ix < 0 || ix >= wi) ? real(0) : src[ix];
          }
        }
      }
}

// Scatter-add the patch-matrix gradient back onto one image.
void col2im(const real* col, int k, int stride, int pad, int ho, int wo,
            Tensor4& dx, int b) {
  const int ci = dx.channels(), hi = dx.height(), wi = dx.width();
  const std::size_t n = static_cast<std::size_t>(ho) * wo;
  for (int ic = 0; ic < ci; ++ic)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const real* row =
            col + (static_cast<std::size_t>(ic) * k * k + ky * k + kx) * n;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= hi) continue;
          real* dst = &dx.raw()[dx.index(b, ic, iy, 0)];
          const real* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < wi) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace

Tensor4 Conv2d::forward(const Tensor4& x, Mode) {
  const Dims4 od = output_dims(x.dims());
  x_ = x;
  const real* w = effective_weight_data();

  Tensor4 y(od);
  const int kk = in_ch_ * k_ * k_;
  const std::size_t n = static_cast<std::size_t>(od.h) * od.w;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch_) * n;

  parallel_for(0, od.b, intra_threads(), [&](std::int64_t lo, std::int64_t hi) {
    std::vector<real> col(static_cast<std::size_t>(kk) * n);
    for (std::int64_t b = lo; b < hi; ++b) {
      im2col(x, static_cast<int>(b), k_, stride_, pad_, od.h, od.w, col.data());
      real* yb = y.data() + static_cast<std::size_t>(b) * out_stride;
      gemm(out_ch_, kk, static_cast<int>(n), w, kk, col.data(),
           static_cast<int>(n), yb, static_cast<int>(n), false);
      if (has_bias_)
        for (int o = 0; o < out_ch_; ++o) {
          const real bv = bias_.value[o];
          real* row = yb + static_cast<std::size_t>(o) * n;
          for (std::size_t j = 0; j < n; ++j) row[j] += bv;
        }
    }
  });
  return y;
}

Tensor4 Conv2d::backward(const Tensor4& grad_out) {
  const Dims4 od = output_dims(x_.dims());
  if (!(grad_out.dims() == od))
    throw InvalidShape("Conv2d::backward: gradient shape mismatch");

  const int kk = in_ch_ * k_ * k_;
  const std::size_t n = static_cast<std::size_t>(od.h) * od.w;
  const std::size_t out_stride = static_cast<std::size_t>(out_ch_) * n;
  const real* w = ws_ ? w_eff_.data() : weight_.value.data();

  // W^T once, reused by every image's data gradient.
  std::vector<real> wt(static_cast<std::size_t>(kk) * out_ch_);
  for (int o = 0; o < out_ch_; ++o)
    for (int q = 0; q < kk; ++q)
      wt[static_cast<std::size_t>(q) * out_ch_ + o] =
          w[static_cast<std::size_t>(o) * kk + q];

  Tensor4 dx(x_.dims(), 0);

  // Per-partition weight/bias accumulators, reduced in slot order afterwards
  // so results do not depend on scheduling.
  const int threads = intra_threads();
  const int used = static_cast<int>(
      od.b < threads ? (od.b < 1 ? 1 : od.b) : threads);
  const std::int64_t chunk = (od.b + used - 1) / used;
  std::vector<std::vector<real>> dw_slots(
      static_cast<std::size_t>(used),
      std::vector<real>(static_cast<std::size_t>(out_ch_) * kk, 0));
  std::vector<std::vector<acc_t>> db_slots(
      static_cast<std::size_t>(used),
      std::vector<acc_t>(static_cast<std::size_t>(out_ch_), 0.0));

  parallel_for(0, od.b, threads, [&](std::int64_t lo, std::int64_t hi) {
    const std::size_t slot = static_cast<std::size_t>(lo / chunk);
    std::vector<real>& dw = dw_slots[slot];
    std::vector<acc_t>& db = db_slots[slot];
    std::vector<real> col(static_cast<std::size_t>(kk) * n);
    std::vector<real> dcol(static_cast<std::size_t>(kk) * n);
    for (std::int64_t b = lo; b < hi; ++b) {
      const real* gb = grad_out.data() + static_cast<std::size_t>(b) * out_stride;
      im2col(x_, static_cast<int>(b), k_, stride_, pad_, od.h, od.w, col.data());
      gemm_abt(out_ch_, static_cast<int>(n), kk, gb, static_cast<int>(n),
               col.data(), static_cast<int>(n), dw.data(), kk, true);
      if (has_bias_)
        for (int o = 0; o < out_ch_; ++o) {
          const real* row = gb + static_cast<std::size_t>(o) * n;
          acc_t s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += row[j];
          db[o] += s;
        }
      gemm(kk, out_ch_, static_cast<int>(n), wt.data(), out_ch_, gb,
           static_cast<int>(n), dcol.data(), static_cast<int>(n), false);
      col2im(dcol.data(), k_, stride_, pad_, od.h, od.w, dx, static_cast<int>(b));
    }
  });

  std::vector<real> dw_eff(static_cast<std::size_t>(out_ch_) * kk, 0);
  for (int s = 0; s < used; ++s)
    for (std::size_t i = 0; i < dw_eff.size(); ++i) dw_eff[i] += dw_slots[s][i];

  if (ws_)
    standardize_rows_backward(dw_eff.data(), ws_centered_.data(),
                              ws_inv_norm_.data(), out_ch_, kk,
                              weight_.grad.data());
  else
    weight_.grad = dw_eff;

  if (has_bias_)
    for (int o = 0; o < out_ch_; ++o) {
      acc_t s = 0.0;
      for (int sl = 0; sl < used; ++sl) s += db_slots[sl][o];
      bias_.grad[o] = static_cast<real>(s);
    }
  return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ------------------------------------------------------------------ Relu

Tensor4 Relu::forward(const Tensor4& x, Mode) {
  dims_ = x.dims();
  active_.resize(x.size());
  Tensor4 y(dims_);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x.data()[i] > real(0);
    active_[i] = on;
    y.data()[i] = on ? x.data()[i] : real(0);
  }
  return y;
}

Tensor4 Relu::backward(const Tensor4& grad_out) const {
  if (!(grad_out.dims() == dims_))
    throw InvalidShape("Relu::backward: gradient shape mismatch");
  Tensor4 dx(dims_);
  for (std::size_t i = 0; i < dx.size(); ++i)
    dx.data()[i] = active_[i] ? grad_out.data()[i] : real(0);
  return dx;
}

// -------------------------------------------------------------- AvgPool2

Tensor4 AvgPool2::forward(const Tensor4& x, Mode) {
  const Dims4& d = x.dims();
  if (d.h % 2 != 0 || d.w % 2 != 0)
    throw InvalidShape("AvgPool2: spatial extents must be even");
  in_dims_ = d;
  Tensor4 y(d.b, d.c, d.h / 2, d.w / 2);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c)
      for (int oy = 0; oy < d.h / 2; ++oy)
        for (int ox = 0; ox < d.w / 2; ++ox) {
          const acc_t s = static_cast<acc_t>(x.at(b, c, 2 * oy, 2 * ox)) +
                          x.at(b, c, 2 * oy, 2 * ox + 1) +
                          x.at(b, c, 2 * oy + 1, 2 * ox) +
                          x.at(b, c, 2 * oy + 1, 2 * ox + 1);
          y.at(b, c, oy, ox) = static_cast<real>(s * 0.25);
        }
  return y;
}

Tensor4 AvgPool2::backward(const Tensor4& grad_out) const {
  Tensor4 dx(in_dims_);
  const Dims4& d = in_dims_;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c)
      for (int oy = 0; oy < d.h / 2; ++oy)
        for (int ox = 0; ox < d.w / 2; ++ox) {
          const real g = static_cast<real>(grad_out.at(b, c, oy, ox) * 0.25);
          dx.at(b, c, 2 * oy, 2 * ox) = g;
          dx.at(b, c, 2 * oy, 2 * ox + 1) = g;
          dx.at(b, c, 2 * oy + 1, 2 * ox) = g;
          dx.at(b, c, 2 * oy + 1, 2 * ox + 1) = g;
        }
  return dx;
}

// -------------------------------------------------------- GlobalAvgPool

Tensor4 GlobalAvgPool::forward(const Tensor4& x, Mode) {
  if (x.empty()) throw InvalidShape("GlobalAvgPool: empty tensor");
  in_dims_ = x.dims();
  const Dims4& d = in_dims_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  Tensor4 y(d.b, d.c, 1, 1);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      acc_t s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      y.at(b, c, 0, 0) = static_cast<real>(s / static_cast<acc_t>(hw));
    }
  return y;
}

Tensor4 GlobalAvgPool::backward(const Tensor4& grad_out) const {
  const Dims4& d = in_dims_;
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  Tensor4 dx(d);
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real g =
          static_cast<real>(grad_out.at(b, c, 0, 0) / static_cast<acc_t>(hw));
      real* p = &dx.raw()[dx.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) p[i] = g;
    }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features, bool with_bias)
    : in_f_(in_features), out_f_(out_features), has_bias_(with_bias) {
  if (in_features < 1 || out_features < 1)
    throw InvalidShape("Linear: feature counts must be positive");
  weight_.resize(static_cast<std::size_t>(out_features) * in_features);
  if (has_bias_) bias_.resize(static_cast<std::size_t>(out_features));
}

void Linear::init_kaiming(Rng& rng) {
  const double stddev = std::sqrt(2.0 / in_f_);
  for (auto& v : weight_.value) v = static_cast<real>(rng.normal() * stddev);
  if (has_bias_) std::fill(bias_.value.begin(), bias_.value.end(), real(0));
}

Tensor4 Linear::forward(const Tensor4& x, Mode) {
  const Dims4& d = x.dims();
  if (d.c * d.h * d.w != in_f_)
    throw InvalidShape("Linear: input features " +
                       std::to_string(d.c * d.h * d.w) + ", layer expects " +
                       std::to_string(in_f_));
  x_ = x;
  Tensor4 y(d.b, out_f_, 1, 1);
  gemm_abt(d.b, in_f_, out_f_, x.data(), in_f_, weight_.value.data(), in_f_,
           y.data(), out_f_, false);
  if (has_bias_)
    for (int b = 0; b < d.b; ++b)
      for (int k = 0; k < out_f_; ++k)
        y.data()[static_cast<std::size_t>(b) * out_f_ + k] += bias_.value[k];
  return y;
}

Tensor4 Linear::backward(const Tensor4& grad_out) {
  const int b_n = x_.batch();
  if (!(grad_out.dims() == Dims4{b_n, out_f_, 1, 1}))
    throw InvalidShape("Linear::backward: gradient shape mismatch");

  std::fill(weight_.grad.begin(), weight_.grad.end(), real(0));
  for (int b = 0; b < b_n; ++b) {
    const real* xb = x_.data() + static_cast<std::size_t>(b) * in_f_;
    const real* gb = grad_out.data() + static_cast<std::size_t>(b) * out_f_;
    for (int k = 0; k < out_f_; ++k) {
      const real g = gb[k];
      real* wrow = weight_.grad.data() + static_cast<std::size_t>(k) * in_f_;
      for (int f = 0; f < in_f_; ++f) wrow[f] += g * xb[f];
    }
  }
  if (has_bias_)
    for (int k = 0; k < out_f_; ++k) {
      acc_t s = 0.0;
      for (int b = 0; b < b_n; ++b)
        s += grad_out.data()[static_cast<std::size_t>(b) * out_f_ + k];
      bias_.grad[k] = static_cast<real>(s);
    }

  Tensor4 dx(x_.dims());
  gemm(b_n, out_f_, in_f_, grad_out.data(), out_f_, weight_.value.data(),
       in_f_, dx.data(), in_f_, false);
  return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ----------------------------------------------------------- softmax_xent

SoftmaxXentResult softmax_xent(const Tensor4& logits,
                               const std::vector<int>& labels) {
  const Dims4& d = logits.dims();
  const int classes = d.c * d.h * d.w;
  if (static_cast<int>(labels.size()) != d.b)
    throw InvalidShape("softmax_xent: one label per sample required");
  if (classes < 1) throw InvalidShape("softmax_xent: no classes");
  for (const int l : labels)
    if (l < 0 || l >= classes)
      throw InvalidLabel("softmax_xent: label " + std::to_string(l) +
                         " outside [0, " + std::to_string(classes) + ")");

  SoftmaxXentResult res;
  res.dlogits = Tensor4(d);
  acc_t total = 0.0;
  const acc_t inv_b = 1.0 / d.b;
  for (int b = 0; b < d.b; ++b) {
    const real* lb = logits.data() + static_cast<std::size_t>(b) * classes;
    real* gb = res.dlogits.data() + static_cast<std::size_t>(b) * classes;
    acc_t mx = lb[0];
    for (int k = 1; k < classes; ++k) mx = std::max(mx, static_cast<acc_t>(lb[k]));
    acc_t sum = 0.0;
    for (int k = 0; k < classes; ++k) sum += std::exp(static_cast<acc_t>(lb[k]) - mx);
    const acc_t lse = mx + std::log(sum);
    total += lse - lb[labels[b]];
    for (int k = 0; k < classes; ++k) {
      const acc_t p = std::exp(static_cast<acc_t>(lb[k]) - lse);
      gb[k] = static_cast<real>((p - (k == labels[b] ? 1.0 : 0.0)) * inv_b);
    }
  }
  res.loss = total * inv_b;
  return res;
}

}  // namespace normlab
