#pragma once

// Test-only reference implementations, kept independent of the library's
// normalization code paths on purpose: plain per-slice loops, nothing shared.

#include <cmath>

#include "normlab/tensor.hpp"

namespace normlab::oracles {

inline Tensor4 naive_layer_norm(const Tensor4& x, double eps) {
  const Dims4& d = x.dims();
  Tensor4 y(d);
  const std::size_t per = static_cast<std::size_t>(d.c) * d.h * d.w;
  for (int b = 0; b < d.b; ++b) {
    const real* p = x.data() + static_cast<std::size_t>(b) * per;
    real* q = y.data() + static_cast<std::size_t>(b) * per;
    double mu = 0;
    for (std::size_t i = 0; i < per; ++i) mu += p[i];
    mu /= static_cast<double>(per);
    double var = 0;
    for (std::size_t i = 0; i < per; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<double>(per);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < per; ++i)
      q[i] = static_cast<real>((p[i] - mu) * inv);
  }
  return y;
}

inline Tensor4 naive_instance_norm(const Tensor4& x, double eps) {
  const Dims4& d = x.dims();
  Tensor4 y(d);
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real* p = &x.raw()[x.index(b, c, 0, 0)];
      real* q = &y.raw()[y.index(b, c, 0, 0)];
      double mu = 0;
      for (std::size_t i = 0; i < hw; ++i) mu += p[i];
      mu /= static_cast<double>(hw);
      double var = 0;
      for (std::size_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= static_cast<double>(hw);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (std::size_t i = 0; i < hw; ++i)
        q[i] = static_cast<real>((p[i] - mu) * inv);
    }
  return y;
}

}  // namespace normlab::oracles
