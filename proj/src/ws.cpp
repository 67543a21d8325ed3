#include "normlab/ws.hpp"

#include <cmath>
#include <string>

namespace normlab {

void standardize_rows(const real* raw, int rows, int row_len, double eps,
                      real* out, real* centered, real* inv_norm) {
  if (row_len < 2)
    throw InvalidShape("standardize_rows: fan-in must be at least 2");
  for (int r = 0; r < rows; ++r) {
    const real* w = raw + static_cast<std::size_t>(r) * row_len;
    real* o = out + static_cast<std::size_t>(r) * row_len;

    acc_t sum = 0.0;
    for (int i = 0; i < row_len; ++i) sum += w[i];
    const acc_t mean = sum / row_len;

    acc_t sq = 0.0;
    for (int i = 0; i < row_len; ++i) {
      const acc_t u = static_cast<acc_t>(w[i]) - mean;
      sq += u * u;
    }
    if (sq < eps)
      throw DegenerateRow("standardize_rows: row " + std::to_string(r) +
                          " has zero norm after centering");

    const acc_t inv = 1.0 / std::sqrt(sq + eps);
    for (int i = 0; i < row_len; ++i) {
      const acc_t u = static_cast<acc_t>(w[i]) - mean;
      o[i] = static_cast<real>(u * inv);
      if (centered)
        centered[static_cast<std::size_t>(r) * row_len + i] = static_cast<real>(u);
    }
    if (inv_norm) inv_norm[r] = static_cast<real>(inv);
  }
}

// With u = w - mean(w), s = 1/inv_norm, what flows back to the raw row is
//   dL/dw = g/s - mean(g)/s - u * (u . g) / s^3.
void standardize_rows_backward(const real* grad_out, const real* centered,
                               const real* inv_norm, int rows, int row_len,
                               real* grad_raw) {
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * row_len;
    const real* g = grad_out + off;
    const real* u = centered + off;
    const acc_t inv = inv_norm[r];

    acc_t gsum = 0.0, ug = 0.0;
    for (int i = 0; i < row_len; ++i) {
      gsum += g[i];
      ug += static_cast<acc_t>(u[i]) * g[i];
    }
    const acc_t gmean = gsum / row_len;
    const acc_t inv3 = inv * inv * inv;
    for (int i = 0; i < row_len; ++i)
      grad_raw[off + i] =
          static_cast<real>((static_cast<acc_t>(g[i]) - gmean) * inv -
                            static_cast<acc_t>(u[i]) * ug * inv3);
  }
}

Tensor4 ws_standardize(const Tensor4& raw_weight, double eps) {
  const Dims4& d = raw_weight.dims();
  const int rows = d.b;             // output channels
  const int row_len = d.c * d.h * d.w;  // flattened fan-in
  Tensor4 out(d);
  standardize_rows(raw_weight.data(), rows, row_len, eps, out.data(), nullptr,
                   nullptr);
  return out;
}

}  // namespace normlab
