#pragma once

#include "normlab/tensor.hpp"

namespace normlab {

// Row-wise weight standardization over the flattened fan-in: each row is
// centered to zero mean and scaled to unit sum of squares,
//   out = (raw - mean(raw)) / sqrt(sum((raw - mean(raw))^2) + eps).
// `centered` and `inv_norm` (per row), when non-null, capture what the
// backward pass needs. Throws DegenerateRow when a centered row has no norm
// left for the guard to matter against.
void standardize_rows(const real* raw, int rows, int row_len, double eps,
                      real* out, real* centered, real* inv_norm);

// Gradient of standardize_rows with respect to the raw weights.
void standardize_rows_backward(const real* grad_out, const real* centered,
                               const real* inv_norm, int rows, int row_len,
                               real* grad_raw);

/// Standardized copy of a convolution weight tensor (out_ch, in_ch, k, k);
/// one row per output channel. Applied as a reparameterization on every
/// forward pass, so raw weights stay the trainable quantity.
Tensor4 ws_standardize(const Tensor4& raw_weight, double eps = kWsEps);

}  // namespace normlab
