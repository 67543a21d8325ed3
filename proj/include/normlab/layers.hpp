#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "normlab/tensor.hpp"

namespace normlab {

enum class Mode { train, eval };

/// One trainable buffer: value, gradient, and the optimizer's momentum slot.
struct Param {
  std::vector<real> value;
  std::vector<real> grad;
  std::vector<real> momentum;  // sized lazily on first momentum step

  void resize(std::size_t n) {
    value.assign(n, 0);
    grad.assign(n, 0);
  }
  std::size_t size() const { return value.size(); }
  void zero_grad() { grad.assign(grad.size(), 0); }
};

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;      // in [0, 1)
  double weight_decay = 0.0;  // decoupled L2: g + wd * w
};

/// w <- w - lr * step, step = momentum-buffered (g + wd * w).
void sgd_step(const std::vector<Param*>& params, const SgdConfig& cfg);

void zero_grads(const std::vector<Param*>& params);

// --------------------------------------------------------------------------

/// 2D cross-correlation with zero padding. Weight layout (out_ch, in_ch, k, k),
/// which is exactly the (rows = out_ch, cols = fan-in) matrix the GEMM and
/// weight standardization operate on.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int ksize, int stride = 1, int pad = -1,
         bool with_bias = false, bool standardized = false);

  void init_kaiming(Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 backward(const Tensor4& grad_out);
  void collect_params(std::vector<Param*>& out);

  Dims4 output_dims(const Dims4& in) const;
  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  bool standardized() const { return ws_; }

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  /// Weight as used by forward: standardized when enabled, raw otherwise.
  Tensor4 effective_weight();

 private:
  int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  bool has_bias_ = false, ws_ = false;
  Param weight_, bias_;

  // forward cache
  Tensor4 x_;
  std::vector<real> w_eff_;
  std::vector<real> ws_centered_;
  std::vector<real> ws_inv_norm_;

  const real* effective_weight_data();
};

class Relu {
 public:
  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 backward(const Tensor4& grad_out) const;
  /// Which elements were active in the last forward (x > 0).
  const std::vector<std::uint8_t>& active_mask() const { return active_; }

 private:
  std::vector<std::uint8_t> active_;  // x > 0; gradient at exactly 0 is 0
  Dims4 dims_;
};

/// 2x2 mean pooling with stride 2; requires even spatial extents.
class AvgPool2 {
 public:
  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 backward(const Tensor4& grad_out) const;

 private:
  Dims4 in_dims_;
};

/// Spatial mean per (batch, channel); output shape (B, C, 1, 1).
class GlobalAvgPool {
 public:
  Tensor4 forward(const Tensor4& x, Mode mode);
  Tensor4 backward(const Tensor4& grad_out) const;

 private:
  Dims4 in_dims_;
};

/// Affine map y = x W^T + b over flattened (C*H*W) features.
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, bool with_bias = true);

  void init_kaiming(Rng& rng);

  Tensor4 forward(const Tensor4& x, Mode mode);  // output (B, K, 1, 1)
  Tensor4 backward(const Tensor4& grad_out);
  void collect_params(std::vector<Param*>& out);

  int in_features() const { return in_f_; }
  int out_features() const { return out_f_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }

 private:
  int in_f_ = 0, out_f_ = 0;
  bool has_bias_ = true;
  Param weight_, bias_;
  Tensor4 x_;
};

struct SoftmaxXentResult {
  double loss = 0;
  Tensor4 dlogits;
};

/// Mean cross-entropy over the batch with log-sum-exp stabilization.
/// dlogits = (softmax - onehot) / B.
SoftmaxXentResult softmax_xent(const Tensor4& logits,
                               const std::vector<int>& labels);

}  // namespace normlab
