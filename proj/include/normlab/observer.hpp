#pragma once

namespace normlab {

class Tensor4;

/// Taps a model exposes during forward. Sites are numbered in forward order,
/// separately for convolutions and normalizers.
struct ForwardObserver {
  virtual ~ForwardObserver() = default;
  /// Raw convolution output, before normalization.
  virtual void on_conv_output(int /*site*/, const Tensor4&) {}
  /// Normalizer output after its affine transform, before ReLU.
  virtual void on_norm_output(int /*site*/, const Tensor4&) {}
  /// Normalized values before the affine transform.
  virtual void on_norm_normalized(int /*site*/, const Tensor4&) {}
};

}  // namespace normlab
