#pragma once

#include <memory>

#include "normlab/layers.hpp"
#include "normlab/norm.hpp"
#include "normlab/observer.hpp"

namespace normlab {

/// Post-activation basic block: conv3x3(s) - norm - relu - conv3x3 - norm,
/// added to the (possibly projected) skip path, then relu. The normalizer
/// kind is pluggable; a 1x1 projection conv + norm appears when channel
/// count or stride changes.
class ResidualBlock {
 public:
  ResidualBlock(int in_ch, int out_ch, int stride, const NormalizerSpec& norm,
                bool ws, Rng& init_rng, Rng& fixed_rng, int& next_conv_site,
                int& next_norm_site);

  ResidualBlock(const ResidualBlock& other);
  ResidualBlock& operator=(const ResidualBlock& other);
  ResidualBlock(ResidualBlock&&) noexcept = default;
  ResidualBlock& operator=(ResidualBlock&&) noexcept = default;
  ~ResidualBlock() = default;

  Tensor4 forward(const Tensor4& x, Mode mode, ForwardObserver* obs);
  Tensor4 backward(const Tensor4& grad_out);
  void collect_params(std::vector<Param*>& out);
  void set_update_rate(double r);
  void append_site_channels(std::vector<int>& conv, std::vector<int>& norm) const;
  void save_state(std::ostream& os) const;
  void load_state(std::istream& is);

  bool has_projection() const { return static_cast<bool>(proj_); }
  Conv2d& conv1() { return conv1_; }
  Conv2d& conv2() { return conv2_; }
  Normalizer& norm1() { return *n1_; }
  Normalizer& norm2() { return *n2_; }

  /// Concatenated ReLU activity masks of the last forward. Two inputs on the
  /// same differentiable branch produce equal signatures; finite differences
  /// are only valid between such inputs.
  std::vector<std::uint8_t> branch_signature() const {
    std::vector<std::uint8_t> sig(relu1_.active_mask());
    sig.insert(sig.end(), relu2_.active_mask().begin(),
               relu2_.active_mask().end());
    return sig;
  }

 private:
  Conv2d conv1_, conv2_;
  std::unique_ptr<Normalizer> n1_, n2_;
  std::unique_ptr<Conv2d> proj_;
  std::unique_ptr<Normalizer> nproj_;
  Relu relu1_, relu2_;
  int conv_sites_[3] = {-1, -1, -1};
  int norm_sites_[3] = {-1, -1, -1};
  bool skip_identity_ = true;
};

}  // namespace normlab
