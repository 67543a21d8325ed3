#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "normlab/layers.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Learned scale/shift. One (gamma, beta) pair either per channel or per
/// group of channels (the channel stage of batch-channel normalization keeps
/// its pairs per group).
class Affine {
 public:
  Affine() = default;
  Affine(int channels, int pairs);

  Tensor4 forward(const Tensor4& y);
  Tensor4 backward(const Tensor4& grad_out);
  void collect_params(std::vector<Param*>& out);

  Param& gamma() { return gamma_; }
  Param& beta() { return beta_; }
  int pairs() const { return pairs_; }

 private:
  int channels_ = 0, pairs_ = 0;
  Param gamma_, beta_;
  Tensor4 y_;
};

// --------------------------------------------------------------------------

class Normalizer {
 public:
  virtual ~Normalizer() = default;
  virtual Tensor4 forward(const Tensor4& x, Mode mode) = 0;
  virtual Tensor4 backward(const Tensor4& grad_out) = 0;
  virtual void collect_params(std::vector<Param*>& out) = 0;
  virtual std::unique_ptr<Normalizer> clone() const = 0;
  virtual const char* kind_name() const = 0;
  /// Non-learned state (running statistics, estimates, fixed targets).
  virtual void save_state(std::ostream& os) const = 0;
  virtual void load_state(std::istream& is) = 0;
  /// Micro-batch estimators track the optimizer step size; no-op elsewhere.
  virtual void set_update_rate(double) {}
  /// Normalized values of the most recent forward, before the affine
  /// transform (for composites, before the last stage's affine).
  virtual Tensor4 last_normalized() const = 0;
};

/// Per-channel normalization by batch statistics over {B, H, W}; running
/// mean/variance kept for evaluation mode. Training requires at least two
/// samples in the batch.
class BatchNorm final : public Normalizer {
 public:
  explicit BatchNorm(int channels, double eps = kDefaultEps,
                     double momentum = 0.1);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::unique_ptr<Normalizer> clone() const override {
    return std::make_unique<BatchNorm>(*this);
  }
  const char* kind_name() const override { return "bn"; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;
  Tensor4 last_normalized() const override { return xhat_; }

  Affine& affine() { return affine_; }
  const std::vector<real>& running_mean() const { return running_mean_; }
  const std::vector<real>& running_var() const { return running_var_; }

 private:
  int channels_ = 0;
  double eps_ = kDefaultEps, momentum_ = 0.1;
  Affine affine_;
  std::vector<real> running_mean_, running_var_;

  Mode mode_ = Mode::train;
  Dims4 in_dims_;
  Tensor4 xhat_;
  std::vector<acc_t> inv_std_;
};

/// Per-(sample, group) normalization over {C/G, H, W}. G=1 is layer
/// normalization, G=C instance normalization. Batch-free: evaluation
/// renormalizes each sample the same way training does.
class ChannelNorm final : public Normalizer {
 public:
  enum class AffineGranularity { per_channel, per_group };

  ChannelNorm(int channels, int groups, double eps = kDefaultEps,
              AffineGranularity granularity = AffineGranularity::per_channel);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::unique_ptr<Normalizer> clone() const override {
    return std::make_unique<ChannelNorm>(*this);
  }
  const char* kind_name() const override { return "cn"; }
  void save_state(std::ostream&) const override {}
  void load_state(std::istream&) override {}
  Tensor4 last_normalized() const override { return xhat_; }

  Affine& affine() { return affine_; }
  int groups() const { return groups_; }

 private:
  int channels_ = 0, groups_ = 1;
  double eps_ = kDefaultEps;
  Affine affine_;

  Dims4 in_dims_;
  Tensor4 xhat_;
  std::vector<acc_t> inv_std_;  // per (sample, group)
};

/// Normalizes each channel to a frozen target mean/std instead of (0, 1):
/// y = gamma * (sigma_hat * (x - mu)/sqrt(var + eps) + mu_hat) + beta, with
/// mu/var the current batch statistics. The targets receive no gradient and
/// never change. Evaluation substitutes running statistics, as batch
/// normalization does.
class FixedStatNorm final : public Normalizer {
 public:
  FixedStatNorm(int channels, std::vector<real> target_mean,
                std::vector<real> target_std, double eps = kDefaultEps,
                double momentum = 0.1);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::unique_ptr<Normalizer> clone() const override {
    return std::make_unique<FixedStatNorm>(*this);
  }
  const char* kind_name() const override { return "fixed"; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;
  Tensor4 last_normalized() const override;

  Affine& affine() { return affine_; }
  const std::vector<real>& target_mean() const { return target_mean_; }
  const std::vector<real>& target_std() const { return target_std_; }

 private:
  int channels_ = 0;
  double eps_ = kDefaultEps, momentum_ = 0.1;
  std::vector<real> target_mean_, target_std_;
  Affine affine_;
  std::vector<real> running_mean_, running_var_;

  Mode mode_ = Mode::train;
  Dims4 in_dims_;
  Tensor4 xhat_;
  std::vector<acc_t> inv_std_;
};

// --------------------------------------------------------------------------

/// Running estimates of per-channel mean/variance, nudged toward each batch's
/// statistics at `update_rate` and excluded from gradient flow.
struct EstimatorState {
  std::vector<real> mu_hat;   // starts at 0
  std::vector<real> var_hat;  // starts at 1
  double update_rate = 0.1;
  double eps_floor = kDefaultEps;

  explicit EstimatorState(int channels)
      : mu_hat(static_cast<std::size_t>(channels), 0),
        var_hat(static_cast<std::size_t>(channels), 1) {}
};

/// One estimator step, in literal order: batch mean first, then the second
/// moment around the *pre-update* mean estimate, then both updates.
void estimator_update(const Tensor4& x, EstimatorState& e);

/// Large-batch batch-channel normalization: the exact composition of a batch
/// normalization stage (per-channel affine) and a channel normalization
/// stage (per-group affine).
class BcnLarge final : public Normalizer {
 public:
  BcnLarge(int channels, int groups, double eps = kDefaultEps,
           double momentum = 0.1);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::unique_ptr<Normalizer> clone() const override {
    return std::make_unique<BcnLarge>(*this);
  }
  const char* kind_name() const override { return "bcn-large"; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;
  Tensor4 last_normalized() const override { return cn_.last_normalized(); }

  BatchNorm& batch_stage() { return bn_; }
  ChannelNorm& channel_stage() { return cn_; }

 private:
  BatchNorm bn_;
  ChannelNorm cn_;
};

/// Micro-batch batch-channel normalization: the batch stage normalizes by
/// running estimates (updated each training step, frozen in evaluation and
/// for gradients), the channel stage is a regular grouped normalization.
/// Works at batch size 1.
class BcnMicro final : public Normalizer {
 public:
  BcnMicro(int channels, int groups, double eps = kDefaultEps,
           double update_rate = 0.1);

  Tensor4 forward(const Tensor4& x, Mode mode) override;
  Tensor4 backward(const Tensor4& grad_out) override;
  void collect_params(std::vector<Param*>& out) override;
  std::unique_ptr<Normalizer> clone() const override {
    return std::make_unique<BcnMicro>(*this);
  }
  const char* kind_name() const override { return "bcn-micro"; }
  void save_state(std::ostream& os) const override;
  void load_state(std::istream& is) override;
  void set_update_rate(double r) override { estimator_.update_rate = r; }
  Tensor4 last_normalized() const override { return cn_.last_normalized(); }

  EstimatorState& estimator() { return estimator_; }
  Affine& batch_affine() { return batch_affine_; }
  ChannelNorm& channel_stage() { return cn_; }

 private:
  int channels_ = 0;
  EstimatorState estimator_;
  Affine batch_affine_;  // per channel
  ChannelNorm cn_;       // per-group affine

  Tensor4 xhat_;
  std::vector<acc_t> inv_sigma_;
};

// --------------------------------------------------------------------------

enum class NormKind { bn, ln, gn, in, fixed, bcn_large, bcn_micro };

const char* to_string(NormKind kind);
NormKind norm_kind_from_string(const std::string& name);

struct NormalizerSpec {
  NormKind kind = NormKind::bn;
  int groups = 0;  // 0: min{32, C/4} (at least 1) where grouping applies
  double eps = kDefaultEps;
  double momentum = 0.1;
  double update_rate = 0.1;
  // fixed kind: per-channel targets are drawn once per site,
  //   mean ~ N(0, sigma_mu), std = exp(g), g ~ N(0, sigma_sigma)
  double sigma_mu = 0.0;
  double sigma_sigma = 0.0;
};

int default_group_count(int channels);
int resolve_groups(const NormalizerSpec& spec, int channels);

struct FixedStats {
  std::vector<real> mean;
  std::vector<real> stddev;
};

FixedStats sample_fixed_stats(int channels, double sigma_mu,
                              double sigma_sigma, Rng& rng);

/// Builds a normalizer for a site with `channels` channels. `fixed_rng` is
/// consumed only by the fixed kind, so choosing it never shifts any other
/// random stream.
std::unique_ptr<Normalizer> make_normalizer(const NormalizerSpec& spec,
                                            int channels, Rng& fixed_rng);

}  // namespace normlab
