#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "normlab/observer.hpp"
#include "normlab/tensor.hpp"

namespace normlab {

/// Long-memory EMA of per-channel mean and variance of a tapped tensor.
/// Bias-corrected, so the very first update already reports the batch
/// statistics (momentum 1 keeps no history at all).
class ChannelStatRecord {
 public:
  ChannelStatRecord() = default;
  ChannelStatRecord(int layer_id, int channels, double momentum = 0.01);

  void update(const Tensor4& t);

  int layer_id() const { return layer_id_; }
  int channels() const { return channels_; }
  int updates() const { return updates_; }
  std::vector<double> running_mean() const;
  std::vector<double> running_std() const;

 private:
  int layer_id_ = 0, channels_ = 0;
  double momentum_ = 0.01;
  int updates_ = 0;
  std::vector<acc_t> ema_mean_, ema_var_;
};

/// Ratio of the spread of channel means to the typical channel std within a
/// group: sqrt(E[mu^2] - E[mu]^2) / E[sigma], population statistics over the
/// group's channels. Zero iff all means coincide.
double statdiff(std::span<const double> means, std::span<const double> stds);

struct StatDiffReport {
  struct LayerEntry {
    int layer = 0;
    std::vector<double> per_group;
    double mean = 0;  // mean over this layer's groups
  };
  int epoch = 0;
  std::vector<LayerEntry> layers;
  double mean_over_groups = 0;  // all groups of all layers pooled
  double mean_over_layers = 0;  // mean of per-layer means
};

/// Per-group statdiff over each record's running statistics; groups_per_layer
/// gives the channel grouping used at each recorded site.
StatDiffReport statdiff_report(const std::vector<ChannelStatRecord>& records,
                               const std::vector<int>& groups_per_layer,
                               int epoch);

/// One row per epoch x layer x group: epoch,layer,group,statdiff.
void write_statdiff_csv(std::ostream& os,
                        const std::vector<StatDiffReport>& reports);

// --------------------------------------------------------------------------

enum class RecordSite { conv_output, norm_output };

/// ForwardObserver folding tapped tensors into ChannelStatRecords.
/// conv_output records raw convolution outputs; norm_output records
/// normalized values before the affine transform.
class StatRecorder : public ForwardObserver {
 public:
  StatRecorder(const std::vector<int>& channels_per_site, RecordSite site,
               double momentum = 0.01);

  void on_conv_output(int site, const Tensor4& t) override;
  void on_norm_normalized(int site, const Tensor4& t) override;

  const std::vector<ChannelStatRecord>& records() const { return records_; }

 private:
  RecordSite site_;
  std::vector<ChannelStatRecord> records_;
};

// --------------------------------------------------------------------------

struct EliminationReport {
  struct LayerEntry {
    int layer = 0;
    std::vector<double> max_activation;      // per channel over the pass
    std::vector<std::uint8_t> deactivated;   // max < 0
    double deactivated_fraction = 0;
    double near_deactivated_fraction = 0;    // max < tau
  };
  std::vector<LayerEntry> layers;
  double tau = 0;
};

/// ForwardObserver keeping the running per-channel max of post-affine,
/// pre-ReLU normalizer outputs.
class EliminationAccumulator : public ForwardObserver {
 public:
  explicit EliminationAccumulator(const std::vector<int>& channels_per_site);

  void on_norm_output(int site, const Tensor4& t) override;

  bool saw_data() const { return observed_; }
  EliminationReport report(double tau) const;

 private:
  std::vector<std::vector<double>> max_per_site_;
  bool observed_ = false;
};

void write_elimination_csv(std::ostream& os, const EliminationReport& rep);

}  // namespace normlab
