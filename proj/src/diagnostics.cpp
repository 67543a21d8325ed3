#include "normlab/diagnostics.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "normlab/csv.hpp"

namespace normlab {

ChannelStatRecord::ChannelStatRecord(int layer_id, int channels,
                                     double momentum)
    : layer_id_(layer_id),
      channels_(channels),
      momentum_(momentum),
      ema_mean_(static_cast<std::size_t>(channels), 0.0),
      ema_var_(static_cast<std::size_t>(channels), 0.0) {
  if (momentum <= 0 || momentum > 1)
    throw InvalidInput("ChannelStatRecord: momentum must be in (0, 1]");
}

void ChannelStatRecord::update(const Tensor4& t) {
  const Dims4& d = t.dims();
  if (d.c != channels_)
    throw InvalidShape("ChannelStatRecord: channel count mismatch");
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t slice = static_cast<std::size_t>(d.b) * hw;
  for (int c = 0; c < channels_; ++c) {
    acc_t s = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* p = &t.raw()[t.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
    }
    const acc_t mean = s / static_cast<acc_t>(slice);
    acc_t sq = 0.0;
    for (int b = 0; b < d.b; ++b) {
      const real* p = &t.raw()[t.index(b, c, 0, 0)];
      for (std::size_t i = 0; i < hw; ++i) {
        const acc_t dv = static_cast<acc_t>(p[i]) - mean;
        sq += dv * dv;
      }
    }
    const acc_t var = sq / static_cast<acc_t>(slice);
    ema_mean_[c] = (1.0 - momentum_) * ema_mean_[c] + momentum_ * mean;
    ema_var_[c] = (1.0 - momentum_) * ema_var_[c] + momentum_ * var;
  }
  ++updates_;
}

std::vector<double> ChannelStatRecord::running_mean() const {
  std::vector<double> out(ema_mean_.begin(), ema_mean_.end());
  if (updates_ == 0) return out;
  const double corr = 1.0 - std::pow(1.0 - momentum_, updates_);
  for (auto& v : out) v /= corr;
  return out;
}

std::vector<double> ChannelStatRecord::running_std() const {
  std::vector<double> out(ema_var_.begin(), ema_var_.end());
  if (updates_ == 0) return out;
  const double corr = 1.0 - std::pow(1.0 - momentum_, updates_);
  for (auto& v : out) v = std::sqrt(v / corr);
  return out;
}

double statdiff(std::span<const double> means, std::span<const double> stds) {
  if (means.empty() || means.size() != stds.size())
    throw InvalidInput("statdiff: need matching non-empty vectors");
  const std::size_t n = means.size();
  acc_t m1 = 0.0, m2 = 0.0, ms = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    m1 += means[i];
    m2 += means[i] * means[i];
    ms += stds[i];
  }
  m1 /= static_cast<acc_t>(n);
  m2 /= static_cast<acc_t>(n);
  ms /= static_cast<acc_t>(n);
  if (!(ms > 0))
    throw DegenerateGroup("statdiff: mean of stds is not positive");
  acc_t spread = m2 - m1 * m1;
  if (spread < 0) spread = 0;  // cancellation guard
  return std::sqrt(spread) / ms;
}

StatDiffReport statdiff_report(const std::vector<ChannelStatRecord>& records,
                               const std::vector<int>& groups_per_layer,
                               int epoch) {
  if (records.size() != groups_per_layer.size())
    throw InvalidInput("statdiff_report: one group count per record required");
  StatDiffReport rep;
  rep.epoch = epoch;
  acc_t group_sum = 0.0;
  std::size_t group_count = 0;
  acc_t layer_sum = 0.0;
  for (std::size_t l = 0; l < records.size(); ++l) {
    const ChannelStatRecord& rec = records[l];
    const int groups = groups_per_layer[l];
    if (groups < 1 || rec.channels() % groups != 0)
      throw InvalidGrouping("statdiff_report: grouping invalid at layer " +
                            std::to_string(rec.layer_id()));
    const int cg = rec.channels() / groups;
    const std::vector<double> means = rec.running_mean();
    const std::vector<double> stds = rec.running_std();
    StatDiffReport::LayerEntry entry;
    entry.layer = rec.layer_id();
    acc_t sum = 0.0;
    for (int g = 0; g < groups; ++g) {
      double v = 0;
      try {
        v = statdiff({means.data() + static_cast<std::size_t>(g) * cg,
                      static_cast<std::size_t>(cg)},
                     {stds.data() + static_cast<std::size_t>(g) * cg,
                      static_cast<std::size_t>(cg)});
      } catch (const DegenerateGroup&) {
        throw DegenerateGroup("statdiff_report: degenerate group " +
                              std::to_string(g) + " at layer " +
                              std::to_string(rec.layer_id()));
      }
      entry.per_group.push_back(v);
      sum += v;
      group_sum += v;
      ++group_count;
    }
    entry.mean = sum / groups;
    layer_sum += entry.mean;
    rep.layers.push_back(std::move(entry));
  }
  if (group_count > 0)
    rep.mean_over_groups = group_sum / static_cast<acc_t>(group_count);
  if (!rep.layers.empty())
    rep.mean_over_layers = layer_sum / static_cast<acc_t>(rep.layers.size());
  return rep;
}

void write_statdiff_csv(std::ostream& os,
                        const std::vector<StatDiffReport>& reports) {
  os << "epoch,layer,group,statdiff\n";
  for (const auto& rep : reports)
    for (const auto& layer : rep.layers)
      for (std::size_t g = 0; g < layer.per_group.size(); ++g)
        os << rep.epoch << ',' << layer.layer << ',' << g << ','
           << format_g9(layer.per_group[g]) << '\n';
}

// -------------------------------------------------------------- recorders

StatRecorder::StatRecorder(const std::vector<int>& channels_per_site,
                           RecordSite site, double momentum)
    : site_(site) {
  records_.reserve(channels_per_site.size());
  for (std::size_t i = 0; i < channels_per_site.size(); ++i)
    records_.emplace_back(static_cast<int>(i), channels_per_site[i], momentum);
}

void StatRecorder::on_conv_output(int site, const Tensor4& t) {
  if (site_ == RecordSite::conv_output)
    records_.at(static_cast<std::size_t>(site)).update(t);
}

void StatRecorder::on_norm_normalized(int site, const Tensor4& t) {
  if (site_ == RecordSite::norm_output)
    records_.at(static_cast<std::size_t>(site)).update(t);
}

EliminationAccumulator::EliminationAccumulator(
    const std::vector<int>& channels_per_site) {
  max_per_site_.reserve(channels_per_site.size());
  for (const int c : channels_per_site)
    max_per_site_.emplace_back(static_cast<std::size_t>(c),
                               -std::numeric_limits<double>::infinity());
}

void EliminationAccumulator::on_norm_output(int site, const Tensor4& t) {
  auto& mx = max_per_site_.at(static_cast<std::size_t>(site));
  const Dims4& d = t.dims();
  if (static_cast<std::size_t>(d.c) != mx.size())
    throw InvalidShape("EliminationAccumulator: channel count mismatch");
  const std::size_t hw = static_cast<std::size_t>(d.h) * d.w;
  for (int b = 0; b < d.b; ++b)
    for (int c = 0; c < d.c; ++c) {
      const real* p = &t.raw()[t.index(b, c, 0, 0)];
      double m = mx[c];
      for (std::size_t i = 0; i < hw; ++i)
        if (static_cast<double>(p[i]) > m) m = p[i];
      mx[c] = m;
    }
  observed_ = true;
}

EliminationReport EliminationAccumulator::report(double tau) const {
  if (!observed_)
    throw InvalidInput("EliminationAccumulator: no forward passes observed");
  EliminationReport rep;
  rep.tau = tau;
  for (std::size_t s = 0; s < max_per_site_.size(); ++s) {
    EliminationReport::LayerEntry e;
    e.layer = static_cast<int>(s);
    e.max_activation = max_per_site_[s];
    std::size_t dead = 0, near = 0;
    for (const double m : e.max_activation) {
      const bool d = m < 0.0;
      e.deactivated.push_back(d);
      dead += d;
      near += m < tau;
    }
    e.deactivated_fraction = static_cast<double>(dead) / e.max_activation.size();
    e.near_deactivated_fraction =
        static_cast<double>(near) / e.max_activation.size();
    rep.layers.push_back(std::move(e));
  }
  return rep;
}

void write_elimination_csv(std::ostream& os, const EliminationReport& rep) {
  os << "layer,channel,max_activation,deactivated\n";
  for (const auto& layer : rep.layers)
    for (std::size_t c = 0; c < layer.max_activation.size(); ++c)
      os << layer.layer << ',' << c << ','
         << format_g9(layer.max_activation[c]) << ','
         << static_cast<int>(layer.deactivated[c]) << '\n';
}

}  // namespace normlab
