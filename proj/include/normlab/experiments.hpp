#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "normlab/train.hpp"

namespace normlab {

struct SweepConfig {
  std::vector<double> sigma_mu_grid{0, 1, 2, 3};
  std::vector<double> sigma_sigma_grid{0, 1, 2, 3};
  int seeds_per_cell = 3;
  double failure_threshold = 0.70;
  int workers = 0;  // 0: hardware thread count
  TrainConfig base; // normalizer kind is forced to `fixed` per cell
};

struct SweepResult {
  double sigma_mu = 0;
  double sigma_sigma = 0;
  std::uint64_t seed = 0;
  double accuracy = 0;
  bool failed = false;   // accuracy < threshold, or the run diverged
  bool diverged = false;
  double distance = 0;   // sqrt(sigma_mu^2 + sigma_sigma^2)
};

/// One full training run per (sigma_mu, sigma_sigma, seed): fixed per-channel
/// statistics are drawn per normalized layer with those spreads, the plain4
/// net is trained, and the final test accuracy decides the failure flag.
/// Cell (0, 0) draws mean 0 / std 1 exactly and therefore reproduces a plain
/// batch-norm run with the same seed bit for bit. Cells run in parallel
/// workers; results come back in grid-then-seed order regardless.
std::vector<SweepResult> run_singularity_sweep(const SweepConfig& cfg,
                                               const Cifar10& data,
                                               std::ostream* log = nullptr);

/// Columns: sigma_mu,sigma_sigma,seed,accuracy,failed,distance.
void write_sweep_csv(std::ostream& os, const std::vector<SweepResult>& rows);

/// Spearman rank correlation between per-cell mean accuracy and distance to
/// the origin, ties averaged.
double sweep_spearman(const std::vector<SweepResult>& rows);

// --------------------------------------------------------------------------

struct TraceVariant {
  std::string name;  // "gn", "ln", "gn+ws", "ln+ws", "bn"
  NormalizerSpec norm;
  bool ws = false;
  RecordSite site = RecordSite::conv_output;
};

TraceVariant trace_variant_from_name(const std::string& name,
                                     const NormalizerSpec& base);

struct TraceConfig {
  TrainConfig base;  // model/recording fields are overridden per variant
  std::vector<std::string> variants{"gn", "ln", "gn+ws", "ln+ws", "bn"};
  int workers = 0;
};

struct TraceResult {
  std::string name;
  RunResult run;
};

/// One recorded training run per variant. Channel normalizers record raw
/// conv outputs; the bn control records normalized (pre-affine) values,
/// where its trace must sit at zero.
std::vector<TraceResult> run_statdiff_trace(const TraceConfig& cfg,
                                            const Cifar10& data,
                                            std::ostream* log = nullptr);

}  // namespace normlab
