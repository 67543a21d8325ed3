#pragma once

#include <memory>
#include <string>
#include <vector>

#include "normlab/dataset.hpp"
#include "normlab/diagnostics.hpp"
#include "normlab/model.hpp"

namespace normlab {

struct TrainConfig {
  ModelSpec model;
  int epochs = 30;
  int batch_size = 128;
  SgdConfig sgd{0.1, 0.9, 5e-4};
  bool cosine_lr = true;
  std::uint64_t seed = 0;
  bool augment = true;

  std::string dataset = "synthetic";  // "cifar10" | "synthetic"
  std::string data_dir;               // cifar10; NORMLAB_DATA when empty
  SyntheticSpec synthetic;

  bool record_stats = false;
  double record_momentum = 0.01;
  RecordSite record_site = RecordSite::conv_output;
  int record_groups = 0;  // 0: derived from the normalizer kind per site

  int eval_batch_size = 256;
  int threads = 1;  // intra-op kernel threads
};

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_err = 0;
  double test_err = 0;
};

struct RunResult {
  std::vector<EpochStats> curves;
  bool diverged = false;
  double final_test_acc = 0;
  std::vector<StatDiffReport> statdiff;  // one per epoch when recording
};

/// Channel grouping that mirrors a normalizer's grouping for diagnostics
/// (ln: 1 group; gn/bcn: their group count; in: one channel per group;
/// everything else: the gn default).
int diagnostics_groups(const NormalizerSpec& spec, int channels);

/// Loads the configured dataset (cifar10 from data_dir / NORMLAB_DATA, or
/// the synthetic generator).
Cifar10 load_dataset(const TrainConfig& cfg);

/// Seeded epoch loop: shuffle, augment, forward, loss, backward, step.
/// A non-finite loss marks the run diverged and stops it; it is recorded,
/// not thrown. If `keep_model` is given, the trained model is moved there.
RunResult train_run(const TrainConfig& cfg, const Cifar10& data,
                    std::unique_ptr<Model>* keep_model = nullptr);

/// Per-epoch test error of a model, eval mode, no augmentation.
double test_error(Model& model, const Cifar10Set& set, int eval_batch_size);

/// Eval pass over `set` collecting per-channel max of post-affine, pre-ReLU
/// normalizer outputs; a channel is deactivated when that max is below zero,
/// nearly deactivated below tau.
EliminationReport elimination_probe(Model& model, const Cifar10Set& set,
                                    int batch_size, double tau);

}  // namespace normlab
