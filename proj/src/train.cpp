#include "normlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "normlab/parallel.hpp"

namespace normlab {

int diagnostics_groups(const NormalizerSpec& spec, int channels) {
  switch (spec.kind) {
    case NormKind::ln: return 1;
    case NormKind::in: return channels;
    case NormKind::gn:
    case NormKind::bcn_large:
    case NormKind::bcn_micro: return resolve_groups(spec, channels);
    default: return default_group_count(channels);
  }
}

Cifar10 load_dataset(const TrainConfig& cfg) {
  if (cfg.dataset == "synthetic") return make_synthetic(cfg.synthetic);
  if (cfg.dataset == "cifar10") {
    std::string dir = cfg.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("NORMLAB_DATA");
      if (env) dir = env;
    }
    if (dir.empty())
      throw InvalidConfig("cifar10 dataset requested but no data directory "
                          "given (set data_dir or NORMLAB_DATA)");
    return load_cifar10(dir);
  }
  throw InvalidConfig("unknown dataset: " + cfg.dataset);
}

namespace {

int argmax_row(const real* p, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

}  // namespace

double test_error(Model& model, const Cifar10Set& set, int eval_batch_size) {
  const int n = set.size();
  if (n == 0) throw InvalidInput("test_error: empty set");
  int wrong = 0;
  for (int start = 0; start < n; start += eval_batch_size) {
    const int stop = std::min(n, start + eval_batch_size);
    std::vector<int> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor4 images = set.batch(idx, false, nullptr);
    const Tensor4 logits = model.forward(images, Mode::eval, nullptr);
    const int classes = logits.channels();
    for (int b = 0; b < stop - start; ++b) {
      const real* row = logits.data() + static_cast<std::size_t>(b) * classes;
      wrong += argmax_row(row, classes) != set.label(idx[b]);
    }
  }
  return static_cast<double>(wrong) / n;
}

RunResult train_run(const TrainConfig& cfg, const Cifar10& data,
                    std::unique_ptr<Model>* keep_model) {
  if (cfg.batch_size < 1) throw InvalidConfig("batch_size must be positive");
  if (cfg.epochs < 0) throw InvalidConfig("epochs must be non-negative");
  set_intra_threads(cfg.threads);

  std::unique_ptr<Model> model = build_model(cfg.model, cfg.seed);
  const std::vector<Param*> params = model->params();
  Rng data_rng(derive_seed(cfg.seed, kDataStreamTag));

  std::unique_ptr<StatRecorder> recorder;
  std::vector<int> record_groups;
  if (cfg.record_stats) {
    const std::vector<int> channels = cfg.record_site == RecordSite::conv_output
                                          ? model->conv_site_channels()
                                          : model->norm_site_channels();
    recorder = std::make_unique<StatRecorder>(channels, cfg.record_site,
                                              cfg.record_momentum);
    for (const int c : channels)
      record_groups.push_back(cfg.record_groups > 0
                                  ? cfg.record_groups
                                  : diagnostics_groups(cfg.model.norm, c));
  }

  RunResult result;
  const int n_train = data.train.size();
  std::vector<int> perm(static_cast<std::size_t>(n_train));
  std::iota(perm.begin(), perm.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
    const double lr =
        cfg.cosine_lr
            ? cfg.sgd.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                                 epoch / cfg.epochs))
            : cfg.sgd.lr;
    model->set_update_rate(lr);

    data_rng.shuffle(perm);
    acc_t loss_sum = 0.0;
    std::int64_t loss_count = 0;
    int wrong = 0, seen = 0;

    for (int start = 0; start < n_train; start += cfg.batch_size) {
      const int stop = std::min(n_train, start + cfg.batch_size);
      const int bsz = stop - start;
      // A trailing remnant smaller than 2 cannot carry batch statistics;
      // skip it unless batch size 1 was asked for explicitly.
      if (bsz < 2 && cfg.batch_size >= 2) continue;
      const std::span<const int> idx(perm.data() + start,
                                     static_cast<std::size_t>(bsz));
      const Tensor4 images = data.train.batch(idx, cfg.augment, &data_rng);
      const std::vector<int> labels = data.train.batch_labels(idx);

      const Tensor4 logits = model->forward(images, Mode::train, recorder.get());
      const SoftmaxXentResult sm = softmax_xent(logits, labels);
      if (!std::isfinite(sm.loss)) {
        result.diverged = true;
        break;
      }
      loss_sum += sm.loss;
      ++loss_count;
      const int classes = logits.channels();
      for (int b = 0; b < bsz; ++b) {
        const real* row = logits.data() + static_cast<std::size_t>(b) * classes;
        wrong += argmax_row(row, classes) != labels[b];
      }
      seen += bsz;

      zero_grads(params);
      model->backward(sm.dlogits);
      sgd_step(params, SgdConfig{lr, cfg.sgd.momentum, cfg.sgd.weight_decay});
    }
    if (result.diverged) break;

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.train_loss = loss_count > 0 ? loss_sum / loss_count : 0.0;
    es.train_err = seen > 0 ? static_cast<double>(wrong) / seen : 1.0;
    es.test_err = test_error(*model, data.test, cfg.eval_batch_size);
    result.curves.push_back(es);
    result.final_test_acc = 1.0 - es.test_err;

    if (recorder)
      result.statdiff.push_back(
          statdiff_report(recorder->records(), record_groups, epoch));
  }

  if (keep_model) *keep_model = std::move(model);
  return result;
}

EliminationReport elimination_probe(Model& model, const Cifar10Set& set,
                                    int batch_size, double tau) {
  if (set.size() == 0)
    throw InvalidInput("elimination_probe: empty dataset");
  if (batch_size < 1) throw InvalidInput("elimination_probe: bad batch size");
  EliminationAccumulator acc(model.norm_site_channels());
  for (int start = 0; start < set.size(); start += batch_size) {
    const int stop = std::min(set.size(), start + batch_size);
    std::vector<int> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor4 images = set.batch(idx, false, nullptr);
    model.forward(images, Mode::eval, &acc);
  }
  return acc.report(tau);
}

}  // namespace normlab
