// Acceptance suite, offline tier: one line per criterion, exit 0 iff all
// runnable criteria pass. The two CIFAR-10 experiments live in
// acceptance_cifar.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "normlab/experiments.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/norm.hpp"
#include "normlab/ws.hpp"
#include "oracles.hpp"

using namespace normlab;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("criterion %2d: %s — %s\n", criterion, pass ? "PASS" : "FAIL",
              detail.c_str());
  if (!pass) ++g_failures;
}

// --- criterion 1: gradient suite -------------------------------------------

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(10, 1e-4, 0);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  const std::vector<std::string> required = {
      "conv2d", "conv2d+ws", "relu",      "avgpool2",  "global_avgpool",
      "linear", "softmax_xent", "affine", "bn",        "cn",
      "fixedstat", "bcn-large", "bcn-micro"};
  bool pass = secs < 120.0;
  double worst = 0;
  std::string missing;
  for (const auto& name : required) {
    bool found = false;
    for (const auto& r : results)
      if (r.op == name) {
        found = true;
        pass = pass && r.pass && r.coords_checked > 0;
        worst = std::max(worst, r.max_rel_err);
      }
    if (!found) {
      pass = false;
      missing += " " + name;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "13 ops x 10 seeds, worst rel err %.2e (tol 1e-4), %.1f s%s%s",
                worst, secs, missing.empty() ? "" : ", missing:",
                missing.c_str());
  report(1, pass, buf);
}

// --- criterion 2: zero mean, unit variance after bn -------------------------

void criterion_bn_moments() {
  bool pass = true;
  double worst_mean = 0, worst_var = 0;
  Rng rng(202);
  for (int trial = 0; trial < 20; ++trial) {
    const int b = 2 + static_cast<int>(rng.below(7));
    const int c = 1 + static_cast<int>(rng.below(16));
    const int hw = 1 + static_cast<int>(rng.below(8));
    if (b * hw * hw < 16) continue;
    const Tensor4 x = Tensor4::randn({b, c, hw, hw}, rng,
                                     std::exp(rng.normal()));
    BatchNorm bn(c, 1e-10);
    const Tensor4 y = bn.forward(x, Mode::train);
    const Moments m = reduce_stats(y, AxisSet::batch_spatial());
    for (int ch = 0; ch < c; ++ch) {
      worst_mean = std::max(worst_mean, std::fabs(static_cast<double>(m.mean.data()[ch])));
      worst_var = std::max(worst_var, std::fabs(m.var.data()[ch] - 1.0));
    }
  }
  pass = worst_mean <= 1e-6 && worst_var <= 1e-5;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "pre-affine per-channel |mean| %.2e (<= 1e-6), |var-1| %.2e (<= 1e-5)",
                worst_mean, worst_var);
  report(2, pass, buf);
}

// --- criterion 3: weight standardization row constraints --------------------

void criterion_ws_rows() {
  Rng rng(303);
  double worst_mean = 0, worst_sq = 0;
  for (int t = 0; t < 100; ++t) {
    const int out_ch = 1 + static_cast<int>(rng.below(8));
    const int in_ch = 1 + static_cast<int>(rng.below(8));
    const int k = 3;  // trainable-scale rows with realistic fan-in
    const Tensor4 w = Tensor4::randn({out_ch, in_ch, k, k}, rng,
                                     std::exp(0.5 * rng.normal()));
    const Tensor4 s = ws_standardize(w);
    const int row_len = in_ch * k * k;
    for (int o = 0; o < out_ch; ++o) {
      double mean = 0, sq = 0;
      for (int i = 0; i < row_len; ++i) {
        const double v = s.data()[static_cast<std::size_t>(o) * row_len + i];
        mean += v;
        sq += v * v;
      }
      mean /= row_len;
      worst_mean = std::max(worst_mean, std::fabs(mean));
      worst_sq = std::max(worst_sq, std::fabs(sq - 1.0));
    }
  }
  const bool pass = worst_mean <= 1e-7 && worst_sq <= 1e-6;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "100 random weights: row |mean| %.2e (<= 1e-7), |sumsq-1| %.2e (<= 1e-6)",
                worst_mean, worst_sq);
  report(3, pass, buf);
}

// --- criterion 4: compositional identities ----------------------------------

void criterion_composition() {
  Rng rng(404);
  bool bitwise = true;
  double worst_ln = 0, worst_in = 0;
  for (int t = 0; t < 10; ++t) {
    const int b = 2 + static_cast<int>(rng.below(3));
    const int c = 4 + 2 * static_cast<int>(rng.below(3));
    const int hw = 3 + static_cast<int>(rng.below(4));
    const Tensor4 x = Tensor4::randn({b, c, hw, hw}, rng, 1.5);

    BcnLarge bcn(c, 2);
    BatchNorm bn(c);
    ChannelNorm cn(c, 2, kDefaultEps,
                   ChannelNorm::AffineGranularity::per_group);
    const Tensor4 y1 = bcn.forward(x, Mode::train);
    const Tensor4 y2 = cn.forward(bn.forward(x, Mode::train), Mode::train);
    for (std::size_t i = 0; i < y1.size(); ++i)
      bitwise = bitwise && (y1.data()[i] == y2.data()[i]);

    ChannelNorm ln(c, 1);
    const Tensor4 yl = ln.forward(x, Mode::train);
    const Tensor4 ol = oracles::naive_layer_norm(x, kDefaultEps);
    for (std::size_t i = 0; i < x.size(); ++i)
      worst_ln = std::max(worst_ln,
                          std::fabs(static_cast<double>(yl.data()[i]) - ol.data()[i]));

    ChannelNorm inorm(c, c);
    const Tensor4 yi = inorm.forward(x, Mode::train);
    const Tensor4 oi = oracles::naive_instance_norm(x, kDefaultEps);
    for (std::size_t i = 0; i < x.size(); ++i)
      worst_in = std::max(worst_in,
                          std::fabs(static_cast<double>(yi.data()[i]) - oi.data()[i]));
  }
  const bool pass = bitwise && worst_ln <= 1e-12 && worst_in <= 1e-12;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "bcn-large %s cn(bn(x)); ln oracle diff %.1e, in oracle diff %.1e (<= 1e-12)",
                bitwise ? "==" : "!=", worst_ln, worst_in);
  report(4, pass, buf);
}

// --- criterion 5: estimator trace and contraction ---------------------------

void criterion_estimator() {
  EstimatorState e(1);
  e.update_rate = 0.5;
  estimator_update(Tensor4(1, 1, 1, 1, 4), e);
  const bool exact = e.mu_hat[0] == real(2) && e.var_hat[0] == real(8.5);
  const double normalized =
      (4.0 - e.mu_hat[0]) / std::sqrt(static_cast<double>(e.var_hat[0]));
  const bool norm_ok = std::fabs(normalized - 2.0 / std::sqrt(8.5)) <= 1e-15;

  Rng rng(505);
  const Tensor4 batch = Tensor4::randn({2, 3, 4, 4}, rng, 2.0);
  const Moments m = reduce_stats(batch, AxisSet::batch_spatial());
  EstimatorState rep(3);
  rep.update_rate = 0.25;
  bool contract = true;
  double prev[3];
  estimator_update(batch, rep);
  for (int c = 0; c < 3; ++c) prev[c] = std::fabs(rep.mu_hat[c] - m.mean.data()[c]);
  for (int step = 0; step < 6; ++step) {
    estimator_update(batch, rep);
    for (int c = 0; c < 3; ++c) {
      const double cur = std::fabs(rep.mu_hat[c] - m.mean.data()[c]);
      contract = contract && std::fabs(cur - prev[c] * 0.75) <= 1e-10;
      prev[c] = cur;
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "x=4, r=0.5 -> mu 2, var 8.5, xhat 2/sqrt(8.5)%s; repeated-batch error factor (1-r) +/- 1e-10%s",
                exact && norm_ok ? "" : " MISMATCH", contract ? "" : " BROKEN");
  report(5, exact && norm_ok && contract, buf);
}

// --- criterion 6: statdiff values -------------------------------------------

void criterion_statdiff() {
  const bool unit = statdiff(std::vector<double>{0, 2},
                             std::vector<double>{1, 1}) == 1.0;
  const bool zero = statdiff(std::vector<double>{5, 5, 5},
                             std::vector<double>{1, 2, 3}) == 0.0;
  Rng rng(606);
  std::vector<double> means(6), stds(6);
  for (auto& v : means) v = rng.normal();
  for (auto& v : stds) v = std::exp(rng.normal());
  const double base = statdiff(means, stds);
  bool scale_ok = true;
  for (const double lam : {1e-3, 7.0, 1e5}) {
    std::vector<double> ms(6), ss(6);
    for (int i = 0; i < 6; ++i) {
      ms[i] = lam * means[i];
      ss[i] = lam * stds[i];
    }
    scale_ok = scale_ok && std::fabs(statdiff(ms, ss) - base) <= 1e-12 * base;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "({0,2},{1,1}) -> 1.0 %s; equal means -> 0 %s; scale invariance to 1e-12 %s",
                unit ? "exact" : "WRONG", zero ? "exact" : "WRONG",
                scale_ok ? "holds" : "BROKEN");
  report(6, unit && zero && scale_ok, buf);
}

// --- criteria 7, 8: delegated ------------------------------------------------

void criterion_cifar_pointers() {
  std::printf("criterion  7: see acceptance_cifar (full CIFAR-10 sweep; needs "
              "NORMLAB_DATA)\n");
  std::printf("criterion  8: see acceptance_cifar (CIFAR-10 statdiff traces; "
              "needs NORMLAB_DATA)\n");
}

// --- criterion 9: micro-batch viability --------------------------------------

void criterion_micro_batch() {
  TrainConfig cfg;
  cfg.model.arch = "plain4";
  cfg.model.norm.kind = NormKind::bcn_micro;
  cfg.dataset = "synthetic";
  cfg.synthetic = SyntheticSpec{2, 200, 64, 17, 1.0, 0.02};
  cfg.epochs = 10;
  cfg.batch_size = 1;
  cfg.sgd = SgdConfig{0.02, 0.9, 0.0};
  cfg.cosine_lr = false;
  cfg.augment = false;
  cfg.seed = 7;
  const Cifar10 data = load_dataset(cfg);
  const RunResult run = train_run(cfg, data);
  double best_train_acc = 0;
  int best_epoch = -1;
  for (const auto& e : run.curves)
    if (1.0 - e.train_err > best_train_acc) {
      best_train_acc = 1.0 - e.train_err;
      best_epoch = e.epoch;
    }
  const bool learns = !run.diverged && best_train_acc >= 0.95;

  bool bn_refuses = false;
  try {
    TrainConfig bn_cfg = cfg;
    bn_cfg.model.norm.kind = NormKind::bn;
    bn_cfg.epochs = 1;
    train_run(bn_cfg, data);
  } catch (const DegenerateBatch&) {
    bn_refuses = true;
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "bcn-micro at batch 1: train acc %.3f by epoch %d (>= 0.95); "
                "plain bn at batch 1 %s DegenerateBatch",
                best_train_acc, best_epoch,
                bn_refuses ? "raises" : "DOES NOT raise");
  report(9, learns && bn_refuses, buf);
}

// --- criterion 10: out-of-scope statement ------------------------------------

void criterion_out_of_scope() {
  report(10, true,
         "not reproduced at desk scale, by design: ResNet-110/18 CIFAR error "
         "tables, ImageNet top-1/5, VOC mIoU, COCO AP; the property and "
         "experiment suites above stand in for them");
}

}  // namespace

int main() {
  std::printf("normlab acceptance suite (offline tier)\n");
  criterion_gradients();
  criterion_bn_moments();
  criterion_ws_rows();
  criterion_composition();
  criterion_estimator();
  criterion_statdiff();
  criterion_cifar_pointers();
  criterion_micro_batch();
  criterion_out_of_scope();
  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all offline criteria passed\n");
  return 0;
}
