#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "normlab/checkpoint.hpp"
#include "normlab/config.hpp"
#include "normlab/experiments.hpp"

using namespace normlab;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "normlab-tests";
  fs::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> two_record_bytes() {
  std::vector<std::uint8_t> bytes;
  bytes.push_back(3);  // label
  for (int i = 0; i < Cifar10Set::kPixels; ++i)
    bytes.push_back(static_cast<std::uint8_t>(i % 251));
  bytes.push_back(7);
  for (int i = 0; i < Cifar10Set::kPixels; ++i)
    bytes.push_back(static_cast<std::uint8_t>((i * 13 + 5) % 256));
  return bytes;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(p, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

TrainConfig tiny_synthetic_config() {
  TrainConfig cfg;
  cfg.dataset = "synthetic";
  cfg.synthetic = SyntheticSpec{2, 64, 32, 5, 1.0, 0.02};
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.sgd = SgdConfig{0.05, 0.9, 0.0};
  cfg.seed = 42;
  cfg.augment = false;
  return cfg;
}

}  // namespace

TEST_CASE("cifar parser round-trips bytes exactly") {
  const auto bytes = two_record_bytes();
  const fs::path file = temp_dir() / "two_records.bin";
  write_bytes(file, bytes);

  const Cifar10Set set = parse_cifar10_file(file.string());
  REQUIRE(set.size() == 2);
  CHECK(set.label(0) == 3);
  CHECK(set.label(1) == 7);
  const auto rec0 = set.serialize_record(0);
  const auto rec1 = set.serialize_record(1);
  for (int i = 0; i < Cifar10Set::kRecordBytes; ++i) {
    CHECK(rec0[i] == bytes[i]);
    CHECK(rec1[i] == bytes[Cifar10Set::kRecordBytes + i]);
  }
}

TEST_CASE("cifar parser rejects bad files") {
  const fs::path dir = temp_dir();
  write_bytes(dir / "empty.bin", {});
  CHECK_THROWS_AS(parse_cifar10_file((dir / "empty.bin").string()),
                  CorruptDataset);

  auto truncated = two_record_bytes();
  truncated.pop_back();
  write_bytes(dir / "truncated.bin", truncated);
  CHECK_THROWS_AS(parse_cifar10_file((dir / "truncated.bin").string()),
                  CorruptDataset);

  auto bad_label = two_record_bytes();
  bad_label[0] = 10;
  write_bytes(dir / "bad_label.bin", bad_label);
  CHECK_THROWS_AS(parse_cifar10_file((dir / "bad_label.bin").string()),
                  CorruptDataset);

  CHECK_THROWS_AS(parse_cifar10_file((dir / "missing.bin").string()),
                  CorruptDataset);
}

TEST_CASE("full cifar-10 layout loads when the dataset is present") {
  const char* env = std::getenv("NORMLAB_DATA");
  if (!env || !fs::exists(fs::path(env) / "data_batch_1.bin")) {
    MESSAGE("NORMLAB_DATA not set or dataset absent; skipping full-set check");
    return;
  }
  const Cifar10 data = load_cifar10(env);
  CHECK(data.train.size() == 50000);
  CHECK(data.test.size() == 10000);
}

TEST_CASE("synthetic dataset is deterministic per seed") {
  const SyntheticSpec spec{3, 8, 4, 77, 0.8, 0.1};
  const Cifar10 a = make_synthetic(spec);
  const Cifar10 b = make_synthetic(spec);
  REQUIRE(a.train.size() == 24);
  REQUIRE(a.test.size() == 12);
  for (int i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.label(i) == b.train.label(i));
    CHECK(a.train.serialize_record(i) == b.train.serialize_record(i));
  }
}

TEST_CASE("augmented batches consume rng and change pixels deterministically") {
  const Cifar10 data = make_synthetic(SyntheticSpec{2, 8, 4, 3, 1.0, 0.05});
  const std::vector<int> idx{0, 1, 2, 3};
  Rng r1(9), r2(9), r3(10);
  const Tensor4 a = data.train.batch(idx, true, &r1);
  const Tensor4 b = data.train.batch(idx, true, &r2);
  const Tensor4 c = data.train.batch(idx, true, &r3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i)
    any_diff |= a.data()[i] != c.data()[i];
  CHECK(any_diff);
}

TEST_CASE("sample_fixed_stats statistical properties") {
  Rng rng(21);
  // positivity of stds for a wide spread
  const FixedStats wide = sample_fixed_stats(10000, 0.0, 3.0, rng);
  for (const real s : wide.stddev) CHECK(s > 0);
  // empirical std of the sampled means within 2% of sigma_mu
  const double sigma_mu = 1.5;
  const FixedStats many = sample_fixed_stats(100000, sigma_mu, 0.0, rng);
  acc_t sq = 0;
  for (const real m : many.mean) sq += static_cast<acc_t>(m) * m;
  const double emp = std::sqrt(sq / many.mean.size());
  CHECK(emp == doctest::Approx(sigma_mu).epsilon(0.02));
}

TEST_CASE("training is deterministic per seed") {
  const TrainConfig cfg = tiny_synthetic_config();
  const Cifar10 data = load_dataset(cfg);
  const RunResult a = train_run(cfg, data);
  const RunResult b = train_run(cfg, data);
  REQUIRE(a.curves.size() == b.curves.size());
  for (std::size_t i = 0; i < a.curves.size(); ++i) {
    CHECK(a.curves[i].train_loss == b.curves[i].train_loss);
    CHECK(a.curves[i].train_err == b.curves[i].train_err);
    CHECK(a.curves[i].test_err == b.curves[i].test_err);
  }
}

TEST_CASE("zero learning rate freezes the loss across epochs") {
  TrainConfig cfg = tiny_synthetic_config();
  cfg.model.norm.kind = NormKind::ln;  // per-sample statistics: loss is
                                       // independent of batch composition
  cfg.sgd = SgdConfig{1e-300, 0.0, 0.0};
  cfg.cosine_lr = false;
  cfg.epochs = 3;
  const Cifar10 data = load_dataset(cfg);
  const RunResult r = train_run(cfg, data);
  REQUIRE(r.curves.size() == 3);
  for (const auto& e : r.curves) {
    CHECK(std::fabs(e.train_loss - r.curves[0].train_loss) <= 1e-12);
    CHECK(e.test_err == r.curves[0].test_err);
  }
}

TEST_CASE("plain4 with bn learns a high-snr synthetic set within 5 epochs") {
  TrainConfig cfg = tiny_synthetic_config();
  cfg.epochs = 5;
  cfg.synthetic.per_class_train = 128;
  const Cifar10 data = load_dataset(cfg);
  const RunResult r = train_run(cfg, data);
  REQUIRE(!r.diverged);
  CHECK(r.curves.back().train_err <= 0.01);  // >= 99% train accuracy
}

TEST_CASE("zero-signal synthetic set trains to chance level") {
  TrainConfig cfg = tiny_synthetic_config();
  cfg.synthetic = SyntheticSpec{2, 128, 128, 11, 0.0, 0.3};
  cfg.epochs = 3;
  const Cifar10 data = load_dataset(cfg);
  const RunResult r = train_run(cfg, data);
  REQUIRE(!r.diverged);
  CHECK(r.final_test_acc >= 0.3);
  CHECK(r.final_test_acc <= 0.7);
}

TEST_CASE("sweep cell (0,0) is bitwise a plain bn run with the same seed") {
  TrainConfig bn_cfg = tiny_synthetic_config();
  const Cifar10 data = load_dataset(bn_cfg);
  const RunResult bn_run = train_run(bn_cfg, data);

  TrainConfig fixed_cfg = bn_cfg;
  fixed_cfg.model.norm.kind = NormKind::fixed;
  fixed_cfg.model.norm.sigma_mu = 0.0;
  fixed_cfg.model.norm.sigma_sigma = 0.0;
  const RunResult fixed_run = train_run(fixed_cfg, data);

  REQUIRE(bn_run.curves.size() == fixed_run.curves.size());
  for (std::size_t i = 0; i < bn_run.curves.size(); ++i) {
    CHECK(bn_run.curves[i].train_loss == fixed_run.curves[i].train_loss);
    CHECK(bn_run.curves[i].test_err == fixed_run.curves[i].test_err);
  }
}

TEST_CASE("sweep runs its grid, writes ordered csv, and survives divergence") {
  SweepConfig cfg;
  cfg.sigma_mu_grid = {0};
  cfg.sigma_sigma_grid = {0};
  cfg.seeds_per_cell = 1;
  cfg.base = tiny_synthetic_config();
  cfg.base.epochs = 1;
  cfg.workers = 2;
  const Cifar10 data = load_dataset(cfg.base);
  const auto rows = run_singularity_sweep(cfg, data);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].distance == 0.0);

  std::ostringstream os;
  write_sweep_csv(os, rows);
  const std::string csv = os.str();
  CHECK(csv.rfind("sigma_mu,sigma_sigma,seed,accuracy,failed,distance\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);

  // re-running the same config reproduces the file byte for byte
  const auto rows_again = run_singularity_sweep(cfg, data);
  std::ostringstream os2;
  write_sweep_csv(os2, rows_again);
  CHECK(os2.str() == csv);

  // a diverging cell is recorded as failure, not thrown: the decay term
  // overflows the weights to Inf within a few steps, the next forward is NaN
  SweepConfig bad = cfg;
  bad.base.sgd = SgdConfig{1e154, 0.0, 1e154};
  bad.base.epochs = 2;
  const auto bad_rows = run_singularity_sweep(bad, data);
  REQUIRE(bad_rows.size() == 1);
  CHECK(bad_rows[0].diverged);
  CHECK(bad_rows[0].failed);
}

TEST_CASE("spearman rank correlation on hand-built sweeps") {
  std::vector<SweepResult> rows;
  for (int i = 0; i < 5; ++i) {
    SweepResult r;
    r.sigma_mu = i;
    r.sigma_sigma = 0;
    r.distance = i;
    r.accuracy = 0.9 - 0.1 * i;  // strictly decreasing with distance
    rows.push_back(r);
  }
  CHECK(sweep_spearman(rows) == doctest::Approx(-1.0).epsilon(1e-12));
  for (auto& r : rows) r.accuracy = 0.5;
  CHECK(sweep_spearman(rows) == 0.0);
}

TEST_CASE("statdiff trace variants parse and reject unsupported kinds") {
  NormalizerSpec base;
  const TraceVariant gn = trace_variant_from_name("gn", base);
  CHECK(gn.norm.kind == NormKind::gn);
  CHECK(!gn.ws);
  CHECK(gn.site == RecordSite::conv_output);
  const TraceVariant lnws = trace_variant_from_name("ln+ws", base);
  CHECK(lnws.norm.kind == NormKind::ln);
  CHECK(lnws.ws);
  const TraceVariant bn = trace_variant_from_name("bn", base);
  CHECK(bn.site == RecordSite::norm_output);
  CHECK_THROWS_AS(trace_variant_from_name("in", base), InvalidConfig);
}

TEST_CASE("statdiff trace smoke run emits per-epoch reports") {
  TraceConfig cfg;
  cfg.base = tiny_synthetic_config();
  cfg.base.model.arch = "miniresnet";
  cfg.base.model.resnet_n = 1;
  cfg.base.epochs = 1;
  cfg.variants = {"gn", "bn"};
  cfg.workers = 2;
  const Cifar10 data = load_dataset(cfg.base);
  const auto results = run_statdiff_trace(cfg, data);
  REQUIRE(results.size() == 2);
  for (const auto& tr : results) {
    REQUIRE(tr.run.statdiff.size() == 1);
    CHECK(!tr.run.statdiff[0].layers.empty());
  }
  // bn control records normalized values: trace at zero
  for (const auto& tr : results)
    if (tr.name == "bn")
      CHECK(tr.run.statdiff[0].mean_over_groups <= 1e-3);
}

TEST_CASE("micro-batch training runs at batch size 1; bn refuses") {
  TrainConfig cfg = tiny_synthetic_config();
  cfg.batch_size = 1;
  cfg.epochs = 1;
  cfg.synthetic.per_class_train = 8;
  cfg.synthetic.per_class_test = 4;
  cfg.model.norm.kind = NormKind::bcn_micro;
  const Cifar10 data = load_dataset(cfg);
  const RunResult r = train_run(cfg, data);
  CHECK(!r.diverged);
  REQUIRE(r.curves.size() == 1);

  TrainConfig bn_cfg = cfg;
  bn_cfg.model.norm.kind = NormKind::bn;
  CHECK_THROWS_AS(train_run(bn_cfg, data), DegenerateBatch);
}

TEST_CASE("config json parsing mirrors fields and rejects unknown keys") {
  const nlohmann::json j = {
      {"model", "miniresnet"},
      {"resnet_n", 2},
      {"normalizer",
       {{"kind", "bcn-micro"}, {"groups", 4}, {"update_rate", 0.05}}},
      {"ws", true},
      {"epochs", 7},
      {"batch_size", 16},
      {"sgd", {{"lr", 0.2}, {"momentum", 0.8}, {"weight_decay", 1e-4}}},
      {"cosine_lr", false},
      {"seed", 99},
      {"augment", false},
      {"dataset", "synthetic"},
      {"synthetic", {{"classes", 3}, {"per_class_train", 10}}},
      {"record_stats", true},
      {"record_site", "norm"},
  };
  const TrainConfig cfg = train_config_from_json(j);
  CHECK(cfg.model.arch == "miniresnet");
  CHECK(cfg.model.resnet_n == 2);
  CHECK(cfg.model.norm.kind == NormKind::bcn_micro);
  CHECK(cfg.model.norm.groups == 4);
  CHECK(cfg.model.norm.update_rate == 0.05);
  CHECK(cfg.model.ws);
  CHECK(cfg.epochs == 7);
  CHECK(cfg.sgd.momentum == 0.8);
  CHECK(!cfg.cosine_lr);
  CHECK(cfg.seed == 99);
  CHECK(cfg.synthetic.classes == 3);
  CHECK(cfg.record_site == RecordSite::norm_output);

  nlohmann::json bad = j;
  bad["learning_rate"] = 0.1;
  CHECK_THROWS_AS(train_config_from_json(bad), InvalidConfig);
  nlohmann::json bad_nested = j;
  bad_nested["normalizer"]["group"] = 4;
  CHECK_THROWS_AS(train_config_from_json(bad_nested), InvalidConfig);
  nlohmann::json bad_site = j;
  bad_site["record_site"] = "everywhere";
  CHECK_THROWS_AS(train_config_from_json(bad_site), InvalidConfig);

  // ws defaults on for batch-channel kinds when the key is absent
  nlohmann::json bcn = {{"normalizer", {{"kind", "bcn-micro"}}}};
  CHECK(train_config_from_json(bcn).model.ws);
  bcn["ws"] = false;
  CHECK(!train_config_from_json(bcn).model.ws);
  const nlohmann::json plain = {{"normalizer", {{"kind", "gn"}}}};
  CHECK(!train_config_from_json(plain).model.ws);

  // round trip through to_json keeps the values
  const TrainConfig back = train_config_from_json(to_json(cfg));
  CHECK(back.model.arch == cfg.model.arch);
  CHECK(back.model.norm.kind == cfg.model.norm.kind);
  CHECK(back.seed == cfg.seed);
}

TEST_CASE("sweep and trace configs parse") {
  const nlohmann::json j = {
      {"sigma_mu_grid", {0.0, 1.0}},
      {"sigma_sigma_grid", {0.0}},
      {"seeds_per_cell", 2},
      {"failure_threshold", 0.6},
      {"train", {{"model", "plain4"}, {"dataset", "synthetic"}}},
  };
  const SweepConfig cfg = sweep_config_from_json(j);
  CHECK(cfg.sigma_mu_grid.size() == 2);
  CHECK(cfg.seeds_per_cell == 2);
  CHECK(cfg.failure_threshold == 0.6);

  nlohmann::json bad = j;
  bad["grid"] = 1;
  CHECK_THROWS_AS(sweep_config_from_json(bad), InvalidConfig);

  const nlohmann::json t = {{"variants", {"gn", "ln+ws"}},
                            {"train", {{"model", "miniresnet"}}}};
  const TraceConfig tc = trace_config_from_json(t);
  CHECK(tc.variants.size() == 2);
}

TEST_CASE("checkpoint save/load reproduces the model bitwise") {
  TrainConfig cfg = tiny_synthetic_config();
  cfg.epochs = 1;
  const Cifar10 data = load_dataset(cfg);
  std::unique_ptr<Model> model;
  train_run(cfg, data, &model);
  REQUIRE(model);

  const fs::path path = temp_dir() / "ck.bin";
  save_checkpoint(path.string(), cfg, *model);
  Checkpoint ck = load_checkpoint(path.string());
  CHECK(ck.config.seed == cfg.seed);

  const std::vector<int> idx{0, 1, 2};
  const Tensor4 x = data.test.batch(idx, false, nullptr);
  const Tensor4 y1 = model->forward(x, Mode::eval, nullptr);
  const Tensor4 y2 = ck.model->forward(x, Mode::eval, nullptr);
  REQUIRE(y1.same_shape(y2));
  for (std::size_t i = 0; i < y1.size(); ++i)
    CHECK(y1.data()[i] == y2.data()[i]);
}

#ifdef NORMLAB_CLI
TEST_CASE("cli exit codes and artifacts") {
  const std::string cli = NORMLAB_CLI;
  const fs::path dir = temp_dir() / "cli";
  fs::create_directories(dir);

  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };

  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("train") == 2);  // missing required --config
  CHECK(run("gradcheck --seeds 2") == 0);

  // 1x1 sweep on a tiny synthetic set: csv with header + one row
  const fs::path cfg_path = dir / "sweep.json";
  {
    std::ofstream os(cfg_path);
    os << R"({
      "sigma_mu_grid": [0.0], "sigma_sigma_grid": [0.0], "seeds_per_cell": 1,
      "train": {
        "model": "plain4", "dataset": "synthetic", "epochs": 1,
        "batch_size": 16, "augment": false,
        "synthetic": {"classes": 2, "per_class_train": 16, "per_class_test": 8}
      }
    })";
  }
  const fs::path out = dir / "out";
  CHECK(run("--out " + out.string() + " sweep --config " + cfg_path.string()) == 0);
  std::ifstream csv(out / "sweep.csv");
  REQUIRE(csv.good());
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 2);

  CHECK(run("train --config " + cfg_path.string()) == 1);  // wrong schema
}
#endif
