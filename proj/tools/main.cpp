#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "normlab/checkpoint.hpp"
#include "normlab/config.hpp"
#include "normlab/csv.hpp"
#include "normlab/experiments.hpp"
#include "normlab/gradcheck.hpp"
#include "normlab/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw normlab::Error("cannot write " + path.string());
  os << content;
}

void write_curves_csv(const fs::path& path, const normlab::RunResult& run) {
  std::ostringstream os;
  os << "epoch,train_err,test_err\n";
  for (const auto& e : run.curves)
    os << e.epoch << ',' << normlab::format_g9(e.train_err) << ','
       << normlab::format_g9(e.test_err) << '\n';
  write_file(path, os.str());
}

json curves_to_json(const normlab::RunResult& run) {
  json epochs = json::array();
  for (const auto& e : run.curves)
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"train_err", e.train_err},
                      {"test_err", e.test_err}});
  return epochs;
}

int cmd_gradcheck(int seeds, double tolerance, std::uint64_t seed) {
#ifdef NORMLAB_REAL_FLOAT
  std::fprintf(stderr,
               "warning: single-precision build; finite differences at the "
               "default step are not meaningful in float. Build with "
               "NORMLAB_SINGLE_PRECISION=OFF to verify gradients.\n");
#endif
  const auto results = normlab::run_gradient_suite(seeds, tolerance, seed);
  std::printf("%-16s %-14s %s\n", "op", "max_rel_err", "status");
  for (const auto& r : results)
    std::printf("%-16s %-14.3e %s\n", r.op.c_str(), r.max_rel_err,
                r.pass ? "ok" : "FAIL");
  return normlab::gradcheck_all_pass(results) ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override,
              const std::string& data_dir) {
  normlab::TrainConfig cfg = normlab::load_train_config(config_path);
  if (seed_override) cfg.seed = *seed_override;
  if (!data_dir.empty()) cfg.data_dir = data_dir;
  fs::create_directories(out_dir);

  const normlab::Cifar10 data = normlab::load_dataset(cfg);
  std::unique_ptr<normlab::Model> model;
  const normlab::RunResult run = normlab::train_run(cfg, data, &model);

  write_curves_csv(fs::path(out_dir) / "curves.csv", run);
  if (!run.statdiff.empty()) {
    std::ostringstream os;
    normlab::write_statdiff_csv(os, run.statdiff);
    write_file(fs::path(out_dir) / "statdiff.csv", os.str());
  }
  normlab::save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(),
                           cfg, *model);

  json summary;
  summary["config"] = normlab::to_json(cfg);
  summary["diverged"] = run.diverged;
  summary["final_test_acc"] = run.final_test_acc;
  summary["epochs"] = curves_to_json(run);
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");

  std::cout << (run.diverged ? "run diverged\n" : "run complete\n")
            << "final test accuracy: " << run.final_test_acc << "\n"
            << "artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed_override,
              const std::string& data_dir) {
  normlab::SweepConfig cfg = normlab::load_sweep_config(config_path);
  if (seed_override) cfg.base.seed = *seed_override;
  if (!data_dir.empty()) cfg.base.data_dir = data_dir;
  fs::create_directories(out_dir);

  const normlab::Cifar10 data = normlab::load_dataset(cfg.base);
  const auto results = normlab::run_singularity_sweep(cfg, data, &std::cout);

  std::ostringstream os;
  normlab::write_sweep_csv(os, results);
  write_file(fs::path(out_dir) / "sweep.csv", os.str());

  json cells = json::array();
  for (const auto& r : results)
    cells.push_back({{"sigma_mu", r.sigma_mu},
                     {"sigma_sigma", r.sigma_sigma},
                     {"seed", r.seed},
                     {"accuracy", r.accuracy},
                     {"failed", r.failed},
                     {"diverged", r.diverged},
                     {"distance", r.distance}});
  json summary;
  summary["cells"] = cells;
  summary["spearman_accuracy_vs_distance"] = normlab::sweep_spearman(results);
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << "sweep complete, artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_statdiff(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed_override,
                 const std::string& data_dir) {
  normlab::TraceConfig cfg = normlab::load_trace_config(config_path);
  if (seed_override) cfg.base.seed = *seed_override;
  if (!data_dir.empty()) cfg.base.data_dir = data_dir;
  fs::create_directories(out_dir);

  const normlab::Cifar10 data = normlab::load_dataset(cfg.base);
  const auto results = normlab::run_statdiff_trace(cfg, data, &std::cout);

  json summary;
  for (const auto& tr : results) {
    std::string fname = "statdiff_" + tr.name + ".csv";
    for (auto& ch : fname)
      if (ch == '+') ch = '_';
    std::ostringstream os;
    normlab::write_statdiff_csv(os, tr.run.statdiff);
    write_file(fs::path(out_dir) / fname, os.str());

    json epochs = json::array();
    for (const auto& rep : tr.run.statdiff)
      epochs.push_back({{"epoch", rep.epoch},
                        {"mean_over_groups", rep.mean_over_groups},
                        {"mean_over_layers", rep.mean_over_layers}});
    summary[tr.name] = {{"final_test_acc", tr.run.final_test_acc},
                        {"diverged", tr.run.diverged},
                        {"statdiff", epochs}};
  }
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
  std::cout << "trace complete, artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_probe(const std::string& checkpoint_path, const std::string& out_dir,
              const std::string& data_dir, double tau) {
  normlab::Checkpoint ck = normlab::load_checkpoint(checkpoint_path);
  if (!data_dir.empty()) ck.config.data_dir = data_dir;
  fs::create_directories(out_dir);

  const normlab::Cifar10 data = normlab::load_dataset(ck.config);
  const normlab::EliminationReport rep = normlab::elimination_probe(
      *ck.model, data.test, ck.config.eval_batch_size, tau);

  std::ostringstream os;
  normlab::write_elimination_csv(os, rep);
  write_file(fs::path(out_dir) / "elimination.csv", os.str());

  json layers = json::array();
  for (const auto& l : rep.layers)
    layers.push_back({{"layer", l.layer},
                      {"deactivated_fraction", l.deactivated_fraction},
                      {"near_deactivated_fraction", l.near_deactivated_fraction}});
  json summary;
  summary["tau"] = rep.tau;
  summary["layers"] = layers;
  write_file(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");

  std::cout << "probe complete, artifacts in " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"normalization layers, singularity diagnostics, and training experiments"};
  app.require_subcommand(1);
  app.fallthrough();  // --out/--seed may follow the subcommand

  std::string out_dir = "normlab-out";
  app.add_option("--out", out_dir, "output directory for artifacts");
  std::optional<std::uint64_t> seed_override;
  app.add_option("--seed", seed_override, "override the config seed");
  std::string data_dir;
  app.add_option("--data", data_dir,
                 "dataset directory (overrides config and NORMLAB_DATA)");

  auto* gc = app.add_subcommand("gradcheck", "run the full gradient suite");
  int gc_seeds = 10;
  double gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  gc->add_option("--seeds", gc_seeds, "random shapes per op");
  gc->add_option("--tol", gc_tol, "relative error tolerance");
  gc->add_option("--suite-seed", gc_seed, "base seed for the suite");

  std::string train_config;
  auto* tr = app.add_subcommand("train", "train one model from a JSON config");
  tr->add_option("--config", train_config, "train config path")->required();

  std::string sweep_config;
  auto* sw = app.add_subcommand("sweep", "fixed-statistics singularity sweep");
  sw->add_option("--config", sweep_config, "sweep config path")->required();

  std::string trace_config;
  auto* st = app.add_subcommand("statdiff", "per-epoch statdiff traces");
  st->add_option("--config", trace_config, "trace config path")->required();

  std::string probe_checkpoint;
  double probe_tau = 0.0;
  auto* pr = app.add_subcommand("probe", "elimination report for a checkpoint");
  pr->add_option("--checkpoint", probe_checkpoint, "checkpoint path")->required();
  pr->add_option("--tau", probe_tau, "near-deactivation threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gc->parsed()) return cmd_gradcheck(gc_seeds, gc_tol, gc_seed);
    if (tr->parsed())
      return cmd_train(train_config, out_dir, seed_override, data_dir);
    if (sw->parsed())
      return cmd_sweep(sweep_config, out_dir, seed_override, data_dir);
    if (st->parsed())
      return cmd_statdiff(trace_config, out_dir, seed_override, data_dir);
    if (pr->parsed())
      return cmd_probe(probe_checkpoint, out_dir, data_dir, probe_tau);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
