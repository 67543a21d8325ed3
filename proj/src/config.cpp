#include "normlab/config.hpp"

#include <fstream>
#include <set>

namespace normlab {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
  if (!j.is_object())
    throw InvalidConfig(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key))
      throw InvalidConfig(where + ": unknown key \"" + key + "\"");
}

template <class T>
void read_into(const json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end()) out = it->get<T>();
}

NormalizerSpec normalizer_from_json(const json& j) {
  require_keys(j,
               {"kind", "groups", "eps", "momentum", "update_rate", "sigma_mu",
                "sigma_sigma"},
               "normalizer");
  NormalizerSpec spec;
  if (const auto it = j.find("kind"); it != j.end())
    spec.kind = norm_kind_from_string(it->get<std::string>());
  read_into(j, "groups", spec.groups);
  read_into(j, "eps", spec.eps);
  read_into(j, "momentum", spec.momentum);
  read_into(j, "update_rate", spec.update_rate);
  read_into(j, "sigma_mu", spec.sigma_mu);
  read_into(j, "sigma_sigma", spec.sigma_sigma);
  return spec;
}

SyntheticSpec synthetic_from_json(const json& j) {
  require_keys(j,
               {"classes", "per_class_train", "per_class_test", "seed",
                "signal", "noise"},
               "synthetic");
  SyntheticSpec spec;
  read_into(j, "classes", spec.classes);
  read_into(j, "per_class_train", spec.per_class_train);
  read_into(j, "per_class_test", spec.per_class_test);
  read_into(j, "seed", spec.seed);
  read_into(j, "signal", spec.signal);
  read_into(j, "noise", spec.noise);
  return spec;
}

SgdConfig sgd_from_json(const json& j) {
  require_keys(j, {"lr", "momentum", "weight_decay"}, "sgd");
  SgdConfig cfg;
  read_into(j, "lr", cfg.lr);
  read_into(j, "momentum", cfg.momentum);
  read_into(j, "weight_decay", cfg.weight_decay);
  if (!(cfg.lr > 0) || !std::isfinite(cfg.lr))
    throw InvalidConfig("sgd: lr must be finite and positive");
  if (cfg.momentum < 0 || cfg.momentum >= 1)
    throw InvalidConfig("sgd: momentum must be in [0, 1)");
  if (cfg.weight_decay < 0)
    throw InvalidConfig("sgd: weight_decay must be non-negative");
  return cfg;
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require_keys(j,
               {"model", "resnet_n", "num_classes", "normalizer", "ws",
                "epochs", "batch_size", "sgd", "cosine_lr", "seed", "augment",
                "dataset", "data_dir", "synthetic", "record_stats",
                "record_momentum", "record_site", "record_groups",
                "eval_batch_size", "threads"},
               "train config");
  TrainConfig cfg;
  read_into(j, "model", cfg.model.arch);
  read_into(j, "resnet_n", cfg.model.resnet_n);
  read_into(j, "num_classes", cfg.model.num_classes);
  if (const auto it = j.find("normalizer"); it != j.end())
    cfg.model.norm = normalizer_from_json(*it);
  // Batch-channel configurations keep weight standardization on unless the
  // config says otherwise.
  if (!j.contains("ws") && (cfg.model.norm.kind == NormKind::bcn_large ||
                            cfg.model.norm.kind == NormKind::bcn_micro))
    cfg.model.ws = true;
  read_into(j, "ws", cfg.model.ws);
  read_into(j, "epochs", cfg.epochs);
  read_into(j, "batch_size", cfg.batch_size);
  if (const auto it = j.find("sgd"); it != j.end()) cfg.sgd = sgd_from_json(*it);
  read_into(j, "cosine_lr", cfg.cosine_lr);
  read_into(j, "seed", cfg.seed);
  read_into(j, "augment", cfg.augment);
  read_into(j, "dataset", cfg.dataset);
  read_into(j, "data_dir", cfg.data_dir);
  if (const auto it = j.find("synthetic"); it != j.end())
    cfg.synthetic = synthetic_from_json(*it);
  read_into(j, "record_stats", cfg.record_stats);
  read_into(j, "record_momentum", cfg.record_momentum);
  if (const auto it = j.find("record_site"); it != j.end()) {
    const std::string site = it->get<std::string>();
    if (site == "conv")
      cfg.record_site = RecordSite::conv_output;
    else if (site == "norm")
      cfg.record_site = RecordSite::norm_output;
    else
      throw InvalidConfig("record_site must be \"conv\" or \"norm\"");
  }
  read_into(j, "record_groups", cfg.record_groups);
  read_into(j, "eval_batch_size", cfg.eval_batch_size);
  read_into(j, "threads", cfg.threads);
  if (cfg.model.arch != "plain4" && cfg.model.arch != "miniresnet")
    throw InvalidConfig("model must be \"plain4\" or \"miniresnet\"");
  if (cfg.dataset != "cifar10" && cfg.dataset != "synthetic")
    throw InvalidConfig("dataset must be \"cifar10\" or \"synthetic\"");
  return cfg;
}

SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  require_keys(j,
               {"sigma_mu_grid", "sigma_sigma_grid", "seeds_per_cell",
                "failure_threshold", "workers", "train"},
               "sweep config");
  SweepConfig cfg;
  read_into(j, "sigma_mu_grid", cfg.sigma_mu_grid);
  read_into(j, "sigma_sigma_grid", cfg.sigma_sigma_grid);
  read_into(j, "seeds_per_cell", cfg.seeds_per_cell);
  read_into(j, "failure_threshold", cfg.failure_threshold);
  read_into(j, "workers", cfg.workers);
  if (const auto it = j.find("train"); it != j.end())
    cfg.base = train_config_from_json(*it);
  for (const double v : cfg.sigma_mu_grid)
    if (v < 0) throw InvalidConfig("sigma_mu_grid values must be >= 0");
  for (const double v : cfg.sigma_sigma_grid)
    if (v < 0) throw InvalidConfig("sigma_sigma_grid values must be >= 0");
  return cfg;
}

TraceConfig trace_config_from_json(const nlohmann::json& j) {
  require_keys(j, {"variants", "workers", "train"}, "trace config");
  TraceConfig cfg;
  read_into(j, "variants", cfg.variants);
  read_into(j, "workers", cfg.workers);
  if (const auto it = j.find("train"); it != j.end())
    cfg.base = train_config_from_json(*it);
  return cfg;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["model"] = cfg.model.arch;
  j["resnet_n"] = cfg.model.resnet_n;
  j["num_classes"] = cfg.model.num_classes;
  j["normalizer"] = {
      {"kind", to_string(cfg.model.norm.kind)},
      {"groups", cfg.model.norm.groups},
      {"eps", cfg.model.norm.eps},
      {"momentum", cfg.model.norm.momentum},
      {"update_rate", cfg.model.norm.update_rate},
      {"sigma_mu", cfg.model.norm.sigma_mu},
      {"sigma_sigma", cfg.model.norm.sigma_sigma},
  };
  j["ws"] = cfg.model.ws;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["sgd"] = {{"lr", cfg.sgd.lr},
              {"momentum", cfg.sgd.momentum},
              {"weight_decay", cfg.sgd.weight_decay}};
  j["cosine_lr"] = cfg.cosine_lr;
  j["seed"] = cfg.seed;
  j["augment"] = cfg.augment;
  j["dataset"] = cfg.dataset;
  j["data_dir"] = cfg.data_dir;
  j["synthetic"] = {{"classes", cfg.synthetic.classes},
                    {"per_class_train", cfg.synthetic.per_class_train},
                    {"per_class_test", cfg.synthetic.per_class_test},
                    {"seed", cfg.synthetic.seed},
                    {"signal", cfg.synthetic.signal},
                    {"noise", cfg.synthetic.noise}};
  j["record_stats"] = cfg.record_stats;
  j["record_momentum"] = cfg.record_momentum;
  j["record_site"] =
      cfg.record_site == RecordSite::conv_output ? "conv" : "norm";
  j["record_groups"] = cfg.record_groups;
  j["eval_batch_size"] = cfg.eval_batch_size;
  j["threads"] = cfg.threads;
  return j;
}

namespace {

nlohmann::json parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("config parse error in " + path + ": " + e.what());
  }
}

}  // namespace

TrainConfig load_train_config(const std::string& path) {
  return train_config_from_json(parse_file(path));
}

SweepConfig load_sweep_config(const std::string& path) {
  return sweep_config_from_json(parse_file(path));
}

TraceConfig load_trace_config(const std::string& path) {
  return trace_config_from_json(parse_file(path));
}

}  // namespace normlab
