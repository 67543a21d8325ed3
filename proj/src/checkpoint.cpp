#include "normlab/checkpoint.hpp"

#include <fstream>

#include "normlab/config.hpp"
#include "normlab/serialize.hpp"

namespace normlab {

namespace {
constexpr const char* kMagic = "normlab-checkpoint-v1";
}

void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint: " + path);
  write_string(os, kMagic);
  write_string(os, to_json(cfg).dump());
  model.save(os);
  if (!os) throw Error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  if (read_string(is) != kMagic)
    throw Error("not a normlab checkpoint: " + path);
  Checkpoint ck;
  ck.config = train_config_from_json(nlohmann::json::parse(read_string(is)));
  ck.model = build_model(ck.config.model, ck.config.seed);
  ck.model->load(is);
  return ck;
}

}  // namespace normlab
