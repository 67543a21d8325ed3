#pragma once

#include <memory>
#include <string>

#include "normlab/train.hpp"

namespace normlab {

struct Checkpoint {
  TrainConfig config;           // enough to rebuild the model and its dataset
  std::unique_ptr<Model> model;
};

/// Binary file: magic line, JSON-encoded train config, then the model's
/// parameters and normalizer state.
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const Model& model);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace normlab
