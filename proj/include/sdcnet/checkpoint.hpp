#pragma once

#include <string>

#include "sdcnet/config.hpp"
#include "sdcnet/model.hpp"

namespace sdcnet {

// Binary container, magic "SDCN1": embedded config JSON, then a name table of
// float64 tensors (parameters and buffers). Little-endian throughout.
void save_checkpoint(const std::string& path, Model& model, const ExperimentConfig& cfg);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  ExperimentConfig config;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace sdcnet
