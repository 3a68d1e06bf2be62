#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sdcnet/common.hpp"

namespace sdcnet {

// One training/evaluation run. Parsed from JSON or flat key=value files;
// serialize() emits the canonical JSON form.
struct ExperimentConfig {
  std::string method = "deterministic";
  std::optional<double> p;  // leave-out rate; required for mask methods, absent for bbb
  std::string architecture = "mnist_cnn";
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 1.0;
  std::size_t bbb_train_samples = 5;
  std::size_t val_passes = 25;
  std::size_t test_passes = 100;
  std::uint64_t seed = 0;
  std::string dataset = "mnist";  // mnist | blobs
  std::string data_dir = "data/mnist";
  std::string output_dir = "runs/out";
  std::size_t train_items = 5000;
  std::size_t val_items = 1000;
  std::size_t test_items = 1000;
  std::string kl_schedule = "uniform";  // uniform | geometric
  std::size_t blob_classes = 4;
  double blob_noise = 0.02;
  std::size_t eval_chunk = 500;   // images per evaluation slab
  std::size_t threads = 1;        // worker threads for MC passes
  bool dump_passes = false;       // include raw pass matrices in summaries.jsonl

  double leave_out_rate() const { return p.value_or(0.0); }

  void validate() const;
};

// Accepts a JSON object or flat key=value lines (decided by the first
// non-space character).
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::string serialize_config(const ExperimentConfig& cfg);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Paper-scale protocol: full split, 500 epochs, learning rate 1e-3.
void apply_paper_scale(ExperimentConfig& cfg);

}  // namespace sdcnet
