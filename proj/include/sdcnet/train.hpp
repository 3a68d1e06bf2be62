#pragma once

#include <string>
#include <vector>

#include "sdcnet/config.hpp"
#include "sdcnet/dataset.hpp"
#include "sdcnet/model.hpp"
#include "sdcnet/uncertainty.hpp"

namespace sdcnet {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;     // mean objective over batches
  double val_accuracy = 0.0;   // popular-vote accuracy; NaN when no validation set
  double val_mean_mi_bits = 0.0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<EpochLog> epochs;
};

// Runs the configured training loop and writes checkpoint.bin plus
// train_log.csv into cfg.output_dir.
TrainResult train(const ExperimentConfig& cfg);

struct EvalResult {
  double accuracy = 0.0;        // popular-vote accuracy on the test split
  double mean_mi_bits = 0.0;
  double mean_entropy_bits = 0.0;
  std::vector<PredictiveSummary> summaries;
  std::vector<std::size_t> labels;
  RejectionCurve rejection;
};

// Monte-Carlo evaluation of a trained checkpoint on the test split. Writes
// metrics.csv, summaries.jsonl, rejection_curve.csv and rejection_curve.json
// into cfg.output_dir when write_outputs is set.
EvalResult evaluate(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                    bool write_outputs = true);

struct CompareRow {
  std::string method;
  double p = 0.0;
  std::size_t runs = 0;
  double accuracy_mean = 0.0, accuracy_sd = 0.0;
  double mi_mean = 0.0, mi_sd = 0.0;
};

struct CompareReport {
  std::vector<CompareRow> rows;
  std::vector<std::string> run_dirs;
};

// Trains and evaluates every config (n_workers in parallel), then aggregates
// per (method, p) over seeds. All configs must describe the same dataset.
// Writes comparison.csv, comparison.json and rejection_curves.csv into
// out_dir.
CompareReport compare_methods(const std::vector<ExperimentConfig>& configs,
                              const std::string& out_dir, std::size_t n_workers = 1);

// Dataset described by the config (mnist files or synthetic blobs).
Dataset load_split(const ExperimentConfig& cfg, Split split);

// Gather rows of a dataset into one batch tensor plus labels.
std::pair<TensorPtr, std::vector<std::size_t>> make_batch(const Dataset& ds,
                                                          const std::vector<std::size_t>& indices);

double popular_vote_accuracy(const std::vector<PredictiveSummary>& summaries,
                             const std::vector<std::size_t>& labels);

}  // namespace sdcnet
