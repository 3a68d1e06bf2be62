#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sdcnet/common.hpp"

namespace sdcnet {

// Shannon entropy in bits; 0*log(0) := 0. Entries must be >= 0 and sum to 1
// within 1e-9.
double entropy_bits(const std::vector<double>& p);

// H[mean row] - mean_t H[row_t], clamped to [0, inf). passes is row-major
// [t][k].
double mutual_information_bits(const std::vector<std::vector<double>>& passes);

// Aggregate of T stochastic forward passes for one input.
struct PredictiveSummary {
  std::vector<std::vector<double>> passes;    // [T][K] softmax rows
  std::vector<double> mean_softmax;           // [K]
  std::vector<std::size_t> votes;             // [T] per-pass argmax
  std::size_t popular_class = 0;              // argmax of class_counts, tie -> lowest
  std::vector<std::size_t> class_counts;      // [K]
  std::vector<double> popular_softmax_values; // [T] softmax of popular_class per pass
  double mutual_information = 0.0;            // bits
  double mean_entropy = 0.0;                  // bits, mean over passes of H[p_t]
  std::vector<double> std_per_class;          // [K] population std over passes
  bool deterministic_warning = false;         // model was deterministic but T > 1
};

PredictiveSummary summarize_passes(const std::vector<std::vector<double>>& passes,
                                   bool deterministic_model = false);

// JSON object on one line; the raw pass matrix is included only on request
// (it dominates the file size at T=100).
std::string to_json(const PredictiveSummary& s, bool include_passes = false);

struct RejectionCurve {
  std::vector<double> thresholds;
  std::vector<double> retained_fraction;
  std::vector<double> retained_accuracy;  // NaN marks an empty retained set
};

// Retain samples whose mean popular-class softmax >= threshold; report the
// retained fraction and the popular-vote accuracy on the retained set.
RejectionCurve rejection_analysis(const std::vector<PredictiveSummary>& summaries,
                                  const std::vector<std::size_t>& labels,
                                  const std::vector<double>& thresholds);

std::vector<double> uniform_thresholds(std::size_t n_points = 101);

std::string to_json(const RejectionCurve& c);

// class_counts from the summary plus a histogram of the popular-class softmax
// values over n_bins equal-width bins on [0,1]; bins are left-closed, the
// last bin also contains 1.0.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> histogram_counts(
    const PredictiveSummary& summary, std::size_t n_bins);

// Per-pixel metric maps for segmentation-style outputs. passes is
// [T][K][h*w] flattened row-major.
struct PixelUncertaintyMap {
  std::size_t height = 0, width = 0, classes = 0;
  std::vector<double> mean_prediction;      // [K][h*w]
  std::vector<double> std_per_class;        // [K][h*w]
  std::vector<double> mutual_information;   // [h*w]
  std::vector<std::size_t> popular_vote;    // [h*w]
  std::vector<double> abs_error;            // [h*w]; empty when no ground truth
};

PixelUncertaintyMap pixelwise_uncertainty(const std::vector<std::vector<double>>& passes,
                                          std::size_t classes, std::size_t height,
                                          std::size_t width,
                                          const std::vector<std::size_t>* ground_truth = nullptr);

std::string to_json(const PixelUncertaintyMap& m);

// 2|A∩B| / (|A|+|B|); both masks empty counts as perfect agreement (1).
double dice_score(const std::vector<bool>& pred_mask, const std::vector<bool>& true_mask);

}  // namespace sdcnet
