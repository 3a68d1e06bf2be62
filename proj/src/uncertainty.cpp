#include "sdcnet/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sdcnet {

namespace {

void append_number(std::ostringstream& os, double v) {
  if (std::isnan(v)) {
    os << "null";
    return;
  }
  os.precision(17);
  os << v;
}

void append_array(std::ostringstream& os, const std::vector<double>& v) {
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    append_number(os, v[i]);
  }
  os << ']';
}

void append_array(std::ostringstream& os, const std::vector<std::size_t>& v) {
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  os << ']';
}

}  // namespace

double entropy_bits(const std::vector<double>& p) {
  double total = 0.0, h = 0.0;
  for (double v : p) {
    if (v < 0.0) throw DomainError("entropy: negative probability " + std::to_string(v));
    total += v;
    if (v > 0.0) h -= v * std::log2(v);
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DomainError("entropy: probabilities sum to " + std::to_string(total));
  return h;
}

double mutual_information_bits(const std::vector<std::vector<double>>& passes) {
  if (passes.empty()) throw DomainError("mutual information of zero passes");
  const std::size_t k = passes[0].size();
  std::vector<double> mean(k, 0.0);
  double mean_h = 0.0;
  for (const auto& row : passes) {
    if (row.size() != k) throw DimensionError("mutual information: ragged pass rows");
    for (std::size_t j = 0; j < k; ++j) mean[j] += row[j];
    mean_h += entropy_bits(row);
  }
  const double t = static_cast<double>(passes.size());
  for (double& v : mean) v /= t;
  mean_h /= t;
  double mi = entropy_bits(mean) - mean_h;
  if (mi < 0.0) mi = mi > -1e-12 ? 0.0 : mi;  // clamp Jensen round-off only
  return std::max(mi, 0.0);
}

PredictiveSummary summarize_passes(const std::vector<std::vector<double>>& passes,
                                   bool deterministic_model) {
  if (passes.empty()) throw DomainError("summarize_passes: no passes");
  const std::size_t t = passes.size(), k = passes[0].size();
  PredictiveSummary s;
  s.passes = passes;
  s.mean_softmax.assign(k, 0.0);
  s.votes.resize(t);
  s.class_counts.assign(k, 0);
  for (std::size_t i = 0; i < t; ++i) {
    const auto& row = passes[i];
    if (row.size() != k) throw DimensionError("summarize_passes: ragged pass rows");
    std::size_t arg = 0;
    for (std::size_t j = 0; j < k; ++j) {
      s.mean_softmax[j] += row[j];
      if (row[j] > row[arg]) arg = j;
    }
    s.votes[i] = arg;
    s.class_counts[arg]++;
  }
  for (double& v : s.mean_softmax) v /= static_cast<double>(t);
  s.popular_class = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (s.class_counts[j] > s.class_counts[s.popular_class]) s.popular_class = j;

  s.popular_softmax_values.resize(t);
  for (std::size_t i = 0; i < t; ++i) s.popular_softmax_values[i] = passes[i][s.popular_class];

  s.mutual_information = mutual_information_bits(passes);
  s.mean_entropy = 0.0;
  for (const auto& row : passes) s.mean_entropy += entropy_bits(row);
  s.mean_entropy /= static_cast<double>(t);

  s.std_per_class.assign(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double m2 = 0.0;
    for (std::size_t i = 0; i < t; ++i) {
      const double d = passes[i][j] - s.mean_softmax[j];
      m2 += d * d;
    }
    s.std_per_class[j] = std::sqrt(m2 / static_cast<double>(t));
  }
  s.deterministic_warning = deterministic_model && t > 1;
  return s;
}

std::string to_json(const PredictiveSummary& s, bool include_passes) {
  std::ostringstream os;
  os << "{\"mean_softmax\":";
  append_array(os, s.mean_softmax);
  os << ",\"votes\":";
  append_array(os, s.votes);
  os << ",\"popular_class\":" << s.popular_class;
  os << ",\"class_counts\":";
  append_array(os, s.class_counts);
  os << ",\"popular_softmax_values\":";
  append_array(os, s.popular_softmax_values);
  os << ",\"mutual_information_bits\":";
  append_number(os, s.mutual_information);
  os << ",\"mean_entropy_bits\":";
  append_number(os, s.mean_entropy);
  os << ",\"std_per_class\":";
  append_array(os, s.std_per_class);
  os << ",\"deterministic_warning\":" << (s.deterministic_warning ? "true" : "false");
  if (include_passes) {
    os << ",\"passes\":[";
    for (std::size_t i = 0; i < s.passes.size(); ++i) {
      if (i) os << ',';
      append_array(os, s.passes[i]);
    }
    os << ']';
  }
  os << '}';
  return os.str();
}

RejectionCurve rejection_analysis(const std::vector<PredictiveSummary>& summaries,
                                  const std::vector<std::size_t>& labels,
                                  const std::vector<double>& thresholds) {
  if (summaries.size() != labels.size())
    throw DimensionError("rejection_analysis: " + std::to_string(summaries.size()) +
                         " summaries vs " + std::to_string(labels.size()) + " labels");
  RejectionCurve curve;
  curve.thresholds = thresholds;
  const double n = static_cast<double>(summaries.size());
  for (double tau : thresholds) {
    std::size_t kept = 0, correct = 0;
    for (std::size_t i = 0; i < summaries.size(); ++i) {
      const auto& s = summaries[i];
      if (s.mean_softmax[s.popular_class] >= tau) {
        kept++;
        if (s.popular_class == labels[i]) correct++;
      }
    }
    curve.retained_fraction.push_back(n > 0 ? static_cast<double>(kept) / n : 0.0);
    curve.retained_accuracy.push_back(
        kept > 0 ? static_cast<double>(correct) / static_cast<double>(kept)
                 : std::numeric_limits<double>::quiet_NaN());
  }
  return curve;
}

std::vector<double> uniform_thresholds(std::size_t n_points) {
  std::vector<double> t(n_points);
  for (std::size_t i = 0; i < n_points; ++i)
    t[i] = static_cast<double>(i) / static_cast<double>(n_points - 1);
  return t;
}

std::string to_json(const RejectionCurve& c) {
  std::ostringstream os;
  os << "{\"thresholds\":";
  append_array(os, c.thresholds);
  os << ",\"retained_fraction\":";
  append_array(os, c.retained_fraction);
  os << ",\"retained_accuracy\":";
  append_array(os, c.retained_accuracy);
  os << '}';
  return os.str();
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> histogram_counts(
    const PredictiveSummary& summary, std::size_t n_bins) {
  if (n_bins < 1) throw DomainError("histogram_counts: n_bins must be >= 1");
  std::vector<std::size_t> bins(n_bins, 0);
  for (double v : summary.popular_softmax_values) {
    auto idx = static_cast<std::size_t>(std::floor(v * static_cast<double>(n_bins)));
    if (idx >= n_bins) idx = n_bins - 1;  // 1.0 lands in the last bin
    bins[idx]++;
  }
  return {summary.class_counts, bins};
}

PixelUncertaintyMap pixelwise_uncertainty(const std::vector<std::vector<double>>& passes,
                                          std::size_t classes, std::size_t height,
                                          std::size_t width,
                                          const std::vector<std::size_t>* ground_truth) {
  if (passes.empty()) throw DomainError("pixelwise_uncertainty: no passes");
  const std::size_t hw = height * width;
  for (const auto& pass : passes)
    if (pass.size() != classes * hw)
      throw DimensionError("pixelwise_uncertainty: pass size " + std::to_string(pass.size()) +
                           " vs expected " + std::to_string(classes * hw));
  if (ground_truth && ground_truth->size() != hw)
    throw DimensionError("pixelwise_uncertainty: ground truth size mismatch");

  PixelUncertaintyMap m;
  m.height = height;
  m.width = width;
  m.classes = classes;
  m.mean_prediction.assign(classes * hw, 0.0);
  m.std_per_class.assign(classes * hw, 0.0);
  m.mutual_information.assign(hw, 0.0);
  m.popular_vote.assign(hw, 0);
  const std::size_t t = passes.size();

  std::vector<std::vector<double>> pixel_rows(t, std::vector<double>(classes));
  for (std::size_t px = 0; px < hw; ++px) {
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = 0; k < classes; ++k) pixel_rows[i][k] = passes[i][k * hw + px];
    PredictiveSummary s = summarize_passes(pixel_rows);
    for (std::size_t k = 0; k < classes; ++k) {
      m.mean_prediction[k * hw + px] = s.mean_softmax[k];
      m.std_per_class[k * hw + px] = s.std_per_class[k];
    }
    m.mutual_information[px] = s.mutual_information;
    m.popular_vote[px] = s.popular_class;
    if (ground_truth) {
      if ((*ground_truth)[px] >= classes)
        throw DomainError("pixelwise_uncertainty: ground truth class out of range");
      if (m.abs_error.empty()) m.abs_error.assign(hw, 0.0);
      // Probability mass assigned away from the true class; for two classes
      // this equals |mean foreground prediction - truth|.
      m.abs_error[px] = 1.0 - s.mean_softmax[(*ground_truth)[px]];
    }
  }
  return m;
}

std::string to_json(const PixelUncertaintyMap& m) {
  std::ostringstream os;
  os << "{\"height\":" << m.height << ",\"width\":" << m.width << ",\"classes\":" << m.classes;
  os << ",\"mean_prediction\":";
  append_array(os, m.mean_prediction);
  os << ",\"std_per_class\":";
  append_array(os, m.std_per_class);
  os << ",\"mutual_information\":";
  append_array(os, m.mutual_information);
  os << ",\"popular_vote\":";
  append_array(os, m.popular_vote);
  if (!m.abs_error.empty()) {
    os << ",\"abs_error\":";
    append_array(os, m.abs_error);
  }
  os << '}';
  return os.str();
}

double dice_score(const std::vector<bool>& pred_mask, const std::vector<bool>& true_mask) {
  if (pred_mask.size() != true_mask.size())
    throw DimensionError("dice_score: mask sizes " + std::to_string(pred_mask.size()) + " vs " +
                         std::to_string(true_mask.size()));
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred_mask.size(); ++i) {
    a += pred_mask[i];
    b += true_mask[i];
    inter += pred_mask[i] && true_mask[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

}  // namespace sdcnet
