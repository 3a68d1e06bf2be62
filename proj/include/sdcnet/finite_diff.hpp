#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sdcnet/params.hpp"
#include "sdcnet/rng.hpp"

namespace sdcnet {

struct FiniteDiffReport {
  struct Entry {
    std::string param;
    std::size_t coords_checked = 0;
    double max_rel_err = 0.0;
  };
  std::vector<Entry> entries;
  double worst = 0.0;

  bool pass(double tol) const { return worst < tol; }
};

// Central-difference check of analytic gradients.
//
// `loss` must be a pure function of the current parameter values: called with
// with_grad=true it runs forward+backward and leaves gradients on the params;
// with with_grad=false it only returns the loss value. For large parameters
// only `max_coords_per_param` randomly chosen coordinates are probed
// (seeded, so the probe set is reproducible). Differences below `atol` count
// as zero: at step 1e-6 the central-difference noise floor is ~1e-10, so
// coordinates whose true gradient vanishes (e.g. masked-off weights) would
// otherwise report pure round-off as error.
inline FiniteDiffReport finite_diff_check(const std::function<double(bool with_grad)>& loss,
                                          ParamStore& params, double step = 1e-6,
                                          std::size_t max_coords_per_param = 24,
                                          std::uint64_t probe_seed = 17, double atol = 1e-8) {
  params.zero_grads();
  (void)loss(true);

  std::vector<std::pair<std::string, std::vector<double>>> analytic;
  for (const auto& [name, t] : params.params()) {
    t->ensure_grad();
    analytic.emplace_back(name, t->grad);
  }

  FiniteDiffReport report;
  std::size_t pi = 0;
  for (const auto& [name, t] : params.params()) {
    const std::vector<double>& ag = analytic[pi++].second;
    std::vector<std::size_t> coords;
    if (t->size() <= max_coords_per_param) {
      for (std::size_t i = 0; i < t->size(); ++i) coords.push_back(i);
    } else {
      Rng rng(derive_seed({probe_seed, pi}));
      for (std::size_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<std::size_t>(rng.below(t->size())));
    }
    FiniteDiffReport::Entry entry{name, coords.size(), 0.0};
    for (std::size_t c : coords) {
      const double saved = t->data[c];
      t->data[c] = saved + step;
      const double up = loss(false);
      t->data[c] = saved - step;
      const double down = loss(false);
      t->data[c] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(ag[c] - numeric);
      if (err <= atol) continue;
      const double denom = std::max({std::abs(ag[c]), std::abs(numeric), 1e-6});
      entry.max_rel_err = std::max(entry.max_rel_err, err / denom);
    }
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace sdcnet
