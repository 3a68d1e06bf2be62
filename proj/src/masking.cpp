#include "sdcnet/masking.hpp"

#include <algorithm>
#include <cmath>

namespace sdcnet {

std::string to_string(MaskMethod m) {
  switch (m) {
    case MaskMethod::dropout: return "dropout";
    case MaskMethod::dropconnect: return "dropconnect";
    case MaskMethod::sdc: return "sdc";
    case MaskMethod::sdc_strong: return "sdc_strong";
    case MaskMethod::sdc_weak: return "sdc_weak";
  }
  return "?";
}

MaskMethod mask_method_from_string(const std::string& s) {
  if (s == "dropout") return MaskMethod::dropout;
  if (s == "dropconnect") return MaskMethod::dropconnect;
  if (s == "sdc") return MaskMethod::sdc;
  if (s == "sdc_strong") return MaskMethod::sdc_strong;
  if (s == "sdc_weak") return MaskMethod::sdc_weak;
  throw ConfigError("unknown mask method: " + s);
}

MaskSpec MaskSpec::make(MaskMethod method, double p) {
  if (p < 0.0 || p > 1.0)
    throw ConfigError("leave-out rate must be in [0,1], got " + std::to_string(p));
  MaskSpec spec;
  spec.method = method;
  spec.p = p;
  switch (method) {
    case MaskMethod::sdc: spec.lo = 0.0; spec.hi = 1.0; break;
    case MaskMethod::sdc_strong: spec.lo = 0.0; spec.hi = 0.5; break;
    case MaskMethod::sdc_weak: spec.lo = 0.5; spec.hi = 1.0; break;
    default: spec.lo = 0.0; spec.hi = 1.0; break;
  }
  return spec;
}

MaskSpec MaskSpec::make_sdc_with_bounds(double p, double lo, double hi) {
  MaskSpec spec = make(MaskMethod::sdc, p);
  if (!(0.0 <= lo && lo < hi && hi <= 1.0))
    throw ConfigError("uniform bounds must satisfy 0 <= a < b <= 1, got (" + std::to_string(lo) +
                      "," + std::to_string(hi) + ")");
  spec.lo = lo;
  spec.hi = hi;
  return spec;
}

MaskTensor sample_mask(const MaskSpec& spec, const Shape& shape, const SeedLineage& lineage,
                       std::uint64_t stream_tag) {
  if (spec.is_soft() && !(0.0 <= spec.lo && spec.lo < spec.hi && spec.hi <= 1.0))
    throw ConfigError("invalid uniform bounds (" + std::to_string(spec.lo) + "," +
                      std::to_string(spec.hi) + ")");
  MaskTensor mask;
  mask.lineage = lineage;
  mask.values = make_tensor(shape);
  Rng rng(lineage.seed(stream_tag));
  double* v = mask.values->data.data();
  const std::size_t n = mask.values->size();
  if (spec.is_soft()) {
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      v[i] = u < spec.p ? rng.uniform(spec.lo, spec.hi) : 1.0;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.uniform() < spec.p ? 0.0 : 1.0;
  }
  return mask;
}

double expected_mask_value(const MaskSpec& spec) {
  if (spec.is_soft()) return (1.0 - spec.p) + spec.p * 0.5 * (spec.lo + spec.hi);
  return 1.0 - spec.p;
}

namespace {

// mask / E[mask] as a constant (non-differentiated) tensor.
TensorPtr normalized_mask(const MaskSpec& spec, const MaskTensor& mask, const Shape& expect) {
  require_shape(mask.values->shape == expect, "mask shape", mask.values->shape, expect);
  const double e = expected_mask_value(spec);
  if (e <= 0.0)
    throw NumericalError("degenerate mask: expected mask value is 0 (method " +
                         to_string(spec.method) + ", p=" + std::to_string(spec.p) + ")");
  auto scaled = make_tensor(mask.values->shape);
  for (std::size_t i = 0; i < scaled->size(); ++i) scaled->data[i] = mask.values->data[i] / e;
  return scaled;
}

}  // namespace

TensorPtr masked_dense_forward(const TensorPtr& v_in, const TensorPtr& w, const TensorPtr& bias,
                               const MaskSpec& spec, const MaskTensor& mask, Tape* tape) {
  auto mw = ops::mul(w, normalized_mask(spec, mask, w->shape), tape);
  return ops::add_bias(ops::matmul(v_in, mw, tape), bias, tape);
}

TensorPtr masked_conv_forward(const TensorPtr& x, const TensorPtr& kernels, const TensorPtr& bias,
                              const MaskSpec& spec, const MaskTensor& mask, Tape* tape) {
  auto mk = ops::mul(kernels, normalized_mask(spec, mask, kernels->shape), tape);
  return ops::conv2d(x, mk, bias, tape);
}

TensorPtr dropout_forward(const TensorPtr& activations, const MaskSpec& spec,
                          const MaskTensor& mask, Tape* tape) {
  const Shape& s = activations->shape;
  const Shape& ms = mask.values->shape;
  const std::size_t msize = mask.values->size();
  if (s.size() < 2 || numel(Shape(s.begin() + 1, s.end())) != msize)
    throw DimensionError("dropout mask " + shape_str(ms) + " does not match activations " +
                         shape_str(s) + " per sample");
  const double e = expected_mask_value(spec);
  if (e <= 0.0) throw NumericalError("degenerate dropout mask: p=1");
  // Broadcast the per-sample mask across the batch as a constant factor.
  auto factor = make_tensor(s);
  const std::size_t batch = s[0];
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < msize; ++i)
      factor->data[b * msize + i] = mask.values->data[i] / e;
  return ops::mul(activations, factor, tape);
}

DegenerateEquivalenceReport degenerate_equivalence_check(std::size_t n_samples, double p,
                                                         double epsilon, std::uint64_t seed) {
  MaskSpec sdc = MaskSpec::make_sdc_with_bounds(p, 0.0, epsilon);
  MaskSpec dc = MaskSpec::make(MaskMethod::dropconnect, p);
  SeedLineage lin_sdc{seed, 0, 0}, lin_dc{seed, 0, 1};
  auto ms = sample_mask(sdc, {n_samples}, lin_sdc);
  auto md = sample_mask(dc, {n_samples}, lin_dc);

  DegenerateEquivalenceReport report;
  auto frac_ones = [](const TensorPtr& t) {
    std::size_t ones = 0;
    for (double v : t->data) ones += v == 1.0;
    return static_cast<double>(ones) / static_cast<double>(t->size());
  };
  report.fraction_ones_sdc = frac_ones(ms.values);
  report.fraction_ones_dropconnect = frac_ones(md.values);

  // Entries below epsilon are the gated draws of both laws; snap them to 0
  // and compare the two empirical CDFs on a fixed grid over [0,1].
  std::vector<double> a = ms.values->data, b = md.values->data;
  for (double& v : a)
    if (v < epsilon) v = 0.0;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cdf = [](const std::vector<double>& sorted, double x) {
    return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin()) /
           static_cast<double>(sorted.size());
  };
  for (int i = 0; i <= 200; ++i) {
    const double x = static_cast<double>(i) / 200.0;
    report.max_cdf_distance = std::max(report.max_cdf_distance, std::abs(cdf(a, x) - cdf(b, x)));
  }
  return report;
}

}  // namespace sdcnet
