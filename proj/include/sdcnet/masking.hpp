#pragma once

#include <cstdint>
#include <string>

#include "sdcnet/ops.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

enum class MaskMethod { dropout, dropconnect, sdc, sdc_strong, sdc_weak };

std::string to_string(MaskMethod m);
MaskMethod mask_method_from_string(const std::string& s);

// The law of one stochastic mask: with probability p an entry is perturbed
// (zeroed for dropout/dropconnect, drawn from U(a,b) for the sdc family),
// otherwise it stays 1. The uniform bounds are fixed per method:
// sdc (0,1), sdc_strong (0,0.5), sdc_weak (0.5,1).
struct MaskSpec {
  MaskMethod method = MaskMethod::dropout;
  double p = 0.0;          // leave-out rate in [0,1]
  double lo = 0.0, hi = 1.0;  // uniform bounds; unused for dropout/dropconnect

  static MaskSpec make(MaskMethod method, double p);
  // sdc law with explicit bounds; used to study degenerate limits.
  static MaskSpec make_sdc_with_bounds(double p, double lo, double hi);

  bool is_soft() const {
    return method == MaskMethod::sdc || method == MaskMethod::sdc_strong ||
           method == MaskMethod::sdc_weak;
  }
};

// (master seed, pass index, layer index): two masks with equal lineage are
// bit-identical.
struct SeedLineage {
  std::uint64_t master = 0;
  std::uint64_t pass = 0;
  std::uint64_t layer = 0;

  std::uint64_t seed(std::uint64_t stream_tag) const {
    return derive_seed({master, stream_tag, pass, layer});
  }
};

struct MaskTensor {
  TensorPtr values;
  SeedLineage lineage;
};

// Per entry: keep 1 with probability 1-p, otherwise 0 (dropout/dropconnect)
// or a U(lo,hi) draw (sdc family).
MaskTensor sample_mask(const MaskSpec& spec, const Shape& shape, const SeedLineage& lineage,
                       std::uint64_t stream_tag = stream::kTrainMask);

// E[mask entry]: 1-p for the hard laws, (1-p) + p*(lo+hi)/2 for the soft ones.
// Masked forwards divide by this so the pre-activation expectation is kept.
double expected_mask_value(const MaskSpec& spec);

// v_in [n,in] * (mask ⊙ w) [in,out] / E[mask] + bias. The divisor applies to
// the product only; the bias is not masked and enters unscaled.
TensorPtr masked_dense_forward(const TensorPtr& v_in, const TensorPtr& w, const TensorPtr& bias,
                               const MaskSpec& spec, const MaskTensor& mask, Tape* tape = nullptr);

// conv2d with kernels ⊙ mask / E[mask].
TensorPtr masked_conv_forward(const TensorPtr& x, const TensorPtr& kernels, const TensorPtr& bias,
                              const MaskSpec& spec, const MaskTensor& mask, Tape* tape = nullptr);

// activations ⊙ mask / (1-p); mask shaped like one activation sample
// (broadcast across the leading batch dimension).
TensorPtr dropout_forward(const TensorPtr& activations, const MaskSpec& spec,
                          const MaskTensor& mask, Tape* tape = nullptr);

// Regression probe that the sdc sampler degenerates to dropconnect as the
// uniform law collapses toward 0.
struct DegenerateEquivalenceReport {
  double fraction_ones_sdc = 0.0;
  double fraction_ones_dropconnect = 0.0;
  double max_cdf_distance = 0.0;  // sup-norm between the two empirical CDFs
};

DegenerateEquivalenceReport degenerate_equivalence_check(std::size_t n_samples, double p,
                                                         double epsilon = 1e-9,
                                                         std::uint64_t seed = 2024);

}  // namespace sdcnet
