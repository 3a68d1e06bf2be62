#pragma once

#include <cstdint>
#include <vector>

#include "sdcnet/tensor.hpp"

// Differentiable primitives. Every op computes its forward value and, when a
// tape is supplied and some input requires gradients, records an exact
// analytic backward rule. Passing tape = nullptr gives a plain inference op.
namespace sdcnet {
namespace ops {

// [m,k] x [k,n] -> [m,n]
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr);

// x [n,f] + bias [f], broadcast over rows.
TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias, Tape* tape = nullptr);

// Cross-correlation, kernel 3x3, stride 1, zero padding 1; spatial extents
// are preserved. x [n,c_in,h,w], kernels [c_out,c_in,3,3], bias [c_out].
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernels, const TensorPtr& bias,
                 Tape* tape = nullptr);

TensorPtr relu(const TensorPtr& x, Tape* tape = nullptr);

// 2x2 window, stride 2; spatial extents must be even.
TensorPtr maxpool2d(const TensorPtr& x, Tape* tape = nullptr);

// Per-channel batch normalization over [n,c,h,w]. In training mode the batch
// statistics are used and the running stats are updated in place with the
// given momentum; in eval mode the running stats are used.
TensorPtr batchnorm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                    const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                    double momentum = 0.1, double eps = 1e-5, Tape* tape = nullptr);

// Row-wise softmax over [n,k], max-subtracted.
TensorPtr softmax(const TensorPtr& logits, Tape* tape = nullptr);

// Mean negative log-likelihood of probs [n,k] at the label indices.
// Probabilities are floored at kProbFloor before the log.
constexpr double kProbFloor = 1e-12;
TensorPtr cross_entropy(const TensorPtr& probs, const std::vector<std::size_t>& labels,
                        Tape* tape = nullptr);

// Elementwise, same shape.
TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr);
// a + b⊙c in one op (the reparameterized-sampling shape).
TensorPtr muladd(const TensorPtr& a, const TensorPtr& b, const TensorPtr& c, Tape* tape = nullptr);
TensorPtr scale(const TensorPtr& a, double c, Tape* tape = nullptr);
TensorPtr softplus(const TensorPtr& a, Tape* tape = nullptr);

TensorPtr sum(const TensorPtr& a, Tape* tape = nullptr);

TensorPtr reshape(const TensorPtr& a, Shape shape, Tape* tape = nullptr);

}  // namespace ops

// Numerically stable softmax of one logit vector (inference utility).
std::vector<double> softmax_logits(const std::vector<double>& logits);

}  // namespace sdcnet
