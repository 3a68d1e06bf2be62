#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "sdcnet/common.hpp"
#include "sdcnet/rng.hpp"

namespace sdcnet {

// Dense float64 tensor, row-major, NCHW where 4-d. Gradient storage lives on
// the tensor itself and is materialized lazily by the backward pass.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty, or data.size() once materialized

  Tensor() = default;
  Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }

  void zero_grad() {
    if (!grad.empty()) grad.assign(grad.size(), 0.0);
  }

  double scalar() const {
    if (data.size() != 1) throw DimensionError("expected scalar, got " + shape_str(shape));
    return data[0];
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Shape shape, double fill = 0.0) {
  return std::make_shared<Tensor>(std::move(shape), fill);
}

inline TensorPtr make_tensor(Shape shape, std::vector<double> values) {
  return std::make_shared<Tensor>(std::move(shape), std::move(values));
}

inline TensorPtr make_scalar(double v) { return make_tensor({1}, std::vector<double>{v}); }

inline TensorPtr make_param(Shape shape, double fill = 0.0) {
  auto t = make_tensor(std::move(shape), fill);
  t->requires_grad = true;
  return t;
}

inline bool has_nan(const Tensor& t) {
  for (double v : t.data)
    if (std::isnan(v)) return true;
  return false;
}

// Record of one forward primitive: a closure that routes the output gradient
// back to the inputs. Nodes are appended in execution order, so the list is
// topologically sorted by construction.
class Tape {
 public:
  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
  void backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw DimensionError("backward needs a scalar loss, got " + shape_str(loss->shape));
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    run_reverse();
  }

  // Sweeps the tape using gradients already present on output tensors.
  // Used to chain a sub-tape onto gradients accumulated by later tapes.
  void backward_from_existing() { run_reverse(); }

  void clear() { nodes_.clear(); }

 private:
  void run_reverse() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  std::vector<std::function<void()>> nodes_;
};

// Debug-build guard: forward ops call this on their outputs.
inline void check_finite_debug(const Tensor& t, const char* op) {
#ifndef NDEBUG
  if (has_nan(t)) throw NumericalError(std::string("NaN produced by ") + op);
#else
  (void)t;
  (void)op;
#endif
}

}  // namespace sdcnet
