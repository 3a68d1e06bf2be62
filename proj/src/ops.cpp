#include "sdcnet/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sdcnet {
namespace ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool want_grad(Tape* tape, std::initializer_list<const TensorPtr*> inputs) {
  if (!tape) return false;
  for (const TensorPtr* t : inputs)
    if ((*t)->requires_grad) return true;
  return false;
}

// im2col for 3x3/stride 1/pad 1: col is [c_in*9, h*w] for one image.
void im2col_3x3(const double* x, std::size_t c_in, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    const double* xc = x + ci * hw;
    for (int dh = -1; dh <= 1; ++dh) {
      for (int dw = -1; dw <= 1; ++dw) {
        double* dst = col + (ci * 9 + static_cast<std::size_t>((dh + 1) * 3 + (dw + 1))) * hw;
        for (std::size_t r = 0; r < h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + dh;
          double* drow = dst + r * w;
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) {
            std::memset(drow, 0, w * sizeof(double));
            continue;
          }
          const double* srow = xc + static_cast<std::size_t>(sr) * w;
          if (dw < 0) {
            drow[0] = 0.0;
            std::memcpy(drow + 1, srow, (w - 1) * sizeof(double));
          } else if (dw > 0) {
            std::memcpy(drow, srow + 1, (w - 1) * sizeof(double));
            drow[w - 1] = 0.0;
          } else {
            std::memcpy(drow, srow, w * sizeof(double));
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col_3x3.
void col2im_3x3(const double* col, std::size_t c_in, std::size_t h, std::size_t w, double* dx) {
  const std::size_t hw = h * w;
  for (std::size_t ci = 0; ci < c_in; ++ci) {
    double* xc = dx + ci * hw;
    for (int dh = -1; dh <= 1; ++dh) {
      for (int dw = -1; dw <= 1; ++dw) {
        const double* src = col + (ci * 9 + static_cast<std::size_t>((dh + 1) * 3 + (dw + 1))) * hw;
        for (std::size_t r = 0; r < h; ++r) {
          const std::ptrdiff_t sr = static_cast<std::ptrdiff_t>(r) + dh;
          if (sr < 0 || sr >= static_cast<std::ptrdiff_t>(h)) continue;
          double* xrow = xc + static_cast<std::size_t>(sr) * w;
          const double* srow = src + r * w;
          if (dw < 0) {
            for (std::size_t c = 1; c < w; ++c) xrow[c - 1] += srow[c];
          } else if (dw > 0) {
            for (std::size_t c = 0; c + 1 < w; ++c) xrow[c + 1] += srow[c];
          } else {
            for (std::size_t c = 0; c < w; ++c) xrow[c] += srow[c];
          }
        }
      }
    }
  }
}

}  // namespace

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw DimensionError("matmul shape mismatch: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = make_tensor({m, n});
  CMapMat A(a->data.data(), m, k), B(b->data.data(), k, n);
  MapMat(out->data.data(), m, n).noalias() = A * B;
  check_finite_debug(*out, "matmul");
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out, m, k, n] {
      CMapMat G(out->grad.data(), m, n);
      if (a->requires_grad) {
        a->ensure_grad();
        CMapMat B(b->data.data(), k, n);
        MapMat(a->grad.data(), m, k).noalias() += G * B.transpose();
      }
      if (b->requires_grad) {
        b->ensure_grad();
        CMapMat A(a->data.data(), m, k);
        MapMat(b->grad.data(), k, n).noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

TensorPtr add_bias(const TensorPtr& x, const TensorPtr& bias, Tape* tape) {
  if (x->shape.size() != 2 || bias->shape.size() != 1 || x->shape[1] != bias->shape[0])
    throw DimensionError("add_bias shape mismatch: " + shape_str(x->shape) + " + " +
                         shape_str(bias->shape));
  const std::size_t n = x->shape[0], f = x->shape[1];
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) out->data[i * f + j] = x->data[i * f + j] + bias->data[j];
  check_finite_debug(*out, "add_bias");
  if (want_grad(tape, {&x, &bias})) {
    out->requires_grad = true;
    tape->record([x, bias, out, n, f] {
      if (x->requires_grad) {
        x->ensure_grad();
        for (std::size_t i = 0; i < n * f; ++i) x->grad[i] += out->grad[i];
      }
      if (bias->requires_grad) {
        bias->ensure_grad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < f; ++j) bias->grad[j] += out->grad[i * f + j];
      }
    });
  }
  return out;
}

TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernels, const TensorPtr& bias, Tape* tape) {
  if (x->shape.size() != 4 || kernels->shape.size() != 4)
    throw DimensionError("conv2d expects x [n,c,h,w] and kernels [co,ci,3,3], got " +
                         shape_str(x->shape) + " and " + shape_str(kernels->shape));
  if (kernels->shape[2] != 3 || kernels->shape[3] != 3)
    throw DimensionError("conv2d kernels must be 3x3, got " + shape_str(kernels->shape));
  if (x->shape[1] != kernels->shape[1])
    throw DimensionError("conv2d channel mismatch: input " + shape_str(x->shape) +
                         " vs kernels " + shape_str(kernels->shape));
  const std::size_t n = x->shape[0], ci = x->shape[1], h = x->shape[2], w = x->shape[3];
  const std::size_t co = kernels->shape[0];
  if (bias->shape != Shape{co})
    throw DimensionError("conv2d bias shape mismatch: " + shape_str(bias->shape) + " vs [" +
                         std::to_string(co) + "]");
  const std::size_t hw = h * w, kdim = ci * 9;

  auto out = make_tensor({n, co, h, w});
  std::vector<double> col(kdim * hw);
  CMapMat K(kernels->data.data(), co, kdim);
  for (std::size_t img = 0; img < n; ++img) {
    im2col_3x3(x->data.data() + img * ci * hw, ci, h, w, col.data());
    CMapMat C(col.data(), kdim, hw);
    MapMat O(out->data.data() + img * co * hw, co, hw);
    O.noalias() = K * C;
    for (std::size_t c = 0; c < co; ++c) O.row(c).array() += bias->data[c];
  }
  check_finite_debug(*out, "conv2d");

  if (want_grad(tape, {&x, &kernels, &bias})) {
    out->requires_grad = true;
    tape->record([x, kernels, bias, out, n, ci, co, h, w, hw, kdim] {
      std::vector<double> col(kdim * hw);
      std::vector<double> dcol(kdim * hw);
      CMapMat K(kernels->data.data(), co, kdim);
      if (kernels->requires_grad) kernels->ensure_grad();
      if (bias->requires_grad) bias->ensure_grad();
      if (x->requires_grad) x->ensure_grad();
      MapMat dK(kernels->requires_grad ? kernels->grad.data() : nullptr, co,
                kernels->requires_grad ? kdim : 0);
      for (std::size_t img = 0; img < n; ++img) {
        CMapMat G(out->grad.data() + img * co * hw, co, hw);
        if (kernels->requires_grad) {
          im2col_3x3(x->data.data() + img * ci * hw, ci, h, w, col.data());
          CMapMat C(col.data(), kdim, hw);
          MapMat(kernels->grad.data(), co, kdim).noalias() += G * C.transpose();
        }
        if (bias->requires_grad)
          for (std::size_t c = 0; c < co; ++c) bias->grad[c] += G.row(c).sum();
        if (x->requires_grad) {
          MapMat DC(dcol.data(), kdim, hw);
          DC.noalias() = K.transpose() * G;
          col2im_3x3(dcol.data(), ci, h, w, x->grad.data() + img * ci * hw);
        }
      }
      (void)dK;
    });
  }
  return out;
}

TensorPtr relu(const TensorPtr& x, Tape* tape) {
  auto out = make_tensor(x->shape);
  for (std::size_t i = 0; i < x->size(); ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out] {
      x->ensure_grad();
      for (std::size_t i = 0; i < x->size(); ++i)
        if (x->data[i] > 0.0) x->grad[i] += out->grad[i];
    });
  }
  return out;
}

TensorPtr maxpool2d(const TensorPtr& x, Tape* tape) {
  if (x->shape.size() != 4)
    throw DimensionError("maxpool2d expects [n,c,h,w], got " + shape_str(x->shape));
  const std::size_t n = x->shape[0], c = x->shape[1], h = x->shape[2], w = x->shape[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("maxpool2d needs even spatial extents, got " + shape_str(x->shape));
  const std::size_t oh = h / 2, ow = w / 2;
  auto out = make_tensor({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out->size());
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (img * c + ch) * h * w;
      const std::size_t obase = (img * c + ch) * oh * ow;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t col = 0; col < ow; ++col) {
          std::size_t i00 = base + (2 * r) * w + 2 * col;
          std::size_t best = i00;
          double v = x->data[i00];
          for (std::size_t d : {i00 + 1, i00 + w, i00 + w + 1}) {
            if (x->data[d] > v) {
              v = x->data[d];
              best = d;
            }
          }
          out->data[obase + r * ow + col] = v;
          (*argmax)[obase + r * ow + col] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (want_grad(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, argmax] {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->size(); ++i) x->grad[(*argmax)[i]] += out->grad[i];
    });
  }
  return out;
}

TensorPtr batchnorm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                    const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                    double momentum, double eps, Tape* tape) {
  if (x->shape.size() != 4)
    throw DimensionError("batchnorm expects [n,c,h,w], got " + shape_str(x->shape));
  const std::size_t n = x->shape[0], c = x->shape[1], hw = x->shape[2] * x->shape[3];
  if (gamma->shape != Shape{c} || beta->shape != Shape{c})
    throw DimensionError("batchnorm parameter shape mismatch for " + shape_str(x->shape));
  const std::size_t m = n * hw;

  auto mean = std::make_shared<std::vector<double>>(c);
  auto invstd = std::make_shared<std::vector<double>>(c);
  if (training) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t img = 0; img < n; ++img) {
        const double* p = x->data.data() + (img * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      double v = 0.0;
      for (std::size_t img = 0; img < n; ++img) {
        const double* p = x->data.data() + (img * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const double var = v / static_cast<double>(m);
      (*mean)[ch] = mu;
      (*invstd)[ch] = 1.0 / std::sqrt(var + eps);
      // PyTorch-style running stats: biased var normalizes, unbiased is stored.
      const double var_unbiased = m > 1 ? v / static_cast<double>(m - 1) : var;
      running_mean->data[ch] = (1.0 - momentum) * running_mean->data[ch] + momentum * mu;
      running_var->data[ch] = (1.0 - momentum) * running_var->data[ch] + momentum * var_unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*mean)[ch] = running_mean->data[ch];
      (*invstd)[ch] = 1.0 / std::sqrt(running_var->data[ch] + eps);
    }
  }

  auto out = make_tensor(x->shape);
  for (std::size_t img = 0; img < n; ++img) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x->data.data() + (img * c + ch) * hw;
      double* o = out->data.data() + (img * c + ch) * hw;
      const double a = gamma->data[ch] * (*invstd)[ch];
      const double b = beta->data[ch] - a * (*mean)[ch];
      for (std::size_t i = 0; i < hw; ++i) o[i] = a * p[i] + b;
    }
  }
  check_finite_debug(*out, "batchnorm");

  if (want_grad(tape, {&x, &gamma, &beta})) {
    out->requires_grad = true;
    tape->record([x, gamma, beta, out, mean, invstd, n, c, hw, m, training] {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t img = 0; img < n; ++img) {
          const std::size_t base = (img * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double xhat = (x->data[base + i] - (*mean)[ch]) * (*invstd)[ch];
            sum_g += out->grad[base + i];
            sum_gx += out->grad[base + i] * xhat;
          }
        }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          gamma->grad[ch] += sum_gx;
        }
        if (beta->requires_grad) {
          beta->ensure_grad();
          beta->grad[ch] += sum_g;
        }
        if (x->requires_grad) {
          x->ensure_grad();
          const double a = gamma->data[ch] * (*invstd)[ch];
          const double gm = sum_g / static_cast<double>(m);
          const double gxm = sum_gx / static_cast<double>(m);
          for (std::size_t img = 0; img < n; ++img) {
            const std::size_t base = (img * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (training) {
                const double xhat = (x->data[base + i] - (*mean)[ch]) * (*invstd)[ch];
                x->grad[base + i] += a * (out->grad[base + i] - gm - xhat * gxm);
              } else {
                x->grad[base + i] += a * out->grad[base + i];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

TensorPtr softmax(const TensorPtr& logits, Tape* tape) {
  if (logits->shape.size() != 2)
    throw DimensionError("softmax expects [n,k], got " + shape_str(logits->shape));
  const std::size_t n = logits->shape[0], k = logits->shape[1];
  auto out = make_tensor(logits->shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits->data.data() + i * k;
    double* p = out->data.data() + i * k;
    double mx = z[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, z[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - mx);
      s += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= s;
  }
  if (want_grad(tape, {&logits})) {
    out->requires_grad = true;
    tape->record([logits, out, n, k] {
      logits->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = out->data.data() + i * k;
        const double* g = out->grad.data() + i * k;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += p[j] * g[j];
        for (std::size_t j = 0; j < k; ++j) logits->grad[i * k + j] += p[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

TensorPtr cross_entropy(const TensorPtr& probs, const std::vector<std::size_t>& labels,
                        Tape* tape) {
  if (probs->shape.size() != 2)
    throw DimensionError("cross_entropy expects probs [n,k], got " + shape_str(probs->shape));
  const std::size_t n = probs->shape[0], k = probs->shape[1];
  if (labels.size() != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  for (std::size_t lbl : labels)
    if (lbl >= k) throw DomainError("cross_entropy label " + std::to_string(lbl) + " out of range");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    loss -= std::log(std::max(probs->data[i * k + labels[i]], kProbFloor));
  loss /= static_cast<double>(n);
  auto out = make_scalar(loss);
  if (want_grad(tape, {&probs})) {
    out->requires_grad = true;
    tape->record([probs, out, labels, n, k] {
      probs->ensure_grad();
      const double g = out->grad[0];
      for (std::size_t i = 0; i < n; ++i) {
        const double p = probs->data[i * k + labels[i]];
        if (p >= kProbFloor)
          probs->grad[i * k + labels[i]] -= g / (p * static_cast<double>(n));
      }
    });
  }
  return out;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  require_shape(a->shape == b->shape, "add", a->shape, b->shape);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  require_shape(a->shape == b->shape, "sub", a->shape, b->shape);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] - b->data[i];
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] -= out->grad[i];
      }
    });
  }
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape) {
  require_shape(a->shape == b->shape, "mul", a->shape, b->shape);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  if (want_grad(tape, {&a, &b})) {
    out->requires_grad = true;
    tape->record([a, b, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

TensorPtr muladd(const TensorPtr& a, const TensorPtr& b, const TensorPtr& c, Tape* tape) {
  require_shape(a->shape == b->shape, "muladd", a->shape, b->shape);
  require_shape(a->shape == c->shape, "muladd", a->shape, c->shape);
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i)
    out->data[i] = a->data[i] + b->data[i] * c->data[i];
  if (want_grad(tape, {&a, &b, &c})) {
    out->requires_grad = true;
    tape->record([a, b, c, out] {
      if (a->requires_grad) {
        a->ensure_grad();
        for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out->grad[i] * c->data[i];
      }
      if (c->requires_grad) {
        c->ensure_grad();
        for (std::size_t i = 0; i < c->size(); ++i) c->grad[i] += out->grad[i] * b->data[i];
      }
    });
  }
  return out;
}

TensorPtr scale(const TensorPtr& a, double c, Tape* tape) {
  auto out = make_tensor(a->shape);
  for (std::size_t i = 0; i < a->size(); ++i) out->data[i] = a->data[i] * c;
  if (want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, c] {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

TensorPtr softplus(const TensorPtr& a, Tape* tape) {
  using MapArr = Eigen::Map<Eigen::ArrayXd>;
  using CMapArr = Eigen::Map<const Eigen::ArrayXd>;
  const auto n = static_cast<Eigen::Index>(a->size());
  auto out = make_tensor(a->shape);
  {
    CMapArr x(a->data.data(), n);
    // log1p(exp(x)) overflows past ~700; x > 30 is already exact in double.
    MapArr(out->data.data(), n) = (x > 30.0).select(x, x.min(30.0).exp().log1p());
  }
  if (want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out, n] {
      a->ensure_grad();
      CMapArr x(a->data.data(), n);
      MapArr(a->grad.data(), n) +=
          CMapArr(out->grad.data(), n) / (1.0 + (-x).exp());
    });
  }
  return out;
}

TensorPtr sum(const TensorPtr& a, Tape* tape) {
  double s = 0.0;
  for (double v : a->data) s += v;
  auto out = make_scalar(s);
  if (want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0];
    });
  }
  return out;
}

TensorPtr reshape(const TensorPtr& a, Shape shape, Tape* tape) {
  if (numel(shape) != a->size())
    throw DimensionError("reshape " + shape_str(a->shape) + " -> " + shape_str(shape) +
                         " changes element count");
  auto out = make_tensor(std::move(shape), a->data);
  if (want_grad(tape, {&a})) {
    out->requires_grad = true;
    tape->record([a, out] {
      a->ensure_grad();
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[i];
    });
  }
  return out;
}

}  // namespace ops

std::vector<double> softmax_logits(const std::vector<double>& logits) {
  std::vector<double> p(logits.size());
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace sdcnet
