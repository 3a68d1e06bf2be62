#include "sdcnet/bayes.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sdcnet {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2*pi)

using ArrayXd = Eigen::ArrayXd;
using MapArr = Eigen::Map<Eigen::ArrayXd>;
using CMapArr = Eigen::Map<const Eigen::ArrayXd>;

// Polar-method normals in blocks; the SIMD log/sqrt run over whole blocks and
// a scalar pass emits the accepted pairs. Output depends only on the rng
// state, so lineage replay is exact.
void fill_normals(double* dst, std::size_t n, Rng& rng) {
  constexpr std::size_t kBlock = 2048;
  alignas(64) double u[kBlock], v[kBlock], s[kBlock], m[kBlock];
  std::size_t filled = 0;
  while (filled < n) {
    for (std::size_t i = 0; i < kBlock; ++i) {
      u[i] = 2.0 * rng.uniform() - 1.0;
      v[i] = 2.0 * rng.uniform() - 1.0;
    }
    MapArr su(s, kBlock);
    su = MapArr(u, kBlock).square() + MapArr(v, kBlock).square();
    MapArr(m, kBlock) = (-2.0 * su.log() / su).sqrt();
    for (std::size_t i = 0; i < kBlock && filled < n; ++i) {
      if (s[i] >= 1.0 || s[i] <= 0.0) continue;
      dst[filled++] = u[i] * m[i];
      if (filled < n) dst[filled++] = v[i] * m[i];
    }
  }
}

}  // namespace

void ScaleMixturePrior::validate() const {
  if (!(pi >= 0.0 && pi <= 1.0)) throw ConfigError("prior pi must be in [0,1]");
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw ConfigError("prior sigmas must be positive");
}

TensorPtr sample_weight(const VariationalWeight& vw, const TensorPtr& epsilon, Tape* tape) {
  require_shape(epsilon->shape == vw.mu->shape, "sample_weight epsilon", epsilon->shape,
                vw.mu->shape);
  auto sigma = ops::softplus(vw.rho, tape);
  return ops::muladd(vw.mu, sigma, epsilon, tape);
}

TensorPtr standard_normal_like(const Shape& shape, Rng& rng) {
  auto t = make_tensor(shape);
  fill_normals(t->data.data(), t->size(), rng);
  return t;
}

TensorPtr log_gaussian(const TensorPtr& w, const TensorPtr& mu, const TensorPtr& sigma,
                       Tape* tape) {
  require_shape(w->shape == mu->shape && w->shape == sigma->shape, "log_gaussian", w->shape,
                mu->shape);
  const auto n = static_cast<Eigen::Index>(w->size());
  CMapArr wa(w->data.data(), n), ma(mu->data.data(), n), sa(sigma->data.data(), n);
  const double total = (-0.5 * kLogTwoPi) * static_cast<double>(n) - sa.log().sum() -
                       0.5 * ((wa - ma) / sa).square().sum();
  auto out = make_scalar(total);
  if (tape && (w->requires_grad || mu->requires_grad || sigma->requires_grad)) {
    out->requires_grad = true;
    tape->record([w, mu, sigma, out, n] {
      const double g = out->grad[0];
      CMapArr wa(w->data.data(), n), ma(mu->data.data(), n), sa(sigma->data.data(), n);
      ArrayXd d_over_s2 = (wa - ma) / sa.square();
      if (w->requires_grad) {
        w->ensure_grad();
        MapArr(w->grad.data(), n) -= g * d_over_s2;
      }
      if (mu->requires_grad) {
        mu->ensure_grad();
        MapArr(mu->grad.data(), n) += g * d_over_s2;
      }
      if (sigma->requires_grad) {
        sigma->ensure_grad();
        MapArr(sigma->grad.data(), n) += g * ((wa - ma) * d_over_s2 - 1.0) / sa;
      }
    });
  }
  return out;
}

TensorPtr log_mixture_prior(const TensorPtr& w, const ScaleMixturePrior& prior, Tape* tape) {
  prior.validate();
  const auto n = static_cast<Eigen::Index>(w->size());
  const double inv_v1 = 1.0 / (prior.sigma1 * prior.sigma1);
  const double inv_v2 = 1.0 / (prior.sigma2 * prior.sigma2);

  // Degenerate pi collapses to a single Gaussian; otherwise log-sum-exp of
  // the two component log densities, with the responsibilities reused by the
  // backward rule.
  if (prior.pi >= 1.0 || prior.pi <= 0.0) {
    const double sigma = prior.pi >= 1.0 ? prior.sigma1 : prior.sigma2;
    const double inv_v = prior.pi >= 1.0 ? inv_v1 : inv_v2;
    CMapArr wa(w->data.data(), n);
    const double total = (-0.5 * kLogTwoPi - std::log(sigma)) * static_cast<double>(n) -
                         0.5 * inv_v * wa.square().sum();
    auto out = make_scalar(total);
    if (tape && w->requires_grad) {
      out->requires_grad = true;
      tape->record([w, out, inv_v, n] {
        w->ensure_grad();
        MapArr(w->grad.data(), n) -= out->grad[0] * inv_v * CMapArr(w->data.data(), n);
      });
    }
    return out;
  }

  const double c1 = std::log(prior.pi) - 0.5 * kLogTwoPi - std::log(prior.sigma1);
  const double c2 = std::log(1.0 - prior.pi) - 0.5 * kLogTwoPi - std::log(prior.sigma2);
  auto log_density = [=](const Eigen::ArrayXd& w2, ArrayXd* resp1) {
    ArrayXd l1 = c1 - 0.5 * inv_v1 * w2;
    ArrayXd l2 = c2 - 0.5 * inv_v2 * w2;
    ArrayXd hi = l1.max(l2);
    ArrayXd lp = hi + ((l1 - hi).exp() + (l2 - hi).exp()).log();
    if (resp1) *resp1 = (l1 - lp).exp();
    return lp;
  };

  ArrayXd w2 = CMapArr(w->data.data(), n).square();
  const bool with_grad = tape && w->requires_grad;
  // The responsibilities are kept for the backward rule so it stays free of
  // transcendentals.
  auto r1 = with_grad ? std::make_shared<ArrayXd>() : nullptr;
  auto out = make_scalar(log_density(w2, r1.get()).sum());
  if (with_grad) {
    out->requires_grad = true;
    tape->record([w, out, r1, inv_v1, inv_v2, n] {
      w->ensure_grad();
      CMapArr wa(w->data.data(), n);
      MapArr(w->grad.data(), n) -=
          out->grad[0] * wa * (*r1 * inv_v1 + (1.0 - *r1) * inv_v2);
    });
  }
  return out;
}

TensorPtr bbb_dense_forward(const TensorPtr& v_in, const VariationalWeight& vw_weights,
                            const VariationalWeight& vw_bias, Rng& rng, Tape* tape) {
  auto eps_w = standard_normal_like(vw_weights.mu->shape, rng);
  auto eps_b = standard_normal_like(vw_bias.mu->shape, rng);
  auto w = sample_weight(vw_weights, eps_w, tape);
  auto b = sample_weight(vw_bias, eps_b, tape);
  return ops::add_bias(ops::matmul(v_in, w, tape), b, tape);
}

double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p) {
  return std::log(sigma_p / sigma_q) +
         (sigma_q * sigma_q + (mu_q - mu_p) * (mu_q - mu_p)) / (2.0 * sigma_p * sigma_p) - 0.5;
}

}  // namespace sdcnet
