#pragma once

#include <cstdint>

#include "sdcnet/ops.hpp"
#include "sdcnet/rng.hpp"
#include "sdcnet/tensor.hpp"

namespace sdcnet {

// Two-component Gaussian scale mixture, both components centered at 0.
struct ScaleMixturePrior {
  double pi = 0.5;
  double sigma1 = 1.0;
  double sigma2 = 0.0024787521766663585;  // exp(-6)

  void validate() const;
};

// Per-parameter Gaussian posterior: sigma = softplus(rho) keeps the scale
// positive under unconstrained optimization.
struct VariationalWeight {
  TensorPtr mu;
  TensorPtr rho;
  ScaleMixturePrior prior;
};

// Reparameterized draw w = mu + softplus(rho) * epsilon; differentiable in
// mu and rho when a tape is given. epsilon is treated as a constant.
TensorPtr sample_weight(const VariationalWeight& vw, const TensorPtr& epsilon,
                        Tape* tape = nullptr);

TensorPtr standard_normal_like(const Shape& shape, Rng& rng);

// Sum over entries of log N(w_i; mu_i, sigma_i^2). Differentiable in all
// three arguments.
TensorPtr log_gaussian(const TensorPtr& w, const TensorPtr& mu, const TensorPtr& sigma,
                       Tape* tape = nullptr);

// Sum over entries of log[pi N(w;0,sigma1^2) + (1-pi) N(w;0,sigma2^2)],
// evaluated via log-sum-exp. Differentiable in w.
TensorPtr log_mixture_prior(const TensorPtr& w, const ScaleMixturePrior& prior,
                            Tape* tape = nullptr);

// One minibatch objective: kl_weight * mean_draws(log q - log p) + mean_draws(nll),
// where nll is the summed batch negative log-likelihood of one draw.
struct ElboBreakdown {
  double log_q = 0.0;      // averaged over draws
  double log_prior = 0.0;  // averaged over draws
  double nll = 0.0;        // averaged over draws
  double kl_weight = 0.0;
  double total = 0.0;      // == kl_weight*(log_q - log_prior) + nll

  void fill_total() { total = kl_weight * (log_q - log_prior) + nll; }
};

// Dense layer with freshly sampled weights; vw_weights.mu is [in,out],
// vw_bias.mu is [out]. Gradients flow to mu and rho of both.
TensorPtr bbb_dense_forward(const TensorPtr& v_in, const VariationalWeight& vw_weights,
                            const VariationalWeight& vw_bias, Rng& rng, Tape* tape = nullptr);

// Closed-form KL between two Gaussians (oracle used by the test suites).
double gaussian_kl(double mu_q, double sigma_q, double mu_p, double sigma_p);

}  // namespace sdcnet
