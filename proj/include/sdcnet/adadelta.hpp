#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdcnet/params.hpp"

namespace sdcnet {

// Adadelta with the standard accumulator pair:
//   E[g^2] <- rho E[g^2] + (1-rho) g^2
//   delta   = -sqrt(E[dx^2]+eps)/sqrt(E[g^2]+eps) * g
//   E[dx^2] <- rho E[dx^2] + (1-rho) delta^2
//   param  += lr * delta
struct AdadeltaState {
  double rho = 0.9;
  double eps = 1e-6;
  std::map<std::string, std::vector<double>> sq_grad_avg;
  std::map<std::string, std::vector<double>> sq_update_avg;
};

// Throws NumericalError naming the parameter path on a non-finite gradient.
void adadelta_step(ParamStore& params, AdadeltaState& state, double lr);

}  // namespace sdcnet
