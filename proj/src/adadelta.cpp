#include "sdcnet/adadelta.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace sdcnet {

void adadelta_step(ParamStore& params, AdadeltaState& state, double lr) {
  using MapArr = Eigen::Map<Eigen::ArrayXd>;
  using CMapArr = Eigen::Map<const Eigen::ArrayXd>;
  for (const auto& [name, param] : params.params()) {
    param->ensure_grad();
    auto& eg2 = state.sq_grad_avg[name];
    auto& ed2 = state.sq_update_avg[name];
    if (eg2.size() != param->size()) eg2.assign(param->size(), 0.0);
    if (ed2.size() != param->size()) ed2.assign(param->size(), 0.0);

    const auto n = static_cast<Eigen::Index>(param->size());
    CMapArr g(param->grad.data(), n);
    if (!g.isFinite().all()) {
      for (std::size_t i = 0; i < param->size(); ++i)
        if (!std::isfinite(param->grad[i]))
          throw NumericalError("non-finite gradient in parameter " + name + " at index " +
                               std::to_string(i));
    }
    MapArr eg(eg2.data(), n), ed(ed2.data(), n);
    eg = state.rho * eg + (1.0 - state.rho) * g.square();
    Eigen::ArrayXd delta = -((ed + state.eps).sqrt() / (eg + state.eps).sqrt()) * g;
    ed = state.rho * ed + (1.0 - state.rho) * delta.square();
    MapArr(param->data.data(), n) += lr * delta;
  }
}

}  // namespace sdcnet
