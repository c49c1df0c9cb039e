#include "dirgnn/optim.hpp"

#include <cmath>

namespace dirgnn::optim {

State init_state(const ParamGroup& group, Kind kind) {
  State s;
  s.kind = kind;
  if (kind == Kind::Adam) {
    for (const auto& p : group.params) {
      s.m.emplace_back(p.value.rows(), p.value.cols());
      s.v.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  return s;
}

void step(ParamGroup& group, State& state, double lr, const AdamConstants& c) {
  if (state.kind == Kind::Adam && state.m.size() != group.params.size()) {
    throw ContractError("optimizer state holds " + std::to_string(state.m.size()) +
                         " tensors, group has " + std::to_string(group.params.size()));
  }
  ++state.step;
  if (state.kind == Kind::Sgd) {
    for (auto& p : group.params) {
      if (!p.grad.same_shape(p.value)) throw ContractError("gradient shape differs for " + p.name);
      for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] -= lr * p.grad[i];
    }
    return;
  }
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < group.params.size(); ++k) {
    auto& p = group.params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (!p.grad.same_shape(p.value) || !m.same_shape(p.value)) {
      throw ContractError("optimizer shape mismatch for " + p.name);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace dirgnn::optim
