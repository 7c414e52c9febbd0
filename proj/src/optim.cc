#include "rxnpt/optim.h"

#include <cmath>

namespace rxnpt {

void adamw_step(ParameterSet &params, Real lr, const AdamWConfig &cfg) {
  if (!(lr > Real(0))) throw std::invalid_argument("learning rate must be positive");
  for (Parameter &p : params) {
    if (!p.grad.all_finite()) throw NonFiniteGradient(p.name);
  }
  for (Parameter &p : params) {
    ++p.step;
    const Real t = static_cast<Real>(p.step);
    const Real bias1 = Real(1) - std::pow(cfg.beta1, t);
    const Real bias2 = Real(1) - std::pow(cfg.beta2, t);
    const Real decay = Real(1) - lr * cfg.weight_decay;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real g = p.grad[i];
      Real &m = p.first_moment[i];
      Real &v = p.second_moment[i];
      m = cfg.beta1 * m + (Real(1) - cfg.beta1) * g;
      v = cfg.beta2 * v + (Real(1) - cfg.beta2) * g * g;
      const Real m_hat = m / bias1;
      const Real v_hat = v / bias2;
      p.value[i] = p.value[i] * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

Real clip_grad_norm(ParameterSet &params, Real max_norm) {
  double sq = 0;
  for (const Parameter &p : params) {
    for (Real g : p.grad.values()) sq += static_cast<double>(g) * g;
  }
  const Real norm = static_cast<Real>(std::sqrt(sq));
  if (max_norm > Real(0) && norm > max_norm) {
    const Real s = max_norm / norm;
    for (Parameter &p : params) {
      for (Real &g : p.grad.values()) g *= s;
    }
  }
  return norm;
}

}  // namespace rxnpt
