#pragma once

#include <stdexcept>
#include <string>

#include "rxnpt/autograd.h"

namespace rxnpt {

struct AdamWConfig {
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-8);
  Real weight_decay = Real(0.01);

  friend bool operator==(const AdamWConfig &, const AdamWConfig &) = default;
};

class NonFiniteGradient : public std::runtime_error {
public:
  explicit NonFiniteGradient(const std::string &tensor)
      : std::runtime_error("non-finite gradient in tensor '" + tensor + "'"), tensor_(tensor) {}
  const std::string &tensor() const { return tensor_; }

private:
  std::string tensor_;
};

// One AdamW update of every parameter from its grad slot. Weight decay is
// decoupled: p <- p * (1 - lr * wd) before the moment-based step.
void adamw_step(ParameterSet &params, Real lr, const AdamWConfig &cfg);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
Real clip_grad_norm(ParameterSet &params, Real max_norm);

}  // namespace rxnpt
