#pragma once

#include <functional>
#include <vector>

#include "sparseconv/autograd.hpp"

namespace sparseconv {

/// Builds a scalar from parameters bound on the given tape (via Tape::param).
using ScalarFunction = std::function<Var(Tape&)>;

/// Largest relative error between reverse-mode gradients and central differences over every
/// entry of every parameter: |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
/// Parameters must be 64-bit; they are restored after perturbation. Throws on NaN.
double grad_check(const ScalarFunction& f, const std::vector<ParameterPtr>& params,
                  double fd_step = 1e-6);

/// Convenience overload for plain tensors; `f` receives one leaf Var per tensor.
double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& inputs, double fd_step = 1e-6);

}  // namespace sparseconv
