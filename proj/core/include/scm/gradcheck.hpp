#pragma once

#include <functional>
#include <vector>

#include "scm/tape.hpp"

namespace scm {

/// A differentiable scalar program: builds a graph over the given leaf
/// variables and returns a scalar (1-element) variable.
using TapeProgram =
    std::function<GradientTape::Var(GradientTape&, const std::vector<GradientTape::Var>&)>;

/// Compares the tape's analytic gradient against central finite differences.
///
/// Returns max over all coordinates of all inputs of
///   |analytic - central_difference| / max(1, |central_difference|).
double check_gradient(const TapeProgram& f, const std::vector<Tensor>& inputs,
                      double step = 1e-5);

/// Single-input convenience overload.
double check_gradient(const std::function<GradientTape::Var(GradientTape&, GradientTape::Var)>& f,
                      const Tensor& x, double step = 1e-5);

}  // namespace scm
