#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ctxfuse/tensor.hpp"

namespace ctxfuse {

struct GradCheckOptions {
  double eps = 1e-5;       // central-difference step
  double rel_tol = 1e-4;   // max allowed relative error per element
  // Relative error uses max(|analytic|, |numeric|, denom_floor) as the
  // denominator, so elements far below the floor are effectively held to an
  // absolute tolerance of rel_tol * denom_floor. The floor keeps finite-
  // difference roundoff (~1e-10 on O(1) losses) from failing true zeros.
  double denom_floor = 1e-3;
  std::size_t max_failures = 8;  // cap on recorded failure descriptions
};

struct GradCheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t checked = 0;  // total scalar elements compared
  std::vector<std::string> failures;
};

// Compares reverse-mode gradients of a scalar-valued function against central
// finite differences, element by element over every listed parameter. The
// function is evaluated twice up front and must return bit-identical losses;
// anything stochastic (unseeded dropout, fresh noise) is rejected because the
// difference quotient would be meaningless.
GradCheckReport check_gradients(const std::function<Tensor()>& f,
                                const std::vector<std::pair<std::string, Tensor>>& params,
                                const GradCheckOptions& opts = {});

}  // namespace ctxfuse
