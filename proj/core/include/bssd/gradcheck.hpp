#pragma once

#include <cstddef>
#include <functional>

#include "bssd/autodiff.hpp"

namespace bssd {

// Builds a scalar on `tape` from the leaf holding the evaluation point.
using ScalarGraph = std::function<ad::Var(ad::Tape& tape, ad::Var leaf)>;

struct GradCheckReport {
  bool passed = true;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t checked = 0;
};

// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
// turning round-off into a large ratio.
inline constexpr double kRelativeErrorFloor = 1e-4;
double relative_error(double a, double b);

// Compares reverse-mode gradients of `graph` at `point` against central
// differences with the given step, elementwise.
GradCheckReport finite_difference_check(const ScalarGraph& graph, const Tensor& point, double step, double tolerance);

}  // namespace bssd
