#include "bssd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bssd/error.hpp"

namespace bssd {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelativeErrorFloor});
}

namespace {

double evaluate(const ScalarGraph& graph, const Tensor& point) {
  ad::Tape tape;
  return graph(tape, tape.constant(point)).value().item();
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarGraph& graph, const Tensor& point, double step, double tolerance) {
  if (!(step > 0.0)) throw ValidationError("finite_difference_check: step must be positive");

  ad::Tape tape;
  ad::Var leaf = tape.leaf(point);
  ad::Var out = graph(tape, leaf);
  const Tensor analytic = tape.backward(out, {leaf})[leaf];

  GradCheckReport report;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = evaluate(graph, probe);
    probe[i] = point[i] - step;
    const double down = evaluate(graph, probe);
    probe[i] = point[i];

    const double numeric = (up - down) / (2.0 * step);
    const double err = relative_error(analytic[i], numeric);
    if (err > report.max_relative_error || report.checked == 0) {
      report.max_relative_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
    ++report.checked;
  }
  report.passed = report.max_relative_error <= tolerance;
  return report;
}

}  // namespace bssd
