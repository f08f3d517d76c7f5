#pragma once

#include <cstddef>
#include <span>

namespace bssd::stats {

double mean(std::span<const double> xs);
// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);

struct TTest {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0
  std::size_t dof = 0;
};

// Paired one-sided t-test over matched samples.
TTest paired_t_test(std::span<const double> a, std::span<const double> b);

struct ChiSquare {
  double statistic = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

// Goodness of fit of observed counts to category probabilities. Categories
// with zero probability must have zero counts and are dropped from the dof.
ChiSquare chi_square_goodness_of_fit(std::span<const std::size_t> counts, std::span<const double> probabilities);

}  // namespace bssd::stats
