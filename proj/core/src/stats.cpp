#include "bssd/stats.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "bssd/error.hpp"

namespace bssd::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

TTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ValidationError("paired_t_test: need two equal samples of size >= 2");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  TTest t;
  t.dof = diff.size() - 1;
  t.mean_difference = mean(diff);
  const double se = stddev(diff) / std::sqrt(static_cast<double>(diff.size()));
  if (se == 0.0) {
    t.t_statistic = t.mean_difference > 0.0   ? std::numeric_limits<double>::infinity()
                    : t.mean_difference < 0.0 ? -std::numeric_limits<double>::infinity()
                                              : 0.0;
    t.p_value = t.mean_difference > 0.0 ? 0.0 : t.mean_difference < 0.0 ? 1.0 : 0.5;
    return t;
  }
  t.t_statistic = t.mean_difference / se;
  boost::math::students_t dist(static_cast<double>(t.dof));
  t.p_value = boost::math::cdf(boost::math::complement(dist, t.t_statistic));
  return t;
}

ChiSquare chi_square_goodness_of_fit(std::span<const std::size_t> counts, std::span<const double> probabilities) {
  if (counts.size() != probabilities.size()) throw ValidationError("chi_square: size mismatch");
  std::size_t total = 0;
  for (auto c : counts) total += c;
  ChiSquare out;
  std::size_t categories = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (probabilities[i] <= 0.0) {
      if (counts[i] != 0) {
        out.statistic = std::numeric_limits<double>::infinity();
        out.p_value = 0.0;
        return out;
      }
      continue;
    }
    const double expected = probabilities[i] * static_cast<double>(total);
    const double d = static_cast<double>(counts[i]) - expected;
    out.statistic += d * d / expected;
    ++categories;
  }
  if (categories < 2) return out;
  out.dof = categories - 1;
  boost::math::chi_squared dist(static_cast<double>(out.dof));
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  return out;
}

}  // namespace bssd::stats
