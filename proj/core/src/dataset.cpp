#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "bssd/dataset.hpp"
#include "bssd/error.hpp"

namespace bssd {

Shape Split::feature_shape() const {
  if (inputs.rank() == 0) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Tensor out(Shape{labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) throw ValidationError("one_hot: label out of range");
    out[i * num_classes + labels[i]] = 1.0;
  }
  return out;
}

void Dataset::validate() const {
  if (num_classes < 2) throw ValidationError("dataset: need at least two classes");
  for (const Split* s : {&train, &test}) {
    if (s->size() == 0) continue;
    if (s->inputs.rank() < 2 || s->inputs.dim(0) != s->size()) {
      throw ValidationError("dataset: inputs " + to_string(s->inputs.shape()) + " do not match " +
                            std::to_string(s->size()) + " labels");
    }
    for (std::size_t y : s->labels) {
      if (y >= num_classes) throw ValidationError("dataset: label " + std::to_string(y) + " out of range");
    }
  }
  if (train.size() && test.size() && train.feature_shape() != test.feature_shape()) {
    throw ValidationError("dataset: train and test feature shapes differ");
  }
}

namespace {

// Lower-triangular L with L L^T = a; throws when a is not positive definite.
std::vector<double> cholesky(const Tensor& a) {
  const std::size_t n = a.dim(0);
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(s > 1e-12)) throw ValidationError("generate_gaussians: covariance is not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

Split draw_gaussians(std::size_t k, std::size_t per_class, const Tensor& centers, const std::vector<double>& chol,
                     std::mt19937_64& rng) {
  const std::size_t d = centers.dim(1);
  Split s;
  s.inputs = Tensor(Shape{k * per_class, d});
  std::normal_distribution<double> normal;
  std::vector<double> z(d);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t n = 0; n < per_class; ++n) {
      const std::size_t row = c * per_class + n;
      for (double& v : z) v = normal(rng);
      for (std::size_t i = 0; i < d; ++i) {
        double v = centers[c * d + i];
        for (std::size_t j = 0; j <= i; ++j) v += chol[i * d + j] * z[j];
        s.inputs[row * d + i] = v;
      }
      s.labels.push_back(c);
    }
  }
  return s;
}

}  // namespace

Dataset generate_gaussians(std::size_t num_classes, std::size_t per_class, const Tensor& centers,
                           const Tensor& covariance, std::uint64_t seed, std::optional<std::size_t> test_per_class) {
  if (num_classes < 2) throw ValidationError("generate_gaussians: need at least two classes");
  if (per_class == 0) throw ValidationError("generate_gaussians: need at least one sample per class");
  if (centers.rank() != 2 || centers.dim(0) != num_classes) {
    throw ShapeError("generate_gaussians: centers must be (K, d), got " + to_string(centers.shape()));
  }
  const std::size_t d = centers.dim(1);
  if (covariance.shape() != Shape{d, d}) {
    throw ShapeError("generate_gaussians: covariance must be (d, d), got " + to_string(covariance.shape()));
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (covariance[i * d + j] != covariance[j * d + i]) {
        throw ValidationError("generate_gaussians: covariance is not symmetric");
      }
  const auto chol = cholesky(covariance);
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.train = draw_gaussians(num_classes, per_class, centers, chol, rng);
  ds.test = draw_gaussians(num_classes, test_per_class.value_or(per_class), centers, chol, rng);
  return ds;
}

namespace {

Split draw_spirals(std::size_t k, std::size_t per_class, double noise, const SpiralOptions& opt,
                   std::mt19937_64& rng) {
  Split s;
  s.inputs = Tensor(Shape{k * per_class, 2});
  std::uniform_real_distribution<double> param(opt.radius_start, 1.0);
  std::normal_distribution<double> normal;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t n = 0; n < per_class; ++n) {
      const double t = param(rng);
      const double angle =
          2.0 * std::numbers::pi * (opt.turns * t + static_cast<double>(c) / static_cast<double>(k));
      double x = t * std::cos(angle);
      double y = t * std::sin(angle);
      if (noise > 0.0) {
        x += noise * normal(rng);
        y += noise * normal(rng);
      }
      const std::size_t row = c * per_class + n;
      s.inputs[row * 2] = x;
      s.inputs[row * 2 + 1] = y;
      s.labels.push_back(c);
    }
  }
  return s;
}

}  // namespace

Dataset generate_spirals(std::size_t num_classes, std::size_t per_class, double noise, std::uint64_t seed,
                         std::optional<std::size_t> test_per_class, const SpiralOptions& options) {
  if (num_classes < 2) throw ValidationError("generate_spirals: need at least two classes");
  if (per_class == 0) throw ValidationError("generate_spirals: need at least one sample per class");
  if (noise < 0.0) throw ValidationError("generate_spirals: noise must be non-negative");
  if (!(options.radius_start > 0.0 && options.radius_start < 1.0)) {
    throw ValidationError("generate_spirals: radius_start must lie in (0, 1)");
  }
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.train = draw_spirals(num_classes, per_class, noise, options, rng);
  ds.test = draw_spirals(num_classes, test_per_class.value_or(per_class), noise, options, rng);
  return ds;
}

Dataset normalize(Dataset ds) {
  if (ds.normalized()) throw ValidationError("normalize: dataset is already normalized");
  ds.validate();
  if (ds.train.size() == 0) throw ValidationError("normalize: empty training split");
  const std::size_t n = ds.train.size();
  const std::size_t f = ds.train.inputs.row_size();
  NormalizationStats st;
  st.mean.assign(f, 0.0);
  st.stddev.assign(f, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) st.mean[j] += ds.train.inputs[r * f + j];
  for (double& m : st.mean) m /= static_cast<double>(n);
  std::vector<double> var(f, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < f; ++j) {
      const double d = ds.train.inputs[r * f + j] - st.mean[j];
      var[j] += d * d;
    }
  for (std::size_t j = 0; j < f; ++j) {
    var[j] /= static_cast<double>(n);
    if (var[j] < kVarianceFloor) {
      var[j] = kVarianceFloor;
      st.flagged_features.push_back(j);
    }
    st.stddev[j] = std::sqrt(var[j]);
  }
  for (Split* s : {&ds.train, &ds.test}) {
    for (std::size_t r = 0; r < s->size(); ++r)
      for (std::size_t j = 0; j < f; ++j) {
        double& v = s->inputs[r * f + j];
        v = (v - st.mean[j]) / st.stddev[j];
      }
  }
  ds.normalization = std::move(st);
  return ds;
}

Dataset subsample(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("subsample: fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.train.size(); ++i) by_class.at(ds.train.labels[i]).push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[c];
    // One permutation per class regardless of fraction: prefixes nest.
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (take == 0 && !idx.empty()) {
      throw ValidationError("subsample: fraction leaves class " + std::to_string(c) + " empty");
    }
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(keep.begin(), keep.end());

  Dataset out = ds;
  out.train.inputs = ds.train.inputs.gather_rows(keep);
  out.train.labels.clear();
  for (std::size_t i : keep) out.train.labels.push_back(ds.train.labels[i]);
  return out;
}

Split with_channel_axis(Split split) {
  Shape s = split.inputs.shape();
  if (s.size() != 3) throw ShapeError("with_channel_axis: expects (N, H, W), got " + to_string(s));
  s.insert(s.begin() + 1, 1);
  split.inputs = split.inputs.reshaped(std::move(s));
  return split;
}

}  // namespace bssd
