#pragma once

#include <cstdint>
#include <random>

#include "bssd/autodiff.hpp"
#include "bssd/model.hpp"

namespace testing {

inline bssd::Tensor random_tensor(bssd::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  bssd::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = n(rng);
  return t;
}

inline bssd::Tensor uniform_tensor(bssd::Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  bssd::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// sum(w * v) with fixed weights, so every output entry matters.
inline bssd::ad::Var weighted_sum(bssd::ad::Var v, std::uint64_t seed) {
  auto& tape = v.tape();
  return bssd::ad::sum(bssd::ad::mul(v, tape.constant(random_tensor(v.shape(), seed))));
}

// Single dense layer, no activation: logits = W x + b.
inline bssd::ClassifierModel linear_model(const bssd::Tensor& weight, const bssd::Tensor& bias) {
  bssd::ClassifierSpec spec = bssd::mlp_spec(weight.dim(1), {}, weight.dim(0));
  return bssd::ClassifierModel(spec, {weight, bias});
}

}  // namespace testing
