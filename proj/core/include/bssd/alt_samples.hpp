#pragma once

// Alternative perturbed samples used in place of boundary supporting samples
// when comparing sample generators during distillation.

#include <cstddef>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bssd/attack.hpp"
#include "bssd/model.hpp"

namespace bssd {

enum class SampleKind { Bss, RandomNoise, Fgsm, DeepFool, L2Minimize };

std::string_view to_string(SampleKind kind);
SampleKind parse_sample_kind(std::string_view name);

struct AltSampleConfig {
  // Expected L2 norm of the Gaussian noise. 0 asks the experiment runner to
  // use the teacher's mean BSS perturbation norm.
  double noise_norm = 0.0;
  double fgsm_step = 0.05;
  double deepfool_overshoot = 0.02;
  std::size_t deepfool_max_iterations = 50;
  // Weight c of c * |x - x0|^2 added to the logit gap.
  double l2_penalty = 0.1;
};

// Standard deviation s such that E|N(0, s^2 I_dim)| = norm.
double gaussian_sigma_for_norm(std::size_t dim, double norm);

Tensor random_noise_sample(const Tensor& base, double expected_norm, std::mt19937_64& rng);

// x + step * sign(grad_x CE(softmax(f(x)), label)).
Tensor fgsm_sample(const ClassifierModel& model, const Tensor& x, std::size_t label, double step);

struct DeepFoolResult {
  Tensor sample;
  std::size_t iterations = 0;
  bool crossed = false;
};

// Multi-class linearized minimal perturbation, scaled by (1 + overshoot).
DeepFoolResult deepfool(const ClassifierModel& model, const Tensor& x, std::size_t label, double overshoot,
                        std::size_t max_iterations);

// Gradient descent on f_b - f_k + c |x - x0|^2, stopping once the gap is negative.
Tensor l2_minimize(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                   const AttackConfig& attack, double penalty);

struct GeneratedSample {
  Tensor sample;
  bool usable = false;
  AttackStatus status = AttackStatus::Success;
};

// Batch dispatch over rows of `bases`. Bss returns only attack successes as usable.
std::vector<GeneratedSample> generate_samples(SampleKind kind, const ClassifierModel& teacher, const Tensor& bases,
                                              std::span<const std::size_t> base_classes,
                                              std::span<const std::size_t> targets, const AttackConfig& attack,
                                              const AltSampleConfig& alt, std::mt19937_64& rng);

}  // namespace bssd
