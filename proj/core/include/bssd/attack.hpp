#pragma once

// Boundary supporting sample search.
//
// Starting from a base sample of class b, the iterate moves against the
// gradient of the logit gap L_k(x) = f_b(x) - f_k(x) with step length
// eta * (L_k + eps), so the step shrinks as the boundary approaches and the
// offset eps pushes the iterate across it.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bssd/model.hpp"
#include "bssd/tensor.hpp"

namespace bssd {

struct AttackConfig {
  double learning_rate = 0.3;
  double offset = 0.01;
  std::size_t max_iterations = 10;
  bool record_trajectory = false;

  void validate() const;
};

inline constexpr double kDegenerateGradientNorm = 1e-12;

enum class AttackStatus {
  Success,            // logit gap flipped from positive to negative
  AlreadyCrossed,     // gap was <= 0 at the base sample; zero iterations
  IntrudedClass,      // a third class overtook both base and target
  MaxIterations,      // iteration budget exhausted
  DegenerateGradient  // gradient norm fell below kDegenerateGradientNorm
};

std::string_view to_string(AttackStatus status);

struct TrajectoryPoint {
  std::size_t iteration = 0;
  double loss = 0.0;
  double step_norm = 0.0;
  std::size_t predicted = 0;
};

struct AttackResult {
  AttackStatus status = AttackStatus::MaxIterations;
  std::size_t base_class = 0;
  std::size_t target_class = 0;
  std::optional<std::size_t> intruding_class;
  Tensor final_sample;
  Tensor perturbation;  // final_sample - base
  std::size_t iterations = 0;
  double final_loss = 0.0;
  double previous_loss = 0.0;
  // Value range of the final sample; no box constraint is applied.
  double min_value = 0.0;
  double max_value = 0.0;
  std::vector<TrajectoryPoint> trajectory;

  bool succeeded() const noexcept { return status == AttackStatus::Success; }
};

// f_b(x) - f_k(x) for a single unbatched sample.
double attack_loss(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target);

// One update of the iterate. Throws DegenerateGradient on a flat gap.
Tensor attack_step(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                   const AttackConfig& config);

AttackResult find_bss(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                      const AttackConfig& config);

// Row-wise independent attacks on a batch (B, input...). Each row follows
// exactly the same arithmetic as find_bss on that row alone.
std::vector<AttackResult> find_bss_batch(const ClassifierModel& model, const Tensor& bases,
                                         std::span<const std::size_t> base_classes,
                                         std::span<const std::size_t> targets, const AttackConfig& config);

// |L(x_{i+1}) - [L(x_i)(1 - eta |g|) - eta eps |g|]| for one update from x.
double taylor_residual(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                       const AttackConfig& config);

// iteration,loss,step_norm,predicted
void write_trajectory_csv(std::ostream& out, const AttackResult& result);

// Logit gap and its input gradient for each row of a batch.
struct GapGradient {
  Tensor logits;                // (B, K)
  std::vector<double> gaps;     // f_b - f_k per row
  Tensor gradient;              // same shape as the batch
};
GapGradient logit_gap_gradient(const ClassifierModel& model, const Tensor& batch,
                               std::span<const std::size_t> base_classes, std::span<const std::size_t> targets);

}  // namespace bssd
