#pragma once

// Student training with a classification loss, a temperature-softened
// distillation loss and a boundary supporting loss evaluated at samples just
// across the teacher's decision boundary:
//
//   L(n) = CE(y_n, s(x_n)) + alpha * J(t(x_n)/T, s(x_n)/T)
//          + beta * sum_k p_n^k J(t(x_n^k)/T, s(x_n^k)/T)
//
// where J(a, b) = -a^T log b over softmax distributions and x_n^k is the
// boundary supporting sample of base sample n toward class k.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bssd/alt_samples.hpp"
#include "bssd/attack.hpp"
#include "bssd/autodiff.hpp"
#include "bssd/dataset.hpp"
#include "bssd/model.hpp"

namespace bssd {

enum class Method { Original, Hinton, Bss };
enum class SelectionPolicy { Proposed, All, Random };
enum class TargetPolicy { TeacherProbability, Uniform };

std::string_view to_string(Method m);
std::string_view to_string(SelectionPolicy p);
std::string_view to_string(TargetPolicy p);
Method parse_method(std::string_view name);
SelectionPolicy parse_selection(std::string_view name);
TargetPolicy parse_target(std::string_view name);

struct DistillConfig {
  Method method = Method::Bss;
  double temperature = 3.0;
  double alpha_start = 4.0;
  double alpha_end = 1.0;
  double beta_start = 2.0;
  double beta_zero_fraction = 0.75;
  std::size_t base_samples = 64;
  std::size_t batch_size = 256;
  AttackConfig attack;
  std::size_t epochs = 80;
  double learning_rate = 0.1;
  double lr_decay = 0.1;
  std::vector<double> lr_drop_fractions{0.5, 0.75};
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;

  SelectionPolicy selection = SelectionPolicy::Proposed;
  TargetPolicy target = TargetPolicy::TeacherProbability;
  SampleKind sample_kind = SampleKind::Bss;
  AltSampleConfig alt;

  void validate() const;
};

struct Weights {
  double alpha = 0.0;
  double beta = 0.0;
};

// alpha(t) = start + (end - start) t, beta(t) = max(0, start (1 - t / zero_fraction)).
// Throws ValidationError for t outside [0, 1].
Weights schedule(double t, const DistillConfig& config);
// Method-aware: Original uses (0, 0), Hinton (alpha(t), 0).
Weights method_weights(double t, const DistillConfig& config);
// Step decay by lr_decay at each drop fraction reached.
double learning_rate_at(double epoch_fraction, const DistillConfig& config);

// Batch means of the individual loss terms.
double classification_loss(const ClassifierModel& student, const Tensor& x, const Tensor& y_one_hot);
double kd_loss(const ClassifierModel& teacher, const ClassifierModel& student, const Tensor& x, double temperature);
double bs_loss(const ClassifierModel& teacher, const ClassifierModel& student, const Tensor& bss, double temperature);

// mean_rows( -sum_j target_j * log softmax(logits / T)_j ) on the tape.
ad::Var soft_cross_entropy(ad::Var logits, const Tensor& target_probabilities, double temperature);

struct BatchSelection {
  std::vector<std::size_t> eligible;     // batch rows correct under teacher and student
  std::vector<std::size_t> chosen;       // at most N rows of `eligible`
  std::vector<double> distances;         // |q_t - q_s|^2 per chosen row
  std::vector<std::size_t> targets;      // drawn target class per chosen row
  std::vector<std::vector<double>> target_probabilities;  // p^k per chosen row
};

// Both probability tensors are (B, K) at temperature 1.
BatchSelection select_base_samples(const Tensor& teacher_probs, const Tensor& student_probs,
                                   std::span<const std::size_t> labels, std::size_t n);
BatchSelection select_base_samples(const ClassifierModel& teacher, const ClassifierModel& student,
                                   const Split& batch, std::size_t n);

// p^k = q_k / (1 - q_c) for k != c and 0 for k == c. Throws NoAlternativeClass
// when q_c is 1 within 1e-12.
std::vector<double> target_probabilities(std::span<const double> teacher_probs, std::size_t base_class);
std::size_t sample_target_class(std::span<const double> teacher_probs, std::size_t base_class, std::mt19937_64& rng);

// Momentum SGD with L2 weight decay folded into the gradient.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<Tensor> parameters, std::span<const Tensor> gradients, double learning_rate);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

// Fixed inputs of one objective evaluation; differentiable in the student.
struct DistillObjective {
  Tensor inputs;
  Tensor labels_one_hot;
  Tensor teacher_soft;       // softmax(f_t(x)/T)
  Tensor bss_inputs;         // (M, input...) or empty
  Tensor teacher_bss_soft;   // softmax(f_t(bss)/T)
  double temperature = 3.0;
  Weights weights;

  struct Terms {
    ad::Var total, cls, kd, bs;
    bool has_bs = false;
  };
  Terms build(const ClassifierModel& student, std::span<const ad::Var> params) const;
};

struct LossBreakdown {
  double cls = 0.0;
  double kd = 0.0;
  double bs = 0.0;           // Monte Carlo estimate of sum_k p^k L_BS
  double weighted_bs = 0.0;  // beta * bs
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  std::size_t selected = 0;
  std::size_t attempted = 0;
  std::size_t succeeded = 0;
};

struct TrainState {
  SgdMomentum optimizer;
  std::mt19937_64 target_rng;
};

LossBreakdown train_step(const ClassifierModel& teacher, ClassifierModel& student, const Split& batch,
                         std::size_t num_classes, const DistillConfig& config, Weights weights, double learning_rate,
                         TrainState& state);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown loss;  // averages over the epoch's batches
  double learning_rate = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double attack_success_rate = 0.0;
};

struct TrainResult {
  ClassifierModel model;
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
  std::size_t dropped_samples = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train(const ClassifierModel& teacher, ClassifierModel student, const Dataset& data,
                  const DistillConfig& config, const EpochCallback& on_epoch = {});
// Plain cross-entropy training, no teacher.
TrainResult train_supervised(ClassifierModel model, const Dataset& data, const DistillConfig& config,
                             const EpochCallback& on_epoch = {});

double accuracy(const ClassifierModel& model, const Split& split);

void write_training_log_csv(std::ostream& out, std::span<const EpochLog> log);

}  // namespace bssd
