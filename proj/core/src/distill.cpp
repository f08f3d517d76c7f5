#include "bssd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "bssd/error.hpp"

namespace bssd {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Original: return "original";
    case Method::Hinton: return "hinton";
    case Method::Bss: return "bss";
  }
  return "unknown";
}

std::string_view to_string(SelectionPolicy p) {
  switch (p) {
    case SelectionPolicy::Proposed: return "proposed";
    case SelectionPolicy::All: return "all";
    case SelectionPolicy::Random: return "random";
  }
  return "unknown";
}

std::string_view to_string(TargetPolicy p) {
  switch (p) {
    case TargetPolicy::TeacherProbability: return "teacher-probability";
    case TargetPolicy::Uniform: return "uniform";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  for (Method m : {Method::Original, Method::Hinton, Method::Bss})
    if (to_string(m) == name) return m;
  throw ValidationError("unknown method '" + std::string(name) + "'");
}

SelectionPolicy parse_selection(std::string_view name) {
  for (SelectionPolicy p : {SelectionPolicy::Proposed, SelectionPolicy::All, SelectionPolicy::Random})
    if (to_string(p) == name) return p;
  throw ValidationError("unknown selection policy '" + std::string(name) + "'");
}

TargetPolicy parse_target(std::string_view name) {
  for (TargetPolicy p : {TargetPolicy::TeacherProbability, TargetPolicy::Uniform})
    if (to_string(p) == name) return p;
  throw ValidationError("unknown target policy '" + std::string(name) + "'");
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ValidationError("config: temperature must be positive");
  if (!(beta_zero_fraction > 0.0 && beta_zero_fraction <= 1.0)) {
    throw ValidationError("config: beta zero-point fraction must lie in (0, 1]");
  }
  if (batch_size == 0) throw ValidationError("config: batch size must be positive");
  if (base_samples > batch_size) throw ValidationError("config: base-sample budget exceeds batch size");
  if (epochs == 0) throw ValidationError("config: epochs must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("config: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("config: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ValidationError("config: weight decay must be non-negative");
  attack.validate();
}

Weights schedule(double t, const DistillConfig& config) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("schedule: epoch fraction must lie in [0, 1]");
  Weights w;
  w.alpha = config.alpha_start + (config.alpha_end - config.alpha_start) * t;
  w.beta = std::max(0.0, config.beta_start * (1.0 - t / config.beta_zero_fraction));
  return w;
}

Weights method_weights(double t, const DistillConfig& config) {
  Weights w = schedule(t, config);
  if (config.method == Method::Original) return {};
  if (config.method == Method::Hinton) w.beta = 0.0;
  return w;
}

double learning_rate_at(double epoch_fraction, const DistillConfig& config) {
  double lr = config.learning_rate;
  for (double drop : config.lr_drop_fractions) {
    if (epoch_fraction >= drop) lr *= config.lr_decay;
  }
  return lr;
}

ad::Var soft_cross_entropy(ad::Var logits, const Tensor& target_probabilities, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("soft_cross_entropy: temperature must be positive");
  ad::Tape& tape = logits.tape();
  ad::Var scaled = temperature == 1.0 ? logits : ad::scale(logits, 1.0 / temperature);
  ad::Var per_row = ad::row_sum(ad::mul(ad::log_softmax(scaled), tape.constant(target_probabilities)));
  return ad::scale(ad::mean(per_row), -1.0);
}

namespace {

void check_one_hot(const Tensor& y, std::size_t k) {
  if (y.rank() != 2 || y.dim(1) != k) throw ValidationError("label tensor must be (B, K) one-hot");
  for (std::size_t r = 0; r < y.dim(0); ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = y[r * k + j];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw ValidationError("label row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) throw ValidationError("label row " + std::to_string(r) + " is not one-hot");
  }
}

double evaluate_soft_ce(const ClassifierModel& student, const Tensor& x, const Tensor& targets, double temperature) {
  ad::Tape tape;
  ad::Var z = student.forward(tape.constant(x));
  return soft_cross_entropy(z, targets, temperature).value().item();
}

}  // namespace

double classification_loss(const ClassifierModel& student, const Tensor& x, const Tensor& y_one_hot) {
  check_one_hot(y_one_hot, student.num_classes());
  return evaluate_soft_ce(student, x, y_one_hot, 1.0);
}

double kd_loss(const ClassifierModel& teacher, const ClassifierModel& student, const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("kd_loss: temperature must be positive");
  return evaluate_soft_ce(student, x, softmax_with_temperature(teacher.logits(x), temperature), temperature);
}

double bs_loss(const ClassifierModel& teacher, const ClassifierModel& student, const Tensor& bss, double temperature) {
  return kd_loss(teacher, student, bss, temperature);
}

std::vector<double> target_probabilities(std::span<const double> q, std::size_t base_class) {
  if (base_class >= q.size()) throw ValidationError("target_probabilities: base class out of range");
  const double rest = 1.0 - q[base_class];
  if (rest <= 1e-12) throw NoAlternativeClass("target_probabilities: all probability mass on the base class");
  std::vector<double> p(q.size(), 0.0);
  for (std::size_t k = 0; k < q.size(); ++k) {
    if (k != base_class) p[k] = q[k] / rest;
  }
  return p;
}

namespace {

// Target-class probabilities from logits: softmax over the non-base classes. Equal
// to q_k / (1 - q_c) but free of cancellation when q_c rounds to 1.
std::vector<double> target_probabilities_from_logits(std::span<const double> z, std::size_t base_class) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < z.size(); ++k)
    if (k != base_class) m = std::max(m, z[k]);
  std::vector<double> p(z.size(), 0.0);
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (k != base_class) s += (p[k] = std::exp(z[k] - m));
  }
  for (double& v : p) v /= s;
  return p;
}

void check_target_distribution(std::span<const double> p, std::size_t base_class) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw Error("target distribution has a negative or NaN entry");
    s += v;
  }
  if (p[base_class] != 0.0) throw Error("target distribution puts mass on the base class");
  if (std::abs(s - 1.0) > 1e-12) throw Error("target distribution does not sum to one");
}

std::size_t draw(std::span<const double> p, std::size_t base_class, std::mt19937_64& rng) {
  check_target_distribution(p, base_class);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    acc += p[k];
    last = k;
    if (u < acc) return k;
  }
  return last;
}

}  // namespace

std::size_t sample_target_class(std::span<const double> teacher_probs, std::size_t base_class, std::mt19937_64& rng) {
  const auto p = target_probabilities(teacher_probs, base_class);
  return draw(p, base_class, rng);
}

BatchSelection select_base_samples(const Tensor& teacher_probs, const Tensor& student_probs,
                                   std::span<const std::size_t> labels, std::size_t n) {
  if (teacher_probs.shape() != student_probs.shape() || teacher_probs.rank() != 2 ||
      teacher_probs.dim(0) != labels.size()) {
    throw ShapeError("select_base_samples: probability tensors must be (B, K) and match the labels");
  }
  if (labels.empty()) throw ValidationError("select_base_samples: empty batch");
  const std::size_t k = teacher_probs.dim(1);
  BatchSelection sel;
  std::vector<double> dist;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto qt = teacher_probs.values().subspan(r * k, k);
    const auto qs = student_probs.values().subspan(r * k, k);
    if (argmax(qt) != labels[r] || argmax(qs) != labels[r]) continue;
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) d += (qt[j] - qs[j]) * (qt[j] - qs[j]);
    sel.eligible.push_back(r);
    dist.push_back(d);
  }
  std::vector<std::size_t> order(sel.eligible.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() > n) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
    order.resize(n);
  }
  for (std::size_t i : order) {
    sel.chosen.push_back(sel.eligible[i]);
    sel.distances.push_back(dist[i]);
  }
  return sel;
}

BatchSelection select_base_samples(const ClassifierModel& teacher, const ClassifierModel& student,
                                   const Split& batch, std::size_t n) {
  return select_base_samples(teacher.class_probabilities(batch.inputs, 1.0),
                             student.class_probabilities(batch.inputs, 1.0), batch.labels, n);
}

void SgdMomentum::step(std::span<Tensor> parameters, std::span<const Tensor> gradients, double learning_rate) {
  if (parameters.size() != gradients.size()) throw ShapeError("sgd: parameter/gradient count mismatch");
  if (velocity_.empty()) {
    for (const auto& p : parameters) velocity_.emplace_back(p.shape());
  }
  for (std::size_t i = 0; i < parameters.size(); ++i) {
    Tensor& p = parameters[i];
    const Tensor& g = gradients[i];
    Tensor& v = velocity_[i];
    if (g.shape() != p.shape() || v.shape() != p.shape()) throw ShapeError("sgd: gradient shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double d = g[j] + weight_decay_ * p[j];
      v[j] = momentum_ * v[j] + d;
      p[j] -= learning_rate * v[j];
    }
  }
}

DistillObjective::Terms DistillObjective::build(const ClassifierModel& student, std::span<const ad::Var> params) const {
  ad::Tape& tape = params.front().tape();
  Terms t;
  ad::Var z = student.forward(tape.constant(inputs), params);
  t.cls = soft_cross_entropy(z, labels_one_hot, 1.0);
  t.kd = soft_cross_entropy(z, teacher_soft, temperature);
  t.total = t.cls;
  if (weights.alpha != 0.0) t.total = ad::add(t.total, ad::scale(t.kd, weights.alpha));
  if (bss_inputs.rank() > 0 && bss_inputs.rows() > 0) {
    ad::Var zb = student.forward(tape.constant(bss_inputs), params);
    t.bs = soft_cross_entropy(zb, teacher_bss_soft, temperature);
    t.has_bs = true;
    if (weights.beta != 0.0) t.total = ad::add(t.total, ad::scale(t.bs, weights.beta));
  }
  return t;
}

LossBreakdown train_step(const ClassifierModel& teacher, ClassifierModel& student, const Split& batch,
                         std::size_t num_classes, const DistillConfig& config, Weights weights, double learning_rate,
                         TrainState& state) {
  const std::size_t rows = batch.size();
  if (rows == 0) throw ValidationError("train_step: empty batch");
  const double temp = config.temperature;

  DistillObjective obj;
  obj.inputs = batch.inputs;
  obj.labels_one_hot = one_hot(batch.labels, num_classes);
  obj.temperature = temp;
  obj.weights = weights;

  const Tensor teacher_logits = teacher.logits(batch.inputs);
  obj.teacher_soft = softmax_with_temperature(teacher_logits, temp);

  LossBreakdown out;
  out.alpha = weights.alpha;
  out.beta = weights.beta;

  if (weights.beta > 0.0) {
    const Tensor teacher_q = softmax_with_temperature(teacher_logits, 1.0);
    const Tensor student_q = student.class_probabilities(batch.inputs, 1.0);
    const std::size_t n = std::min(config.base_samples, rows);
    BatchSelection sel;
    switch (config.selection) {
      case SelectionPolicy::Proposed:
        sel = select_base_samples(teacher_q, student_q, batch.labels, n);
        break;
      case SelectionPolicy::All:
        sel = select_base_samples(teacher_q, student_q, batch.labels, rows);
        break;
      case SelectionPolicy::Random: {
        sel = select_base_samples(teacher_q, student_q, batch.labels, rows);
        std::vector<std::size_t> pool = sel.eligible;
        std::shuffle(pool.begin(), pool.end(), state.target_rng);
        if (pool.size() > n) pool.resize(n);
        std::sort(pool.begin(), pool.end());
        sel.chosen = pool;
        break;
      }
    }

    std::vector<std::size_t> base_classes;
    for (std::size_t r : sel.chosen) {
      const std::size_t c = batch.labels[r];
      std::vector<double> p;
      if (config.target == TargetPolicy::TeacherProbability) {
        p = target_probabilities_from_logits(teacher_logits.values().subspan(r * num_classes, num_classes), c);
      } else {
        p.assign(num_classes, 1.0 / static_cast<double>(num_classes - 1));
        p[c] = 0.0;
      }
      sel.targets.push_back(draw(p, c, state.target_rng));
      sel.target_probabilities.push_back(std::move(p));
      base_classes.push_back(c);
    }
    out.selected = sel.chosen.size();

    if (!sel.chosen.empty()) {
      const Tensor bases = batch.inputs.gather_rows(sel.chosen);
      auto samples = generate_samples(config.sample_kind, teacher, bases, base_classes, sel.targets, config.attack,
                                      config.alt, state.target_rng);
      std::vector<Tensor> usable;
      for (auto& s : samples) {
        if (s.usable) usable.push_back(std::move(s.sample));
      }
      out.attempted = samples.size();
      out.succeeded = usable.size();
      if (!usable.empty()) {
        obj.bss_inputs = stack(usable);
        obj.teacher_bss_soft = softmax_with_temperature(teacher.logits(obj.bss_inputs), temp);
      }
    }
  }

  ad::Tape tape;
  const auto params = student.bind(tape, true);
  const auto terms = obj.build(student, params);
  out.cls = terms.cls.value().item();
  out.kd = terms.kd.value().item();
  if (terms.has_bs) {
    out.bs = terms.bs.value().item();
    out.weighted_bs = weights.beta * out.bs;
  }
  out.total = terms.total.value().item();
  if (!std::isfinite(out.total)) throw TrainingDiverged("train_step: non-finite loss");

  const auto grads = tape.backward(terms.total, params);
  std::vector<Tensor> g;
  g.reserve(params.size());
  for (ad::Var p : params) g.push_back(grads[p]);
  state.optimizer.step(student.mutable_parameters(), g, learning_rate);
  return out;
}

double accuracy(const ClassifierModel& model, const Split& split) {
  if (split.size() == 0) return 0.0;
  constexpr std::size_t kChunk = 2048;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += kChunk) {
    const std::size_t end = std::min(split.size(), start + kChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto pred = model.predict_batch(split.inputs.gather_rows(idx));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == split.labels[start + i];
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

TrainResult run_training(const ClassifierModel* teacher, ClassifierModel student, const Dataset& data,
                         DistillConfig config, const EpochCallback& on_epoch) {
  config.validate();
  data.validate();
  if (!teacher) config.method = Method::Original;
  if (student.spec().input_shape != data.train.feature_shape()) {
    throw ShapeError("train: model input " + to_string(student.spec().input_shape) + " does not match data " +
                     to_string(data.train.feature_shape()));
  }
  TrainResult result{std::move(student), {}, {}, 0};
  const std::size_t n = data.train.size();
  if (n == 0) throw ValidationError("train: empty training split");
  if (config.batch_size > n) {
    result.warnings.push_back("batch size " + std::to_string(config.batch_size) + " exceeds training set; using " +
                              std::to_string(n));
    config.batch_size = n;
    config.base_samples = std::min(config.base_samples, n);
  }

  std::mt19937_64 shuffle_rng = stream(config.seed, 1);
  TrainState state{SgdMomentum(config.momentum, config.weight_decay), stream(config.seed, 2)};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  const std::size_t epochs = config.epochs;
  for (std::size_t e = 0; e < epochs; ++e) {
    const double t = epochs > 1 ? static_cast<double>(e) / static_cast<double>(epochs - 1) : 1.0;
    const Weights w = teacher ? method_weights(t, config) : Weights{};
    const double lr = learning_rate_at(static_cast<double>(e) / static_cast<double>(epochs), config);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochLog log;
    log.epoch = e;
    log.learning_rate = lr;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      Split batch;
      batch.inputs = data.train.inputs.gather_rows(idx);
      for (std::size_t i : idx) batch.labels.push_back(data.train.labels[i]);

      LossBreakdown b;
      try {
        b = train_step(teacher ? *teacher : result.model, result.model, batch, data.num_classes, config, w, lr, state);
      } catch (const NonFiniteError& err) {
        throw TrainingDiverged("train: epoch " + std::to_string(e) + " batch " + std::to_string(batches) + ": " +
                               err.what());
      } catch (const TrainingDiverged& err) {
        throw TrainingDiverged("train: epoch " + std::to_string(e) + " batch " + std::to_string(batches) + ": " +
                               err.what());
      }
      log.loss.cls += b.cls;
      log.loss.kd += b.kd;
      log.loss.bs += b.bs;
      log.loss.weighted_bs += b.weighted_bs;
      log.loss.total += b.total;
      log.loss.selected += b.selected;
      log.loss.attempted += b.attempted;
      log.loss.succeeded += b.succeeded;
      result.dropped_samples += b.attempted - b.succeeded;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    log.loss.cls *= inv;
    log.loss.kd *= inv;
    log.loss.bs *= inv;
    log.loss.weighted_bs *= inv;
    log.loss.total *= inv;
    log.loss.alpha = w.alpha;
    log.loss.beta = w.beta;
    log.attack_success_rate =
        log.loss.attempted ? static_cast<double>(log.loss.succeeded) / static_cast<double>(log.loss.attempted) : 0.0;
    log.train_accuracy = accuracy(result.model, data.train);
    log.test_accuracy = accuracy(result.model, data.test);
    if (on_epoch) on_epoch(log);
    result.log.push_back(log);
  }
  return result;
}

}  // namespace

TrainResult train(const ClassifierModel& teacher, ClassifierModel student, const Dataset& data,
                  const DistillConfig& config, const EpochCallback& on_epoch) {
  if (teacher.spec().input_shape != student.spec().input_shape || teacher.num_classes() != student.num_classes()) {
    throw ValidationError("train: teacher and student disagree on input shape or class count");
  }
  return run_training(&teacher, std::move(student), data, config, on_epoch);
}

TrainResult train_supervised(ClassifierModel model, const Dataset& data, const DistillConfig& config,
                             const EpochCallback& on_epoch) {
  return run_training(nullptr, std::move(model), data, config, on_epoch);
}

void write_training_log_csv(std::ostream& out, std::span<const EpochLog> log) {
  out << "epoch,l_cls,l_kd,bs_term,alpha,beta,train_acc,test_acc,attack_success_rate\n";
  const auto prec = out.precision(10);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss.cls << ',' << e.loss.kd << ',' << e.loss.weighted_bs << ',' << e.loss.alpha << ','
        << e.loss.beta << ',' << e.train_accuracy << ',' << e.test_accuracy << ',' << e.attack_success_rate << '\n';
  }
  out.precision(prec);
}

}  // namespace bssd
