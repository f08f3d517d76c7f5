#include "bssd/attack.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bssd/error.hpp"

namespace bssd {

void AttackConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("attack: learning rate must be positive");
  if (!(offset > 0.0)) throw ValidationError("attack: offset must be positive");
  if (max_iterations < 1) throw ValidationError("attack: max_iterations must be at least 1");
}

std::string_view to_string(AttackStatus status) {
  switch (status) {
    case AttackStatus::Success: return "success";
    case AttackStatus::AlreadyCrossed: return "already_crossed";
    case AttackStatus::IntrudedClass: return "intruded_class";
    case AttackStatus::MaxIterations: return "max_iterations";
    case AttackStatus::DegenerateGradient: return "degenerate_gradient";
  }
  return "unknown";
}

namespace {

void check_classes(const ClassifierModel& model, std::size_t base, std::size_t target) {
  const std::size_t k = model.num_classes();
  if (base >= k || target >= k) throw ValidationError("attack: class index out of range");
  if (base == target) throw ValidationError("attack: base and target class must differ");
}

Tensor batched(const ClassifierModel& model, const Tensor& x) {
  if (x.shape() != model.spec().input_shape) {
    throw ShapeError("attack: sample " + to_string(x.shape()) + " does not match model input " +
                     to_string(model.spec().input_shape));
  }
  Shape s = x.shape();
  s.insert(s.begin(), 1);
  return x.reshaped(std::move(s));
}

// Largest logit strictly above both f_b and f_k, excluding b and k.
std::optional<std::size_t> intruder(std::span<const double> z, std::size_t base, std::size_t target) {
  const double bar = std::max(z[base], z[target]);
  std::optional<std::size_t> found;
  for (std::size_t c = 0; c < z.size(); ++c) {
    if (c == base || c == target) continue;
    if (z[c] > bar && (!found || z[c] > z[*found])) found = c;
  }
  return found;
}

}  // namespace

GapGradient logit_gap_gradient(const ClassifierModel& model, const Tensor& batch,
                               std::span<const std::size_t> base_classes, std::span<const std::size_t> targets) {
  const std::size_t rows = batch.rows();
  const std::size_t k = model.num_classes();
  if (base_classes.size() != rows || targets.size() != rows) {
    throw ShapeError("attack: class lists do not match batch size");
  }
  Tensor coef(Shape{rows, k});
  for (std::size_t r = 0; r < rows; ++r) {
    check_classes(model, base_classes[r], targets[r]);
    coef[r * k + base_classes[r]] = 1.0;
    coef[r * k + targets[r]] = -1.0;
  }
  ad::Tape tape;
  ad::Var x = tape.leaf(batch);
  ad::Var z = model.forward(x);
  ad::Var gap = ad::sum(ad::mul(z, tape.constant(std::move(coef))));
  GapGradient out;
  out.logits = z.value();
  out.gradient = tape.backward(gap, {x})[x];
  out.gaps.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out.gaps[r] = out.logits[r * k + base_classes[r]] - out.logits[r * k + targets[r]];
  }
  return out;
}

double attack_loss(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target) {
  check_classes(model, base, target);
  const Tensor z = model.logits(x);
  if (z.rank() != 1) throw ShapeError("attack_loss: expects a single unbatched sample");
  return z[base] - z[target];
}

Tensor attack_step(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                   const AttackConfig& config) {
  const std::size_t b[] = {base};
  const std::size_t t[] = {target};
  const GapGradient gg = logit_gap_gradient(model, batched(model, x), b, t);
  const double norm = l2_norm(gg.gradient);
  if (norm < kDegenerateGradientNorm) throw DegenerateGradient("attack: gradient norm below threshold");
  const double coef = config.learning_rate * (gg.gaps[0] + config.offset) / norm;
  Tensor next = x;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= coef * gg.gradient[i];
  return next;
}

std::vector<AttackResult> find_bss_batch(const ClassifierModel& model, const Tensor& bases,
                                         std::span<const std::size_t> base_classes,
                                         std::span<const std::size_t> targets, const AttackConfig& config) {
  config.validate();
  const std::size_t rows = bases.rows();
  const std::size_t k = model.num_classes();
  const std::size_t width = bases.row_size();
  if (base_classes.size() != rows || targets.size() != rows) {
    throw ShapeError("find_bss: class lists do not match batch size");
  }
  for (std::size_t r = 0; r < rows; ++r) check_classes(model, base_classes[r], targets[r]);

  std::vector<AttackResult> results(rows);
  Tensor current = bases;
  std::vector<std::size_t> active(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    active[r] = r;
    results[r].base_class = base_classes[r];
    results[r].target_class = targets[r];
  }

  auto finish = [&](std::size_t r, AttackStatus status) {
    AttackResult& res = results[r];
    res.status = status;
    res.final_sample = current.row(r);
    res.perturbation = res.final_sample - bases.row(r);
    const auto v = res.final_sample.values();
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    res.min_value = *lo;
    res.max_value = *hi;
  };

  std::vector<std::size_t> b_act, t_act, still;
  while (!active.empty()) {
    b_act.clear();
    t_act.clear();
    for (std::size_t r : active) {
      b_act.push_back(base_classes[r]);
      t_act.push_back(targets[r]);
    }
    const GapGradient gg = logit_gap_gradient(model, current.gather_rows(active), b_act, t_act);

    still.clear();
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t r = active[a];
      AttackResult& res = results[r];
      const double gap = gg.gaps[a];
      const auto z = gg.logits.values().subspan(a * k, k);

      if (res.iterations == 0) {
        res.final_loss = gap;
        if (config.record_trajectory) res.trajectory.push_back({0, gap, 0.0, argmax(z)});
        if (gap <= 0.0) {
          finish(r, AttackStatus::AlreadyCrossed);
          continue;
        }
      } else {
        res.previous_loss = res.final_loss;
        res.final_loss = gap;
        if (config.record_trajectory) {
          res.trajectory.back().loss = gap;
          res.trajectory.back().predicted = argmax(z);
        }
        if (gap < 0.0 && res.previous_loss > 0.0) {
          finish(r, AttackStatus::Success);
          continue;
        }
        if (auto in = intruder(z, res.base_class, res.target_class)) {
          res.intruding_class = in;
          finish(r, AttackStatus::IntrudedClass);
          continue;
        }
        if (res.iterations >= config.max_iterations) {
          finish(r, AttackStatus::MaxIterations);
          continue;
        }
      }

      const double* g = gg.gradient.data() + a * width;
      double norm2 = 0.0;
      for (std::size_t i = 0; i < width; ++i) norm2 += g[i] * g[i];
      const double norm = std::sqrt(norm2);
      if (norm < kDegenerateGradientNorm) {
        finish(r, AttackStatus::DegenerateGradient);
        continue;
      }
      const double coef = config.learning_rate * (gap + config.offset) / norm;
      double* x = current.data() + r * width;
      double step2 = 0.0;
      for (std::size_t i = 0; i < width; ++i) {
        const double before = x[i];
        x[i] -= coef * g[i];
        step2 += (x[i] - before) * (x[i] - before);
      }
      ++res.iterations;
      if (config.record_trajectory) res.trajectory.push_back({res.iterations, 0.0, std::sqrt(step2), 0});
      still.push_back(r);
    }
    active.swap(still);
  }
  return results;
}

AttackResult find_bss(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                      const AttackConfig& config) {
  const std::size_t b[] = {base};
  const std::size_t t[] = {target};
  return std::move(find_bss_batch(model, batched(model, x), b, t, config).front());
}

double taylor_residual(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                       const AttackConfig& config) {
  const std::size_t b[] = {base};
  const std::size_t t[] = {target};
  const GapGradient gg = logit_gap_gradient(model, batched(model, x), b, t);
  const double norm = l2_norm(gg.gradient);
  if (norm < kDegenerateGradientNorm) throw DegenerateGradient("taylor_residual: gradient norm below threshold");
  const double eta = config.learning_rate;
  const double coef = eta * (gg.gaps[0] + config.offset) / norm;
  Tensor next = x;
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= coef * gg.gradient[i];
  const double predicted = gg.gaps[0] * (1.0 - eta * norm) - eta * config.offset * norm;
  return std::abs(attack_loss(model, next, base, target) - predicted);
}

void write_trajectory_csv(std::ostream& out, const AttackResult& result) {
  out << "iteration,loss,step_norm,predicted\n";
  const auto prec = out.precision(17);
  for (const auto& p : result.trajectory) {
    out << p.iteration << ',' << p.loss << ',' << p.step_norm << ',' << p.predicted << '\n';
  }
  out.precision(prec);
}

}  // namespace bssd
