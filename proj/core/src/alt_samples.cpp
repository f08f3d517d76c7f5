#include "bssd/alt_samples.hpp"

#include <cmath>
#include <limits>

#include "bssd/dataset.hpp"
#include "bssd/error.hpp"

namespace bssd {

std::string_view to_string(SampleKind kind) {
  switch (kind) {
    case SampleKind::Bss: return "bss";
    case SampleKind::RandomNoise: return "random-noise";
    case SampleKind::Fgsm: return "fgsm";
    case SampleKind::DeepFool: return "deepfool";
    case SampleKind::L2Minimize: return "l2-minimize";
  }
  return "unknown";
}

SampleKind parse_sample_kind(std::string_view name) {
  for (SampleKind k : {SampleKind::Bss, SampleKind::RandomNoise, SampleKind::Fgsm, SampleKind::DeepFool,
                       SampleKind::L2Minimize}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown sample kind '" + std::string(name) + "'");
}

double gaussian_sigma_for_norm(std::size_t dim, double norm) {
  if (dim == 0) throw ValidationError("gaussian_sigma_for_norm: zero dimension");
  // E|z| for z ~ N(0, I_d) is sqrt(2) Gamma((d+1)/2) / Gamma(d/2).
  const double d = static_cast<double>(dim);
  const double chi_mean = std::sqrt(2.0) * std::exp(std::lgamma((d + 1.0) / 2.0) - std::lgamma(d / 2.0));
  return norm / chi_mean;
}

Tensor random_noise_sample(const Tensor& base, double expected_norm, std::mt19937_64& rng) {
  if (expected_norm < 0.0) throw ValidationError("random_noise_sample: negative norm");
  std::normal_distribution<double> normal(0.0, gaussian_sigma_for_norm(base.size(), expected_norm));
  Tensor out = base;
  for (double& v : out.values()) v += normal(rng);
  return out;
}

namespace {

Tensor as_batch(const ClassifierModel& model, const Tensor& x) {
  if (x.shape() != model.spec().input_shape) {
    throw ShapeError("sample " + to_string(x.shape()) + " does not match model input " +
                     to_string(model.spec().input_shape));
  }
  Shape s = x.shape();
  s.insert(s.begin(), 1);
  return x.reshaped(std::move(s));
}

}  // namespace

Tensor fgsm_sample(const ClassifierModel& model, const Tensor& x, std::size_t label, double step) {
  if (label >= model.num_classes()) throw ValidationError("fgsm: label out of range");
  ad::Tape tape;
  ad::Var in = tape.leaf(as_batch(model, x));
  ad::Var z = model.forward(in);
  const std::size_t lab[] = {label};
  ad::Var ce = ad::scale(ad::sum(ad::mul(ad::log_softmax(z), tape.constant(one_hot(lab, model.num_classes())))), -1.0);
  const Tensor g = tape.backward(ce, {in})[in];
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    out[i] += step * s;
  }
  return out;
}

DeepFoolResult deepfool(const ClassifierModel& model, const Tensor& x, std::size_t label, double overshoot,
                        std::size_t max_iterations) {
  const std::size_t k = model.num_classes();
  if (label >= k) throw ValidationError("deepfool: label out of range");
  DeepFoolResult res;
  Tensor total(x.shape());
  Tensor current = x;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    if (model.predict(current) != label) {
      res.crossed = true;
      break;
    }
    double best_ratio = std::numeric_limits<double>::infinity();
    Tensor best_w;
    double best_gap = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == label) continue;
      const std::size_t from[] = {c};
      const std::size_t to[] = {label};
      // w_c = grad(f_c - f_label), gap = f_c - f_label (negative while unchanged)
      GapGradient gg = logit_gap_gradient(model, as_batch(model, current), from, to);
      const double norm = l2_norm(gg.gradient);
      if (norm < kDegenerateGradientNorm) continue;
      const double ratio = std::abs(gg.gaps[0]) / norm;
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best_w = gg.gradient.reshaped(x.shape());
        best_gap = gg.gaps[0];
      }
    }
    if (best_w.size() != x.size()) break;
    const double wn2 = dot(best_w, best_w);
    total += best_w * ((std::abs(best_gap) + 1e-4) / wn2);
    current = x + total * (1.0 + overshoot);
    ++res.iterations;
  }
  if (!res.crossed) res.crossed = model.predict(current) != label;
  res.sample = std::move(current);
  return res;
}

Tensor l2_minimize(const ClassifierModel& model, const Tensor& x, std::size_t base, std::size_t target,
                   const AttackConfig& attack, double penalty) {
  attack.validate();
  Tensor current = x;
  const std::size_t b[] = {base};
  const std::size_t t[] = {target};
  for (std::size_t it = 0; it < attack.max_iterations; ++it) {
    const GapGradient gg = logit_gap_gradient(model, as_batch(model, current), b, t);
    if (gg.gaps[0] < 0.0) break;
    for (std::size_t i = 0; i < current.size(); ++i) {
      current[i] -= attack.learning_rate * (gg.gradient[i] + 2.0 * penalty * (current[i] - x[i]));
    }
  }
  return current;
}

std::vector<GeneratedSample> generate_samples(SampleKind kind, const ClassifierModel& teacher, const Tensor& bases,
                                              std::span<const std::size_t> base_classes,
                                              std::span<const std::size_t> targets, const AttackConfig& attack,
                                              const AltSampleConfig& alt, std::mt19937_64& rng) {
  const std::size_t rows = bases.rows();
  std::vector<GeneratedSample> out(rows);
  if (kind == SampleKind::Bss) {
    auto results = find_bss_batch(teacher, bases, base_classes, targets, attack);
    for (std::size_t r = 0; r < rows; ++r) {
      out[r].status = results[r].status;
      out[r].usable = results[r].succeeded();
      out[r].sample = std::move(results[r].final_sample);
    }
    return out;
  }
  if (kind == SampleKind::RandomNoise && !(alt.noise_norm > 0.0)) {
    throw ValidationError("random-noise samples need a positive noise norm");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const Tensor base = bases.row(r);
    GeneratedSample& g = out[r];
    g.usable = true;
    switch (kind) {
      case SampleKind::RandomNoise:
        g.sample = random_noise_sample(base, alt.noise_norm, rng);
        break;
      case SampleKind::Fgsm:
        g.sample = fgsm_sample(teacher, base, base_classes[r], alt.fgsm_step);
        break;
      case SampleKind::DeepFool:
        g.sample = deepfool(teacher, base, base_classes[r], alt.deepfool_overshoot, alt.deepfool_max_iterations).sample;
        break;
      case SampleKind::L2Minimize:
        g.sample = l2_minimize(teacher, base, base_classes[r], targets[r], attack, alt.l2_penalty);
        break;
      case SampleKind::Bss:
        break;
    }
  }
  return out;
}

}  // namespace bssd
