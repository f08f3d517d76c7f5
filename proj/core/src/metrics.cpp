#include "bssd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "bssd/error.hpp"
#include "json.hpp"

namespace bssd {

std::string_view to_string(PairExclusion reason) {
  switch (reason) {
    case PairExclusion::None: return "included";
    case PairExclusion::FirstAttackFailed: return "first_attack_failed";
    case PairExclusion::SecondAttackFailed: return "second_attack_failed";
    case PairExclusion::BothAttacksFailed: return "both_attacks_failed";
    case PairExclusion::ZeroNorm: return "zero_norm";
  }
  return "unknown";
}

PairMetrics pair_metrics(const Tensor& first, const Tensor& second) {
  if (first.size() != second.size()) throw ShapeError("pair_metrics: perturbation shapes differ");
  PairMetrics m;
  m.first_norm = l2_norm(first);
  m.second_norm = l2_norm(second);
  if (m.first_norm > 0.0 && m.second_norm > 0.0) {
    m.magnitude_ratio = std::min(m.first_norm, m.second_norm) / std::max(m.first_norm, m.second_norm);
    m.cosine = dot(first, second) / (m.first_norm * m.second_norm);
  }
  return m;
}

namespace {

template <class Fn>
double mean_over_included(std::span<const PerturbationPair> pairs, Fn value, const char* name) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& p : pairs) {
    if (!p.both_succeeded || p.exclusion != PairExclusion::None) continue;
    const PairMetrics m = pair_metrics(p.first, p.second);
    if (m.first_norm == 0.0 || m.second_norm == 0.0) continue;
    s += value(m);
    ++n;
  }
  if (n == 0) throw ValidationError(std::string(name) + ": no included pairs");
  return s / static_cast<double>(n);
}

}  // namespace

double magsim(std::span<const PerturbationPair> pairs) {
  return mean_over_included(pairs, [](const PairMetrics& m) { return m.magnitude_ratio; }, "magsim");
}

double angsim(std::span<const PerturbationPair> pairs) {
  return mean_over_included(pairs, [](const PairMetrics& m) { return m.cosine; }, "angsim");
}

SimilarityReport compare_classifiers(const ClassifierModel& first, const ClassifierModel& second,
                                     const Split& evaluation, const AttackConfig& attack) {
  if (first.spec().input_shape != second.spec().input_shape || first.num_classes() != second.num_classes()) {
    throw ValidationError("compare_classifiers: models disagree on input shape or class count");
  }
  attack.validate();
  const std::size_t k = first.num_classes();
  SimilarityReport report;
  report.exclusions_by_reason.assign(5, 0);

  const auto pred_a = first.predict_batch(evaluation.inputs);
  const auto pred_b = second.predict_batch(evaluation.inputs);
  std::vector<std::size_t> rows, bases, targets, sample_ids;
  for (std::size_t i = 0; i < evaluation.size(); ++i) {
    const std::size_t y = evaluation.labels[i];
    if (pred_a[i] != y || pred_b[i] != y) {
      ++report.samples_skipped;
      continue;
    }
    ++report.samples_evaluated;
    for (std::size_t c = 0; c < k; ++c) {
      if (c == y) continue;
      rows.push_back(i);
      bases.push_back(y);
      targets.push_back(c);
    }
  }
  report.pairs_attempted = rows.size();
  if (rows.empty()) return report;

  const Tensor starts = evaluation.inputs.gather_rows(rows);
  auto res_a = find_bss_batch(first, starts, bases, targets, attack);
  auto res_b = find_bss_batch(second, starts, bases, targets, attack);

  std::vector<double> mag_sum(k, 0.0), ang_sum(k, 0.0);
  std::vector<std::size_t> count(k, 0);
  double mag_total = 0.0, ang_total = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    PerturbationPair p;
    p.sample_id = rows[j];
    p.base_class = bases[j];
    p.target_class = targets[j];
    p.first = std::move(res_a[j].perturbation);
    p.second = std::move(res_b[j].perturbation);
    const bool ok_a = res_a[j].succeeded(), ok_b = res_b[j].succeeded();
    p.both_succeeded = ok_a && ok_b;
    if (!ok_a && !ok_b) {
      p.exclusion = PairExclusion::BothAttacksFailed;
    } else if (!ok_a) {
      p.exclusion = PairExclusion::FirstAttackFailed;
    } else if (!ok_b) {
      p.exclusion = PairExclusion::SecondAttackFailed;
    } else {
      const PairMetrics m = pair_metrics(p.first, p.second);
      if (m.first_norm == 0.0 || m.second_norm == 0.0) {
        p.exclusion = PairExclusion::ZeroNorm;
      } else {
        mag_total += m.magnitude_ratio;
        ang_total += m.cosine;
        mag_sum[p.target_class] += m.magnitude_ratio;
        ang_sum[p.target_class] += m.cosine;
        ++count[p.target_class];
        ++report.pairs_included;
      }
    }
    ++report.exclusions_by_reason[static_cast<std::size_t>(p.exclusion)];
    report.pairs.push_back(std::move(p));
  }
  if (report.pairs_included > 0) {
    report.magsim = mag_total / static_cast<double>(report.pairs_included);
    report.angsim = ang_total / static_cast<double>(report.pairs_included);
  }
  for (std::size_t c = 0; c < k; ++c) {
    ClassBreakdown b;
    b.target_class = c;
    b.included = count[c];
    if (count[c]) {
      b.magsim = mag_sum[c] / static_cast<double>(count[c]);
      b.angsim = ang_sum[c] / static_cast<double>(count[c]);
    }
    report.per_class.push_back(b);
  }
  return report;
}

void write_similarity_json(std::ostream& out, const SimilarityReport& report) {
  nlohmann::json j;
  j["magsim"] = report.magsim;
  j["angsim"] = report.angsim;
  j["samples_evaluated"] = report.samples_evaluated;
  j["samples_skipped"] = report.samples_skipped;
  j["pairs_attempted"] = report.pairs_attempted;
  j["pairs_included"] = report.pairs_included;
  nlohmann::json excl = nlohmann::json::object();
  for (std::size_t r = 1; r < report.exclusions_by_reason.size(); ++r) {
    excl[std::string(to_string(static_cast<PairExclusion>(r)))] = report.exclusions_by_reason[r];
  }
  j["exclusions"] = excl;
  nlohmann::json per = nlohmann::json::array();
  for (const auto& b : report.per_class) {
    per.push_back({{"target_class", b.target_class}, {"included", b.included}, {"magsim", b.magsim},
                   {"angsim", b.angsim}});
  }
  j["per_class"] = per;
  out << j.dump(2) << '\n';
}

void write_similarity_csv(std::ostream& out, const SimilarityReport& report) {
  out << "sample_id,target,first_norm,second_norm,cosine,included,reason\n";
  const auto prec = out.precision(17);
  for (const auto& p : report.pairs) {
    const PairMetrics m = pair_metrics(p.first, p.second);
    out << p.sample_id << ',' << p.target_class << ',' << m.first_norm << ',' << m.second_norm << ',' << m.cosine
        << ',' << (p.exclusion == PairExclusion::None ? 1 : 0) << ',' << to_string(p.exclusion) << '\n';
  }
  out.precision(prec);
}

}  // namespace bssd
