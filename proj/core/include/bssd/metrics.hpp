#pragma once

// Decision-boundary similarity from paired perturbations. For a base sample
// and target class, each classifier's boundary supporting sample gives a
// perturbation (sample - base); MagSim averages min/max of the pair's norms
// and AngSim averages their cosine.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "bssd/attack.hpp"
#include "bssd/dataset.hpp"
#include "bssd/model.hpp"

namespace bssd {

enum class PairExclusion {
  None,
  FirstAttackFailed,
  SecondAttackFailed,
  BothAttacksFailed,
  ZeroNorm,
};

std::string_view to_string(PairExclusion reason);

struct PerturbationPair {
  std::size_t sample_id = 0;
  std::size_t base_class = 0;
  std::size_t target_class = 0;
  Tensor first;   // teacher (model A) perturbation
  Tensor second;  // student (model B) perturbation
  bool both_succeeded = true;
  PairExclusion exclusion = PairExclusion::None;
};

struct PairMetrics {
  double first_norm = 0.0;
  double second_norm = 0.0;
  double magnitude_ratio = 0.0;
  double cosine = 0.0;
};

PairMetrics pair_metrics(const Tensor& first, const Tensor& second);

struct ClassBreakdown {
  std::size_t target_class = 0;
  std::size_t included = 0;
  double magsim = 0.0;
  double angsim = 0.0;
};

struct SimilarityReport {
  double magsim = 0.0;
  double angsim = 0.0;
  std::size_t samples_evaluated = 0;
  std::size_t samples_skipped = 0;  // not correctly classified by both models
  std::size_t pairs_attempted = 0;
  std::size_t pairs_included = 0;
  std::vector<std::size_t> exclusions_by_reason;  // indexed by PairExclusion
  std::vector<ClassBreakdown> per_class;
  std::vector<PerturbationPair> pairs;
};

// Means over the pairs that are marked both_succeeded and have non-zero norms.
// Pairs with a zero-norm perturbation are excluded. Throws ValidationError
// when nothing remains.
double magsim(std::span<const PerturbationPair> pairs);
double angsim(std::span<const PerturbationPair> pairs);

// Attacks both models from every evaluation sample correctly classified by
// both, toward every other class, and aggregates in a fixed order.
SimilarityReport compare_classifiers(const ClassifierModel& first, const ClassifierModel& second,
                                     const Split& evaluation, const AttackConfig& attack);

// {"magsim":..,"angsim":..,counts..,"per_class":[..]}
void write_similarity_json(std::ostream& out, const SimilarityReport& report);
// sample_id,target,first_norm,second_norm,cosine,included,reason
void write_similarity_csv(std::ostream& out, const SimilarityReport& report);

}  // namespace bssd
