// Acceptance run: one PASS/FAIL line per criterion, details indented below.
// Usage: bssd_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_cases.hpp"
#include "helpers.hpp"

#include "bssd/attack.hpp"
#include "bssd/dataset.hpp"
#include "bssd/distill.hpp"
#include "bssd/experiment.hpp"
#include "bssd/gradcheck.hpp"
#include "bssd/metrics.hpp"
#include "bssd/stats.hpp"

using namespace bssd;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::vector<std::string> details;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1 ---------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  o.pass = true;
  double overall = 0.0;
  for (const auto& c : testing::primitive_cases()) {
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
      worst = std::max(worst, finite_difference_check(c.graph, c.point(1000 + p), 1e-5, 1e-4).max_relative_error);
    }
    overall = std::max(overall, worst);
    if (worst > 1e-4) {
      o.pass = false;
      o.details.push_back(c.name + " worst relative error " + fmt("%.3g", worst));
    }
  }
  double objective = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) objective = std::max(objective, testing::objective_fd_worst(s));
  const double secs = seconds_since(t0);
  o.pass = o.pass && objective <= 1e-4 && secs < 60.0;
  o.details.push_back(std::to_string(testing::primitive_cases().size()) + " primitive cases x 100 points, worst " +
                      fmt("%.3g", overall));
  o.details.push_back("full objective x 100 points, worst " + fmt("%.3g", objective));
  o.details.push_back("runtime " + fmt("%.1f s (limit 60)", secs));
  return o;
}

// 2 ---------------------------------------------------------------------------

Outcome attack_contract() {
  const auto t0 = Clock::now();
  Outcome o;
  AttackConfig attack;  // eta 0.3, I_max 10
  attack.record_trajectory = true;
  std::size_t eligible = 0, success = 0, violations = 0, steps = 0;
  double worst_step = 0.0, min_rate = 1.0, min_teacher = 1.0;
  std::map<AttackStatus, std::size_t> statuses;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TaskConfig task;
    task.dataset = "gaussian2";
    task.teacher_hidden = {32, 32};
    task.teacher_epochs = 60;
    task.data_seed = seed;
    task.teacher_seed = 100 + seed;
    const Dataset data = build_dataset(task);
    const ClassifierModel teacher = obtain_teacher(task, desk_distill_defaults());
    min_teacher = std::min(min_teacher, accuracy(teacher, data.test));

    std::vector<std::size_t> rows, bases, targets;
    const auto pred = teacher.predict_batch(data.train.inputs);
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      if (pred[i] != data.train.labels[i]) continue;
      rows.push_back(i);
      bases.push_back(pred[i]);
      targets.push_back(1 - pred[i]);
    }
    const auto results = find_bss_batch(teacher, data.train.inputs.gather_rows(rows), bases, targets, attack);
    std::size_t ok = 0;
    for (std::size_t r = 0; r < results.size(); ++r) {
      const auto& res = results[r];
      ++statuses[res.status];
      for (std::size_t i = 1; i < res.trajectory.size(); ++i) {
        const double coeff = attack.learning_rate * (res.trajectory[i - 1].loss + attack.offset);
        if (coeff <= 0.0) continue;
        const double rel = std::abs(res.trajectory[i].step_norm - coeff) / coeff;
        worst_step = std::max(worst_step, rel);
        ++steps;
      }
      if (!res.succeeded()) continue;
      ++ok;
      const double final_loss = attack_loss(teacher, res.final_sample, bases[r], targets[r]);
      const double penultimate = res.trajectory[res.trajectory.size() - 2].loss;
      if (!(final_loss < 0.0 && penultimate > 0.0 && res.previous_loss > 0.0)) ++violations;
    }
    eligible += results.size();
    success += ok;
    min_rate = std::min(min_rate, static_cast<double>(ok) / static_cast<double>(results.size()));
  }
  const double rate = static_cast<double>(success) / static_cast<double>(eligible);
  const double secs = seconds_since(t0);
  o.pass = rate >= 0.9 && violations == 0 && worst_step <= 1e-10 && secs < 120.0;
  o.details.push_back("two-Gaussian teachers over 10 seeds, min test accuracy " + fmt("%.4f", min_teacher));
  o.details.push_back("success " + std::to_string(success) + "/" + std::to_string(eligible) + " = " +
                      fmt("%.4f", rate) + " (threshold 0.90), worst seed " + fmt("%.4f", min_rate));
  std::string st = "statuses:";
  for (const auto& [s, n] : statuses) st += " " + std::string(to_string(s)) + "=" + std::to_string(n);
  o.details.push_back(st);
  o.details.push_back("success-invariant violations " + std::to_string(violations));
  o.details.push_back("step-length identity over " + std::to_string(steps) + " steps, worst relative error " +
                      fmt("%.3g", worst_step) + " (limit 1e-10)");
  o.details.push_back("runtime " + fmt("%.1f s (limit 120)", secs));
  return o;
}

// 3 ---------------------------------------------------------------------------

Outcome taylor() {
  Outcome o;
  const auto lin = testing::linear_model(random_tensor({3, 4}, 1), random_tensor({3}, 2));
  double worst_linear = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Tensor x = random_tensor({4}, 10 + s);
    const std::size_t b = lin.predict(x);
    worst_linear = std::max(worst_linear, taylor_residual(lin, x, b, (b + 1) % 3, AttackConfig{}));
  }
  const auto mlp = ClassifierModel::init(mlp_spec(2, {16, 16}, 3, Activation::Tanh), 5);
  double min_order = 1e9, max_order = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const Tensor x = random_tensor({2}, 500 + s);
    const std::size_t b = mlp.predict(x);
    AttackConfig cfg;
    cfg.learning_rate = 1e-3;
    const double coarse = taylor_residual(mlp, x, b, (b + 1) % 3, cfg);
    cfg.learning_rate = 1e-4;
    const double fine = taylor_residual(mlp, x, b, (b + 1) % 3, cfg);
    const double order = std::log10(coarse / fine);
    min_order = std::min(min_order, order);
    max_order = std::max(max_order, order);
  }
  o.pass = worst_linear <= 1e-12 && min_order >= 1.99;
  o.details.push_back("linear model, 100 points: worst residual " + fmt("%.3g", worst_linear) + " (limit 1e-12)");
  o.details.push_back("tanh MLP 16-16, eta 1e-3 vs 1e-4 at 100 points: observed order " + fmt("%.4f", min_order) +
                      " to " + fmt("%.4f", max_order) + " (need >= 1.99)");
  return o;
}

// 4 ---------------------------------------------------------------------------

Outcome metric_identities() {
  Outcome o;
  const auto m = ClassifierModel::init(mlp_spec(2, {16, 16}, 3), 4);
  Split eval;
  eval.inputs = random_tensor({100, 2}, 8);
  eval.labels = m.predict_batch(eval.inputs);
  const auto self = compare_classifiers(m, m, eval, AttackConfig{0.3, 0.01, 50, false});
  const double self_err = std::max(std::abs(self.magsim - 1.0), std::abs(self.angsim - 1.0));

  double mag_err = 0.0, ang_err = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    PerturbationPair p;
    p.second = random_tensor({5}, s);
    p.first = p.second * 2.0;
    const std::vector<PerturbationPair> one{p};
    mag_err = std::max(mag_err, std::abs(magsim(one) - 0.5));
    ang_err = std::max(ang_err, std::abs(angsim(one) - 1.0));
  }
  o.pass = self.pairs_included > 0 && self_err <= 1e-6 && mag_err <= 1e-12 && ang_err <= 1e-12;
  o.details.push_back("self-comparison over " + std::to_string(self.pairs_included) + " pairs: MagSim " +
                      fmt("%.15f", self.magsim) + ", AngSim " + fmt("%.15f", self.angsim));
  o.details.push_back("scaled pairs x 100: worst |MagSim - 0.5| " + fmt("%.3g", mag_err) + ", worst |AngSim - 1| " +
                      fmt("%.3g", ang_err));
  return o;
}

// 5 ---------------------------------------------------------------------------

Outcome target_sampling() {
  Outcome o;
  o.pass = true;
  const std::vector<std::vector<double>> teachers{
      {0.1, 0.45, 0.05, 0.25, 0.15}, {0.7, 0.1, 0.1, 0.1}, {0.02, 0.9, 0.08}, {0.3, 0.3, 0.2, 0.1, 0.05, 0.05}};
  std::uint64_t seed = 2024;
  for (const auto& q : teachers) {
    for (std::size_t base = 0; base < q.size(); base += 2) {
      // Independent expectation: mass of the other classes renormalized.
      std::vector<double> expected(q.size());
      for (std::size_t k = 0; k < q.size(); ++k) expected[k] = k == base ? 0.0 : q[k] / (1.0 - q[base]);
      std::mt19937_64 rng(seed++);
      std::vector<std::size_t> counts(q.size());
      for (int i = 0; i < 100000; ++i) ++counts[sample_target_class(q, base, rng)];
      const auto chi = stats::chi_square_goodness_of_fit(counts, expected);
      const bool ok = counts[base] == 0 && chi.p_value > 0.01;
      o.pass = o.pass && ok;
      o.details.push_back("K=" + std::to_string(q.size()) + " base " + std::to_string(base) + ": chi2 " +
                          fmt("%.3f", chi.statistic) + " dof " + std::to_string(chi.dof) + " p " +
                          fmt("%.4f", chi.p_value) + (ok ? "" : "  <-- rejected at 0.01"));
    }
  }
  return o;
}

// 6-10 share one batch of desk experiments ------------------------------------

struct DeskRuns {
  ExperimentConfig config;
  std::map<std::string, std::vector<ExperimentResult>> full;  // variant -> seeds at fraction 1
  std::map<std::string, std::vector<ExperimentResult>> low;   // variant -> seeds at fraction 0.2
  double main_seconds = 0.0;
  double sweep_seconds = 0.0;
  double ablation_seconds = 0.0;
};

std::vector<double> accuracies(const std::vector<ExperimentResult>& rs) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.test_accuracy);
  return out;
}

std::vector<double> angsims(const std::vector<ExperimentResult>& rs) {
  std::vector<double> out;
  for (const auto& r : rs) out.push_back(r.angsim.value_or(std::nan("")));
  return out;
}

double mean_of(const std::vector<double>& v) { return stats::mean(v); }

DeskRuns& desk_runs() {
  static DeskRuns runs = [] {
    DeskRuns d;
    auto t0 = Clock::now();
    const ClassifierModel teacher = obtain_teacher(d.config.task, d.config.distill);
    std::cerr << "teacher trained in " << seconds_since(t0) << " s, test accuracy "
              << accuracy(teacher, build_dataset(d.config.task).test) << '\n';
    const auto run = [&](const std::vector<CellSpec>& cells, auto& into) {
      for (const auto& c : cells) {
        into[c.variant.name].push_back(run_cell(c, &teacher));
        std::cerr << "  " << c.recipe << ' ' << c.variant.name << " seed " << c.seed << " fraction " << c.fraction
                  << " accuracy " << into[c.variant.name].back().test_accuracy << '\n';
      }
    };
    t0 = Clock::now();
    run(plan_recipe("similarity", d.config), d.full);
    d.main_seconds = seconds_since(t0);

    ExperimentConfig sweep = d.config;
    sweep.fractions = {0.2};
    t0 = Clock::now();
    run(plan_recipe("sweep", sweep), d.low);
    d.sweep_seconds = seconds_since(t0);

    ExperimentConfig ablation = d.config;
    ablation.variants = {"all-selection", "random-selection", "random-target"};
    t0 = Clock::now();
    run(plan_recipe("ablation", ablation), d.full);
    d.ablation_seconds = seconds_since(t0);
    return d;
  }();
  return runs;
}

Outcome distillation_ordering() {
  auto& d = desk_runs();
  Outcome o;
  const auto orig = accuracies(d.full["original"]), hint = accuracies(d.full["hinton"]),
             prop = accuracies(d.full["bss"]);
  const double mo = mean_of(orig), mh = mean_of(hint), mp = mean_of(prop);
  const auto t = stats::paired_t_test(prop, orig);
  o.pass = mp >= mh && mh >= mo && t.mean_difference > 0.0 && t.p_value < 0.05 && d.main_seconds < 900.0;
  o.details.push_back("spiral, teacher MLP 64-64-64, student MLP 16-16, seeds 0-9");
  o.details.push_back("mean test accuracy: proposed " + fmt("%.4f", mp) + ", hinton " + fmt("%.4f", mh) +
                      ", original " + fmt("%.4f", mo));
  o.details.push_back("proposed - original " + fmt("%.4f", t.mean_difference) + ", paired t " +
                      fmt("%.3f", t.t_statistic) + ", one-sided p " + fmt("%.2g", t.p_value) + " (need < 0.05)");
  o.details.push_back("runtime " + fmt("%.1f s (limit 900)", d.main_seconds));
  return o;
}

Outcome generalization_sweep() {
  auto& d = desk_runs();
  Outcome o;
  const double gain_full = mean_of(accuracies(d.full["bss"])) - mean_of(accuracies(d.full["original"]));
  const double gain_low = mean_of(accuracies(d.low["bss"])) - mean_of(accuracies(d.low["original"]));
  o.pass = gain_low > gain_full;
  o.details.push_back("fraction 0.2: proposed " + fmt("%.4f", mean_of(accuracies(d.low["bss"]))) + ", original " +
                      fmt("%.4f", mean_of(accuracies(d.low["original"]))) + ", gain " + fmt("%.4f", gain_low));
  o.details.push_back("fraction 1.0: gain " + fmt("%.4f", gain_full));
  o.details.push_back("runtime of the 0.2 cells " + fmt("%.1f s", d.sweep_seconds));
  return o;
}

Outcome boundary_transfer() {
  auto& d = desk_runs();
  Outcome o;
  const auto ang_p = angsims(d.full["bss"]), ang_o = angsims(d.full["original"]), ang_h = angsims(d.full["hinton"]);
  std::vector<double> mag_p, mag_o, mag_h;
  for (const auto& r : d.full["bss"]) mag_p.push_back(r.magsim.value_or(std::nan("")));
  for (const auto& r : d.full["original"]) mag_o.push_back(r.magsim.value_or(std::nan("")));
  for (const auto& r : d.full["hinton"]) mag_h.push_back(r.magsim.value_or(std::nan("")));
  const double ap = mean_of(ang_p), ao = mean_of(ang_o);
  o.pass = std::isfinite(ap) && std::isfinite(ao) && ap > ao;
  o.details.push_back("mean AngSim vs teacher: proposed " + fmt("%.4f", ap) + ", hinton " +
                      fmt("%.4f", mean_of(ang_h)) + ", original " + fmt("%.4f", ao));
  o.details.push_back("mean MagSim vs teacher (reported only): proposed " + fmt("%.4f", mean_of(mag_p)) +
                      ", hinton " + fmt("%.4f", mean_of(mag_h)) + ", original " + fmt("%.4f", mean_of(mag_o)));
  std::size_t pairs = 0;
  for (const auto& r : d.full["bss"]) pairs += r.similarity_pairs;
  o.details.push_back("included pairs for proposed over 10 seeds: " + std::to_string(pairs));
  return o;
}

Outcome ablation_echo() {
  auto& d = desk_runs();
  Outcome o;
  o.pass = true;
  const auto prop = accuracies(d.full["bss"]);
  o.details.push_back("proposed mean " + fmt("%.4f", mean_of(prop)));
  for (const char* v : {"all-selection", "random-selection", "random-target"}) {
    const auto other = accuracies(d.full[v]);
    // H1: the variant beats proposed.
    const auto t = stats::paired_t_test(other, prop);
    const bool worse = t.mean_difference > 0.0 && t.p_value < 0.05;
    o.pass = o.pass && !worse;
    o.details.push_back(std::string(v) + " mean " + fmt("%.4f", mean_of(other)) + ", variant - proposed " +
                        fmt("%.4f", t.mean_difference) + ", one-sided p " + fmt("%.3g", t.p_value) +
                        (mean_of(prop) >= mean_of(other) ? "  proposed >= variant" : "  not significant") +
                        (worse ? "  <-- proposed significantly worse" : ""));
  }
  o.details.push_back("runtime of the ablation cells " + fmt("%.1f s", d.ablation_seconds));
  return o;
}

Outcome replay_determinism() {
  auto& d = desk_runs();
  Outcome o;
  o.pass = true;
  std::vector<const ExperimentResult*> picks;
  for (const auto& [name, rs] : d.full) picks.push_back(&rs[name.size() % rs.size()]);
  for (const auto& [name, rs] : d.low) picks.push_back(&rs.back());
  // Force the teacher to be retrained from the snapshot as well.
  clear_teacher_memo();
  std::size_t same = 0;
  for (const auto* r : picks) {
    const auto again = replay(r->config_snapshot);
    const bool ok = again.test_accuracy == r->test_accuracy && again.train_accuracy == r->train_accuracy &&
                    again.magsim == r->magsim && again.angsim == r->angsim &&
                    again.teacher_test_accuracy == r->teacher_test_accuracy;
    same += ok;
    if (!ok) {
      o.pass = false;
      o.details.push_back(r->method + " seed " + std::to_string(r->seed) + " differs: " +
                          fmt("%.17g", r->test_accuracy) + " vs " + fmt("%.17g", again.test_accuracy));
    }
  }
  o.details.push_back(std::to_string(same) + "/" + std::to_string(picks.size()) +
                      " replayed cells bitwise identical (accuracies and similarity)");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"attack contract", attack_contract},
      {"taylor diagnostic", taylor},
      {"metric identities", metric_identities},
      {"target sampling", target_sampling},
      {"directional distillation result", distillation_ordering},
      {"generalization sweep", generalization_sweep},
      {"boundary transfer", boundary_transfer},
      {"ablation echo", ablation_echo},
      {"replay determinism", replay_determinism},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));

  std::size_t failed = 0;
  std::ostringstream summary;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.details.push_back(std::string("exception: ") + e.what());
    }
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(i + 1) + ": " +
                             criteria[i].first + " (" + fmt("%.1f", seconds_since(t0)) + " s)";
    std::cout << line << '\n';
    for (const auto& dline : o.details) std::cout << "    " << dline << '\n';
    std::cout.flush();
    summary << line << '\n';
    failed += !o.pass;
  }
  std::cout << "\nsummary\n" << summary.str();
  return failed == 0 ? 0 : 1;
}
