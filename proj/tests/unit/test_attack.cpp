#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"

#include "bssd/attack.hpp"
#include "bssd/dataset.hpp"
#include "bssd/distill.hpp"
#include "bssd/error.hpp"

using namespace bssd;
using testing::linear_model;
using testing::random_tensor;

namespace {

ClassifierModel spec_linear() { return linear_model(Tensor::matrix({{1, 0}, {-1, 0}}), Tensor::vector({0, 0})); }

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("attack loss examples") {
  const auto m = spec_linear();
  CHECK(attack_loss(m, Tensor::vector({3, 5}), 0, 1) == 6.0);
  CHECK(attack_loss(m, Tensor::vector({0, 5}), 0, 1) == 0.0);
  CHECK_THROWS_AS(attack_loss(m, Tensor::vector({3, 5}), 1, 1), ValidationError);

  const auto r = ClassifierModel::init(mlp_spec(3, {6}, 4), 2);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_tensor({3}, s);
    CHECK(attack_loss(r, x, 1, 3) == -attack_loss(r, x, 3, 1));
  }
}

TEST_CASE("one step on the linear model matches the closed form") {
  // L = 2 x0 and grad L = (2, 0), so the step is 0.3 * 6.01 along -(1, 0).
  const Tensor next = attack_step(spec_linear(), Tensor::vector({3, 5}), 0, 1, AttackConfig{});
  CHECK(next[0] == doctest::Approx(3.0 - 0.3 * 6.01).epsilon(1e-15));
  CHECK(next[1] == 5.0);
}

TEST_CASE("loss equal to minus the offset gives a zero-length step") {
  const Tensor x = Tensor::vector({-0.005, 1.0});
  CHECK(attack_step(spec_linear(), x, 0, 1, AttackConfig{}) == x);
}

TEST_CASE("flat score surface raises DegenerateGradient") {
  const auto flat = linear_model(Tensor(Shape{2, 2}), Tensor::vector({1, 0}));
  CHECK_THROWS_AS(attack_step(flat, Tensor::vector({1, 1}), 0, 1, AttackConfig{}), DegenerateGradient);
  const auto r = find_bss(flat, Tensor::vector({1, 1}), 0, 1, AttackConfig{});
  CHECK(r.status == AttackStatus::DegenerateGradient);
  CHECK_FALSE(r.succeeded());
}

TEST_CASE("invalid attack configs are rejected") {
  CHECK_THROWS_AS((AttackConfig{0.0, 0.01, 10, false}.validate()), ValidationError);
  CHECK_THROWS_AS((AttackConfig{0.3, 0.0, 10, false}.validate()), ValidationError);
  CHECK_THROWS_AS((AttackConfig{0.3, 0.01, 0, false}.validate()), ValidationError);
}

TEST_CASE("linear model success follows the simulated recursion") {
  // On a linear model L_{i+1} = L_i - eta (L_i + eps) |g| exactly.
  const auto m = spec_linear();
  const AttackConfig cfg;
  double l = 6.0, prev = l;
  std::size_t steps = 0;
  while (l >= 0.0) {
    prev = l;
    l = l - cfg.learning_rate * (l + cfg.offset) * 2.0;
    ++steps;
  }
  REQUIRE(steps <= cfg.max_iterations);

  const auto r = find_bss(m, Tensor::vector({3, 5}), 0, 1, cfg);
  CHECK(r.status == AttackStatus::Success);
  CHECK(r.iterations == steps);
  CHECK(r.final_loss == doctest::Approx(l).epsilon(1e-9));
  CHECK(r.previous_loss == doctest::Approx(prev).epsilon(1e-9));
  const Tensor z = m.logits(r.final_sample);
  CHECK(z[1] > z[0]);
  CHECK(r.perturbation == r.final_sample - Tensor::vector({3, 5}));
  CHECK(r.perturbation[1] == 0.0);
}

TEST_CASE("iteration budget of one with a far boundary") {
  AttackConfig cfg;
  cfg.max_iterations = 1;
  const auto r = find_bss(spec_linear(), Tensor::vector({30, 5}), 0, 1, cfg);
  CHECK(r.status == AttackStatus::MaxIterations);
  CHECK(r.iterations == 1);
}

TEST_CASE("base sample already across the pairwise boundary") {
  const auto r = find_bss(spec_linear(), Tensor::vector({-1, 0}), 0, 1, AttackConfig{});
  CHECK(r.status == AttackStatus::AlreadyCrossed);
  CHECK(r.iterations == 0);
  CHECK(l2_norm(r.perturbation) == 0.0);
  CHECK_FALSE(r.succeeded());
}

TEST_CASE("intruding class between base and target") {
  // Three collinear, well separated Gaussian classes; class 1 sits between 0 and 2.
  const Tensor centers = Tensor::matrix({{-6, 0}, {0, 0}, {6, 0}});
  const Tensor cov = Tensor::matrix({{1, 0}, {0, 1}});
  Dataset data = normalize(generate_gaussians(3, 100, centers, cov, 3));
  DistillConfig cfg;
  cfg.epochs = 40;
  cfg.batch_size = 50;
  cfg.base_samples = 16;
  const auto model = train_supervised(ClassifierModel::init(mlp_spec(2, {}, 3), 1), data, cfg).model;
  REQUIRE(accuracy(model, data.train) > 0.99);

  // The trained gap gradient has norm ~11; a small eta keeps eta |g| < 1 so
  // the iterate walks through the middle class instead of jumping over it.
  AttackConfig attack;
  attack.learning_rate = 0.05;
  attack.max_iterations = 100;
  attack.record_trajectory = true;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < data.train.size() && checked < 20; ++i) {
    if (data.train.labels[i] != 0) continue;
    const Tensor x0 = data.train.inputs.row(i);
    if (model.predict(x0) != 0) continue;
    const auto r = find_bss(model, x0, 0, 2, attack);
    CHECK(r.status == AttackStatus::IntrudedClass);
    REQUIRE(r.intruding_class.has_value());
    CHECK(*r.intruding_class == 1);

    // Brute force: replay the steps and find the first iterate where either the
    // gap turns negative or class 1 strictly dominates both 0 and 2.
    Tensor x = x0;
    std::size_t stop = 0;
    for (std::size_t it = 1; it <= attack.max_iterations; ++it) {
      x = attack_step(model, x, 0, 2, attack);
      const Tensor z = model.logits(x);
      if (z[0] - z[2] < 0.0) {
        stop = 0;
        break;
      }
      if (z[1] > z[0] && z[1] > z[2]) {
        stop = it;
        break;
      }
    }
    CHECK(stop == r.iterations);
    CHECK(r.final_sample == x);
    CHECK(r.trajectory.back().predicted == 1);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("success invariants and step-length identity on a random MLP") {
  const auto m = ClassifierModel::init(mlp_spec(4, {12, 12}, 3), 9);
  AttackConfig cfg;
  cfg.record_trajectory = true;
  cfg.max_iterations = 30;
  std::size_t successes = 0;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const Tensor x = random_tensor({4}, 100 + s);
    const std::size_t b = m.predict(x);
    const std::size_t k = (b + 1 + s % 2) % 3;
    const auto r = find_bss(m, x, b, k, cfg);
    REQUIRE(r.trajectory.size() == r.iterations + 1);
    for (std::size_t i = 1; i < r.trajectory.size(); ++i) {
      const double coeff = cfg.learning_rate * (r.trajectory[i - 1].loss + cfg.offset);
      if (coeff > 0.0) CHECK(std::abs(r.trajectory[i].step_norm - coeff) <= 1e-10 * coeff);
    }
    CHECK(r.iterations <= cfg.max_iterations);
    if (r.succeeded()) {
      ++successes;
      CHECK(r.final_loss < 0.0);
      CHECK(r.previous_loss > 0.0);
      CHECK(attack_loss(m, r.final_sample, b, k) == r.final_loss);
    }
  }
  CHECK(successes > 0);
}

TEST_CASE("linear binary classifiers converge when eta |g| < 1") {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Tensor w = random_tensor({2, 5}, s);
    const Tensor bias = random_tensor({2}, 1000 + s);
    const auto m = linear_model(w, bias);
    const Tensor x = random_tensor({5}, 2000 + s, 3.0);
    const std::size_t b = m.predict(x), k = 1 - b;
    Tensor g(Shape{5});
    for (std::size_t j = 0; j < 5; ++j) g[j] = w[b * 5 + j] - w[k * 5 + j];
    AttackConfig cfg;
    cfg.learning_rate = 0.9 / l2_norm(g);
    cfg.max_iterations = 500;
    const auto r = find_bss(m, x, b, k, cfg);
    CHECK((r.status == AttackStatus::Success || r.status == AttackStatus::AlreadyCrossed));
  }
}

TEST_CASE("batched attacks are bitwise equal to single attacks") {
  const auto m = ClassifierModel::init(mlp_spec(3, {10, 10}, 4), 12);
  const Tensor xs = random_tensor({25, 3}, 13, 2.0);
  const auto bases = m.predict_batch(xs);
  std::vector<std::size_t> targets(25);
  for (std::size_t r = 0; r < 25; ++r) targets[r] = (bases[r] + 1 + r % 3) % 4;
  AttackConfig cfg;
  cfg.record_trajectory = true;
  const auto batch = find_bss_batch(m, xs, bases, targets, cfg);
  for (std::size_t r = 0; r < 25; ++r) {
    const auto single = find_bss(m, xs.row(r), bases[r], targets[r], cfg);
    CHECK(batch[r].status == single.status);
    CHECK(batch[r].final_sample == single.final_sample);
    CHECK(batch[r].iterations == single.iterations);
    CHECK(batch[r].final_loss == single.final_loss);
    CHECK(batch[r].trajectory.size() == single.trajectory.size());
  }
}

TEST_CASE("taylor residual") {
  SUBCASE("exact on a linear model") {
    const auto m = linear_model(random_tensor({3, 4}, 1), random_tensor({3}, 2));
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Tensor x = random_tensor({4}, 10 + s);
      const std::size_t b = m.predict(x);
      CHECK(taylor_residual(m, x, b, (b + 1) % 3, AttackConfig{}) <= 1e-12);
    }
  }
  SUBCASE("zero learning rate") {
    const auto m = ClassifierModel::init(mlp_spec(2, {5}, 2, Activation::Tanh), 3);
    AttackConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK(taylor_residual(m, Tensor::vector({0.3, -0.2}), 0, 1, cfg) == 0.0);
  }
  SUBCASE("second order on a smooth MLP") {
    const auto m = ClassifierModel::init(mlp_spec(2, {16, 16}, 3, Activation::Tanh), 5);
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Tensor x = random_tensor({2}, 500 + s);
      const std::size_t b = m.predict(x);
      AttackConfig cfg;
      cfg.learning_rate = 1e-3;
      const double coarse = taylor_residual(m, x, b, (b + 1) % 3, cfg);
      cfg.learning_rate = 1e-4;
      const double fine = taylor_residual(m, x, b, (b + 1) % 3, cfg);
      CHECK(std::log10(coarse / fine) >= 1.99);
    }
  }
}

TEST_CASE("trajectory csv") {
  AttackConfig cfg;
  cfg.record_trajectory = true;
  const auto r = find_bss(spec_linear(), Tensor::vector({3, 5}), 0, 1, cfg);
  std::ostringstream os;
  write_trajectory_csv(os, r);
  const std::string s = os.str();
  CHECK(s.rfind("iteration,loss,step_norm,predicted\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == static_cast<long>(r.iterations + 2));
}

}  // TEST_SUITE
