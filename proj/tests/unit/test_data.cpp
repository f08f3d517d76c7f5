#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "helpers.hpp"

#include "bssd/alt_samples.hpp"
#include "bssd/dataset.hpp"
#include "bssd/distill.hpp"
#include "bssd/error.hpp"
#include "bssd/stats.hpp"

using namespace bssd;
using testing::linear_model;
using testing::random_tensor;

namespace {

const Tensor kIdentity2 = Tensor::matrix({{1, 0}, {0, 1}});

std::set<std::vector<double>> row_set(const Split& s) {
  std::set<std::vector<double>> out;
  const std::size_t f = s.inputs.row_size();
  for (std::size_t r = 0; r < s.size(); ++r) {
    out.emplace(s.inputs.values().begin() + static_cast<std::ptrdiff_t>(r * f),
                s.inputs.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * f));
  }
  return out;
}

std::filesystem::path scratch(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "bssd_unit_data";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("gaussians: converged teacher flips at the Bayes boundary") {
  const Tensor centers = Tensor::matrix({{-2, 0}, {2, 0}});
  const Dataset data = normalize(generate_gaussians(2, 400, centers, kIdentity2, 11));
  DistillConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  cfg.base_samples = 16;
  const auto teacher = train_supervised(ClassifierModel::init(mlp_spec(2, {8}, 2), 2), data, cfg).model;
  CHECK(accuracy(teacher, data.test) > 0.95);

  // Probe grid in raw coordinates, mapped through the training statistics.
  const auto& st = *data.normalization;
  std::size_t probes = 0;
  for (double x1 = -3.0; x1 <= 3.0 + 1e-9; x1 += 0.25) {
    if (std::abs(x1) < 0.5) continue;
    for (double x2 = -2.0; x2 <= 2.0 + 1e-9; x2 += 0.5) {
      const Tensor p = Tensor::vector({(x1 - st.mean[0]) / st.stddev[0], (x2 - st.mean[1]) / st.stddev[1]});
      CHECK(teacher.predict(p) == (x1 > 0.0 ? 1u : 0u));
      ++probes;
    }
  }
  CHECK(probes > 100);
}

TEST_CASE("gaussians: determinism, boundary sizes, and errors") {
  const Tensor centers = Tensor::matrix({{-2, 0}, {2, 0}});
  const Dataset a = generate_gaussians(2, 20, centers, kIdentity2, 5);
  const Dataset b = generate_gaussians(2, 20, centers, kIdentity2, 5);
  CHECK(a.train.inputs == b.train.inputs);
  CHECK(a.test.inputs == b.test.inputs);
  CHECK(a.train.labels == b.train.labels);
  CHECK(generate_gaussians(2, 20, centers, kIdentity2, 6).train.inputs != a.train.inputs);

  const Dataset one = generate_gaussians(2, 1, centers, kIdentity2, 1);
  CHECK(one.train.size() == 2);
  CHECK(one.train.labels == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(generate_gaussians(2, 5, centers, Tensor::matrix({{1, 1}, {1, 1}}), 0), ValidationError);
  CHECK_THROWS_AS(generate_gaussians(2, 5, centers, Tensor::matrix({{1, 0}, {0, -1}}), 0), ValidationError);
  CHECK_THROWS_AS(generate_gaussians(1, 5, Tensor::matrix({{0, 0}}), kIdentity2, 0), ValidationError);
  CHECK_THROWS_AS(generate_gaussians(2, 5, Tensor::matrix({{0, 0, 0}, {1, 1, 1}}), kIdentity2, 0), ShapeError);
}

TEST_CASE("gaussians: sample moments follow centers and covariance") {
  const Tensor centers = Tensor::matrix({{1, -1}, {-3, 2}});
  const Tensor cov = Tensor::matrix({{2.0, 0.6}, {0.6, 0.5}});
  const Dataset d = generate_gaussians(2, 20000, centers, cov, 9);
  for (std::size_t c = 0; c < 2; ++c) {
    double m0 = 0, m1 = 0, s00 = 0, s01 = 0, s11 = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < d.train.size(); ++r) {
      if (d.train.labels[r] != c) continue;
      const double x = d.train.inputs[r * 2] - centers[c * 2], y = d.train.inputs[r * 2 + 1] - centers[c * 2 + 1];
      m0 += x, m1 += y, s00 += x * x, s01 += x * y, s11 += y * y;
      ++n;
    }
    const double k = static_cast<double>(n);
    CHECK(std::abs(m0 / k) < 0.05);
    CHECK(std::abs(m1 / k) < 0.05);
    CHECK(s00 / k == doctest::Approx(2.0).epsilon(0.05));
    CHECK(s01 / k == doctest::Approx(0.6).epsilon(0.08));
    CHECK(s11 / k == doctest::Approx(0.5).epsilon(0.05));
  }
}

TEST_CASE("spirals") {
  const std::size_t k = 3;
  const SpiralOptions opt{1.5, 0.2};
  const Dataset d = generate_spirals(k, 50, 0.0, 4, 20, opt);
  CHECK(d.train.size() == 150);
  CHECK(d.test.size() == 60);
  std::vector<std::size_t> counts(k);
  for (std::size_t r = 0; r < d.train.size(); ++r) {
    const std::size_t c = d.train.labels[r];
    ++counts[c];
    // Recover t from the radius and check the point sits on arm c.
    const double x = d.train.inputs[r * 2], y = d.train.inputs[r * 2 + 1];
    const double t = std::hypot(x, y);
    CHECK(t >= opt.radius_start - 1e-12);
    CHECK(t <= 1.0 + 1e-12);
    const double angle = 2.0 * std::numbers::pi * (opt.turns * t + static_cast<double>(c) / k);
    CHECK(std::abs(x - t * std::cos(angle)) <= 1e-12);
    CHECK(std::abs(y - t * std::sin(angle)) <= 1e-12);
  }
  for (auto n : counts) CHECK(n == 50);

  const Dataset e = generate_spirals(k, 50, 0.1, 4);
  CHECK(e.train.inputs == generate_spirals(k, 50, 0.1, 4).train.inputs);
  CHECK(e.train.inputs != generate_spirals(k, 50, 0.1, 5).train.inputs);
  CHECK_THROWS_AS(generate_spirals(1, 5, 0.0, 0), ValidationError);
  CHECK_THROWS_AS(generate_spirals(2, 5, -0.1, 0), ValidationError);
}

TEST_CASE("idx: hand-built 2-image 3x3 stream") {
  std::string images{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0, 3};
  for (int i = 0; i < 18; ++i) images.push_back(static_cast<char>(i * 15));
  const std::string labels{0, 0, 8, 1, 0, 0, 0, 2, 1, 0};

  const IdxArray img = parse_idx(images);
  CHECK(img.dims == std::vector<std::uint32_t>{2, 3, 3});
  CHECK(img.data.size() == 18);
  CHECK(img.data[17] == 255);
  CHECK(encode_idx(img) == images);

  const auto ip = scratch("img.idx"), lp = scratch("lab.idx");
  write_idx(ip, img);
  write_idx(lp, parse_idx(labels));
  CHECK(read_idx(ip) == img);
  const Dataset d = load_idx(ip, lp);
  CHECK(d.train.inputs.shape() == Shape{2, 3, 3});
  CHECK(d.train.labels == std::vector<std::size_t>{1, 0});
  CHECK(d.num_classes == 2);
  CHECK(d.train.inputs[0] == 0.0);
  CHECK(d.train.inputs[17] == 1.0);
  CHECK(d.train.inputs[1] == 15.0 / 255.0);
  CHECK(with_channel_axis(d.train).inputs.shape() == Shape{2, 1, 3, 3});

  // Count mismatch between the two files.
  write_idx(lp, IdxArray{{3}, {0, 1, 1}});
  CHECK_THROWS_WITH_AS(load_idx(ip, lp), doctest::Contains("byte offset"), FormatError);
}

TEST_CASE("idx: malformed streams report a byte offset") {
  CHECK_THROWS_WITH_AS(parse_idx(""), doctest::Contains("byte offset 0"), FormatError);
  CHECK_THROWS_WITH_AS(parse_idx(std::string{1, 0, 8, 1, 0, 0, 0, 0}), doctest::Contains("byte offset 0"), FormatError);
  CHECK_THROWS_WITH_AS(parse_idx(std::string{0, 0, 9, 1, 0, 0, 0, 0}), doctest::Contains("byte offset 2"), FormatError);
  CHECK_THROWS_WITH_AS(parse_idx(std::string{0, 0, 8, 2, 0, 0}), doctest::Contains("byte offset 6"), FormatError);
  CHECK_THROWS_WITH_AS(parse_idx(std::string{0, 0, 8, 1, 0, 0, 0, 3, 7}), doctest::Contains("truncated payload"),
                       FormatError);
  CHECK_THROWS_WITH_AS(parse_idx(std::string{0, 0, 8, 1, 0, 0, 0, 1, 7, 7}), doctest::Contains("byte offset 9"),
                       FormatError);

  const auto empty = scratch("empty.idx");
  { std::ofstream(empty, std::ios::binary | std::ios::trunc); }
  CHECK_THROWS_AS(read_idx(empty), FormatError);
  CHECK_THROWS_AS(read_idx(scratch("missing.idx")), Error);
}

TEST_CASE("idx: random round trip is byte identical") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    IdxArray a;
    std::size_t n = 1;
    const auto rank = 1 + rng() % 3;
    for (std::size_t d = 0; d < rank; ++d) {
      a.dims.push_back(static_cast<std::uint32_t>(1 + rng() % 5));
      n *= a.dims.back();
    }
    for (std::size_t i = 0; i < n; ++i) a.data.push_back(static_cast<std::uint8_t>(rng()));
    const auto p = scratch("round.idx");
    write_idx(p, a);
    std::ifstream in(p, std::ios::binary);
    const std::string on_disk((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(on_disk == encode_idx(a));
    CHECK(read_idx(p) == a);
  }
}

TEST_CASE("normalize") {
  Dataset d = generate_gaussians(2, 200, Tensor::matrix({{-2, 5}, {2, 5}}), kIdentity2, 1);
  // Make feature 1 of the training split constant.
  for (std::size_t r = 0; r < d.train.size(); ++r) d.train.inputs[r * 2 + 1] = 5.0;
  const Dataset n = normalize(d);
  REQUIRE(n.normalized());
  CHECK(n.normalization->flagged_features == std::vector<std::size_t>{1});
  double m0 = 0, v0 = 0;
  for (std::size_t r = 0; r < n.train.size(); ++r) {
    m0 += n.train.inputs[r * 2];
    v0 += n.train.inputs[r * 2] * n.train.inputs[r * 2];
    CHECK(n.train.inputs[r * 2 + 1] == 0.0);
  }
  CHECK(std::abs(m0 / 400.0) <= 1e-10);
  CHECK(v0 / 400.0 == doctest::Approx(1.0).epsilon(1e-10));
  for (double v : n.test.inputs.values()) CHECK(std::isfinite(v));
  // Test statistics come from the training split, so the test mean is not pinned to zero.
  double t1 = 0;
  for (std::size_t r = 0; r < n.test.size(); ++r) t1 += n.test.inputs[r * 2 + 1];
  CHECK(std::abs(t1 / static_cast<double>(n.test.size())) > 1.0);
  CHECK_THROWS_AS(normalize(n), ValidationError);
}

TEST_CASE("subsample") {
  const Dataset d = generate_gaussians(2, 500, Tensor::matrix({{-2, 0}, {2, 0}}), kIdentity2, 2);
  const Dataset s = subsample(d, 0.2, 7);
  std::vector<std::size_t> counts(2);
  for (auto y : s.train.labels) ++counts[y];
  CHECK(counts == std::vector<std::size_t>{100, 100});
  CHECK(s.test.inputs == d.test.inputs);

  const Dataset full = subsample(d, 1.0, 7);
  CHECK(full.train.inputs == d.train.inputs);
  CHECK(full.train.labels == d.train.labels);

  auto small = row_set(subsample(d, 0.2, 7).train);
  for (double f : {0.4, 0.6, 0.8, 1.0}) {
    const auto big = row_set(subsample(d, f, 7).train);
    CHECK(std::includes(big.begin(), big.end(), small.begin(), small.end()));
    small = big;
  }

  // Uneven classes stay proportional within one sample.
  const Dataset u = generate_gaussians(3, 37, Tensor::matrix({{0, 0}, {3, 0}, {0, 3}}), kIdentity2, 3);
  const Dataset us = subsample(u, 0.3, 1);
  std::vector<std::size_t> uc(3);
  for (auto y : us.train.labels) ++uc[y];
  for (auto n : uc) CHECK(std::abs(static_cast<double>(n) - 0.3 * 37) <= 1.0);

  CHECK_THROWS_AS(subsample(d, 0.0, 1), ValidationError);
  CHECK_THROWS_AS(subsample(d, 1.5, 1), ValidationError);
  CHECK_THROWS_AS(subsample(u, 0.001, 1), ValidationError);
}

TEST_CASE("fgsm moves every coordinate by the step") {
  const auto m = linear_model(Tensor::matrix({{1.0, -2.0, 0.5}, {-0.3, 0.7, 2.0}, {0.2, 0.1, -1.0}}),
                              Tensor::vector({0.1, 0.0, -0.2}));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x = random_tensor({3}, s);
    const Tensor out = fgsm_sample(m, x, s % 3, 0.07);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(std::abs(out[i] - x[i]) - 0.07) <= 1e-15);
  }
}

TEST_CASE("random noise matches the expected norm") {
  for (std::size_t dim : {1u, 2u, 10u, 784u}) {
    std::mt19937_64 rng(dim);
    const Tensor base(Shape{dim});
    double total = 0.0;
    for (int i = 0; i < 10000; ++i) total += l2_norm(random_noise_sample(base, 0.4, rng));
    CHECK(std::abs(total / 10000.0 - 0.4) <= 0.02);
  }
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(random_noise_sample(Tensor(Shape{2}), -1.0, rng), ValidationError);
}

TEST_CASE("deepfool reaches a linear boundary in one iteration") {
  const Tensor w = Tensor::matrix({{1.5, -0.5}, {-1.0, 2.0}});
  const Tensor b = Tensor::vector({0.3, -0.1});
  const auto m = linear_model(w, b);
  // Difference direction of class 1 against class 0.
  const double dw0 = -2.5, dw1 = 2.5, db = -0.4;
  const double wn2 = dw0 * dw0 + dw1 * dw1;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x = random_tensor({2}, s);
    const std::size_t label = m.predict(x);
    const double gap = dw0 * x[0] + dw1 * x[1] + db;  // f1 - f0
    for (double overshoot : {0.0, 0.02}) {
      const auto r = deepfool(m, x, label, overshoot, 50);
      CHECK(r.iterations == 1);
      CHECK(r.crossed);
      const double dist = l2_norm(r.sample - x);
      // Minimal distance |gap| / |w|, scaled by the overshoot.
      CHECK(dist == doctest::Approx((1.0 + overshoot) * std::abs(gap) / std::sqrt(wn2)).epsilon(1e-3));
      if (overshoot == 0.0) {
        const double after = dw0 * r.sample[0] + dw1 * r.sample[1] + db;
        CHECK(std::abs(after) <= 1e-3);
      }
    }
  }
}

TEST_CASE("l2-minimize stops once the gap is negative") {
  const auto m = linear_model(Tensor::matrix({{1, 0}, {0, 1}, {-1, -1}}), Tensor::vector({0, 0, 0}));
  const Tensor x = Tensor::vector({1.0, 0.2});
  REQUIRE(m.predict(x) == 0);
  const Tensor out = l2_minimize(m, x, 0, 1, AttackConfig{0.1, 0.01, 100, false}, 0.1);
  CHECK(out[0] - out[1] < 0.0);
  CHECK(l2_norm(out - x) < 2.0);
  CHECK(parse_sample_kind("deepfool") == SampleKind::DeepFool);
  CHECK_THROWS_AS(parse_sample_kind("pgd"), ValidationError);
}

TEST_CASE("stats") {
  const std::vector<double> xs{2, 4, 4, 4, 5, 5, 7, 9};
  CHECK(stats::mean(xs) == 5.0);
  CHECK(stats::stddev(xs) == doctest::Approx(std::sqrt(32.0 / 7.0)).epsilon(1e-14));

  // Differences {1, 2, 3}: t = 2 / (1 / sqrt 3), and the 2-dof upper tail is
  // (1 - t / sqrt(t^2 + 2)) / 2.
  const std::vector<double> a{1, 2, 3}, b{0, 0, 0};
  const auto t = stats::paired_t_test(a, b);
  const double tv = 2.0 * std::sqrt(3.0);
  CHECK(t.dof == 2);
  CHECK(t.t_statistic == doctest::Approx(tv).epsilon(1e-12));
  CHECK(t.p_value == doctest::Approx(0.5 * (1.0 - tv / std::sqrt(tv * tv + 2.0))).epsilon(1e-10));
  CHECK(stats::paired_t_test(b, a).p_value == doctest::Approx(1.0 - t.p_value).epsilon(1e-10));
  CHECK_THROWS_AS(stats::paired_t_test(std::vector<double>{1}, std::vector<double>{1}), ValidationError);

  // 2-dof chi-square upper tail is exp(-x / 2).
  const std::vector<std::size_t> counts{10, 20, 30, 0};
  const std::vector<double> p{1.0 / 3, 1.0 / 3, 1.0 / 3, 0.0};
  const auto c = stats::chi_square_goodness_of_fit(counts, p);
  CHECK(c.dof == 2);
  CHECK(c.statistic == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(c.p_value == doctest::Approx(std::exp(-5.0)).epsilon(1e-10));
}

}  // TEST_SUITE
