#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "bssd/distill.hpp"
#include "bssd/gradcheck.hpp"
#include "helpers.hpp"

namespace testing {

struct GradCase {
  std::string name;
  std::function<bssd::Tensor(std::uint64_t)> point;
  bssd::ScalarGraph graph;
};

// Each primitive differentiated with respect to each of its inputs in turn.
inline std::vector<GradCase> primitive_cases() {
  using namespace bssd;
  using namespace bssd::ad;
  std::vector<GradCase> cases;
  auto normal = [](Shape s) { return [s](std::uint64_t seed) { return random_tensor(s, seed); }; };

  cases.push_back({"affine/x", normal({3, 4}), [](Tape& t, Var x) {
                     return weighted_sum(affine(x, t.constant(random_tensor({5, 4}, 11)),
                                                t.constant(random_tensor({5}, 12))), 13);
                   }});
  cases.push_back({"affine/W", normal({5, 4}), [](Tape& t, Var w) {
                     return weighted_sum(affine(t.constant(random_tensor({3, 4}, 11)), w,
                                                t.constant(random_tensor({5}, 12))), 13);
                   }});
  cases.push_back({"affine/b", normal({5}), [](Tape& t, Var b) {
                     return weighted_sum(affine(t.constant(random_tensor({3, 4}, 11)),
                                                t.constant(random_tensor({5, 4}, 12)), b), 13);
                   }});
  cases.push_back({"conv2d/x", normal({2, 2, 5, 5}), [](Tape& t, Var x) {
                     return weighted_sum(conv2d(x, t.constant(random_tensor({3, 2, 3, 3}, 21)),
                                                t.constant(random_tensor({3}, 22)), 1), 23);
                   }});
  cases.push_back({"conv2d/kernel", normal({3, 2, 3, 3}), [](Tape& t, Var k) {
                     return weighted_sum(conv2d(t.constant(random_tensor({2, 2, 5, 5}, 21)), k,
                                                t.constant(random_tensor({3}, 22)), 0), 23);
                   }});
  cases.push_back({"conv2d/bias", normal({3}), [](Tape& t, Var b) {
                     return weighted_sum(conv2d(t.constant(random_tensor({2, 2, 5, 5}, 21)),
                                                t.constant(random_tensor({3, 2, 3, 3}, 22)), b, 1), 23);
                   }});
  cases.push_back({"max_pool2d", normal({2, 2, 4, 4}), [](Tape&, Var x) { return weighted_sum(max_pool2d(x, 2), 31); }});
  cases.push_back({"mean_pool2d", normal({2, 2, 4, 4}), [](Tape&, Var x) { return weighted_sum(mean_pool2d(x, 2), 32); }});
  cases.push_back({"relu", normal({4, 5}), [](Tape&, Var x) { return weighted_sum(relu(x), 41); }});
  cases.push_back({"tanh", normal({4, 5}), [](Tape&, Var x) { return weighted_sum(ad::tanh(x), 42); }});
  cases.push_back({"exp", normal({4, 5}), [](Tape&, Var x) { return weighted_sum(ad::exp(x), 43); }});
  cases.push_back({"log", [](std::uint64_t s) { return uniform_tensor({4, 5}, s, 0.2, 3.0); },
                   [](Tape&, Var x) { return weighted_sum(ad::log(x), 44); }});
  cases.push_back({"add/a", normal({3, 4}), [](Tape& t, Var a) { return weighted_sum(add(a, t.constant(random_tensor({3, 4}, 51))), 52); }});
  cases.push_back({"add/b", normal({3, 4}), [](Tape& t, Var b) { return weighted_sum(add(t.constant(random_tensor({3, 4}, 51)), b), 52); }});
  cases.push_back({"sub/a", normal({3, 4}), [](Tape& t, Var a) { return weighted_sum(sub(a, t.constant(random_tensor({3, 4}, 53))), 54); }});
  cases.push_back({"sub/b", normal({3, 4}), [](Tape& t, Var b) { return weighted_sum(sub(t.constant(random_tensor({3, 4}, 53)), b), 54); }});
  cases.push_back({"mul/a", normal({3, 4}), [](Tape& t, Var a) { return weighted_sum(mul(a, t.constant(random_tensor({3, 4}, 55))), 56); }});
  cases.push_back({"mul/b", normal({3, 4}), [](Tape& t, Var b) { return weighted_sum(mul(t.constant(random_tensor({3, 4}, 55)), b), 56); }});
  cases.push_back({"mul/self", normal({3, 4}), [](Tape&, Var a) { return weighted_sum(mul(a, a), 57); }});
  cases.push_back({"scale", normal({3, 4}), [](Tape&, Var x) { return weighted_sum(scale(x, -2.5), 58); }});
  cases.push_back({"add_scalar", normal({3, 4}), [](Tape&, Var x) { return weighted_sum(add_scalar(x, 0.7), 59); }});
  cases.push_back({"softmax", normal({3, 5}), [](Tape&, Var x) { return weighted_sum(softmax(x), 61); }});
  cases.push_back({"log_softmax", normal({3, 5}), [](Tape&, Var x) { return weighted_sum(log_softmax(x), 62); }});
  cases.push_back({"row_sum", normal({3, 5}), [](Tape&, Var x) { return weighted_sum(row_sum(x), 63); }});
  cases.push_back({"sum", normal({3, 5}), [](Tape&, Var x) { return sum(mul(x, x)); }});
  cases.push_back({"mean", normal({3, 5}), [](Tape&, Var x) { return ad::mean(mul(x, x)); }});
  cases.push_back({"reshape", normal({3, 4}), [](Tape&, Var x) { return weighted_sum(reshape(x, Shape{2, 6}), 64); }});
  return cases;
}


// Worst relative error of the full distillation objective against central
// differences, one random student per seed, differentiated in one parameter tensor.
inline double objective_fd_worst(std::uint64_t seed) {
  using namespace bssd;
  const auto teacher = ClassifierModel::init(mlp_spec(2, {12}, 3), 1);
  // Random biases too: zero biases put whole rows exactly on a ReLU kink
  // whenever every unit of the previous layer is off.
  ClassifierModel student = ClassifierModel::init(mlp_spec(2, {5, 4}, 3), 100 + seed);
  for (std::size_t i = 0; i < student.parameters().size(); ++i) {
    Tensor& p = student.mutable_parameters()[i];
    p = random_tensor(p.shape(), 10000 + 10 * seed + i, 0.7);
  }
  DistillObjective obj;
  obj.inputs = random_tensor({6, 2}, 200 + seed);
  obj.labels_one_hot = one_hot(teacher.predict_batch(obj.inputs), 3);
  obj.teacher_soft = teacher.class_probabilities(obj.inputs, 3.0);
  obj.bss_inputs = random_tensor({3, 2}, 300 + seed);
  obj.teacher_bss_soft = teacher.class_probabilities(obj.bss_inputs, 3.0);
  obj.weights = {2.5, 1.5};
  const std::size_t j = seed % student.parameters().size();
  ScalarGraph g = [&](ad::Tape& tape, ad::Var leaf) {
    std::vector<ad::Var> params;
    for (std::size_t i = 0; i < student.parameters().size(); ++i) {
      params.push_back(i == j ? leaf : tape.constant(student.parameters()[i]));
    }
    return obj.build(student, params).total;
  };
  return finite_difference_check(g, student.parameters()[j], 1e-5, 1e-4).max_relative_error;
}

}  // namespace testing
