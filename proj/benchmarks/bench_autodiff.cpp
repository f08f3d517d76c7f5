#include <benchmark/benchmark.h>

#include <random>

#include "bssd/autodiff.hpp"
#include "bssd/model.hpp"

using namespace bssd;

namespace {

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Tensor t(Shape{rows, cols});
  for (auto& v : t.values()) v = n(rng);
  return t;
}

void BM_MlpForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto model = ClassifierModel::init(mlp_spec(2, {64, 64, 64}, 2), 1);
  const Tensor x = random_batch(rows, 2, 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForward)->Arg(1)->Arg(64)->Arg(256);

void BM_MlpForwardBackward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  ClassifierModel model = ClassifierModel::init(mlp_spec(2, {64, 64, 64}, 2), 1);
  const Tensor x = random_batch(rows, 2, 2);
  for (auto _ : state) {
    ad::Tape tape;
    const auto params = model.bind(tape, true);
    const ad::Var out = ad::mean(ad::log_softmax(model.forward(tape.constant(x), params)));
    benchmark::DoNotOptimize(tape.backward(out, params));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MlpForwardBackward)->Arg(1)->Arg(64)->Arg(256);

void BM_TinyCnnForwardBackward(benchmark::State& state) {
  ClassifierModel model = ClassifierModel::init(tiny_cnn_spec(1, 12, 12, 4, 8, 10), 1);
  Tensor x = random_batch(16, 144, 3).reshaped(Shape{16, 1, 12, 12});
  for (auto _ : state) {
    ad::Tape tape;
    const auto params = model.bind(tape, true);
    const ad::Var out = ad::mean(ad::log_softmax(model.forward(tape.constant(x), params)));
    benchmark::DoNotOptimize(tape.backward(out, params));
  }
}
BENCHMARK(BM_TinyCnnForwardBackward);

}  // namespace
