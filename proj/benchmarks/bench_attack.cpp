#include <benchmark/benchmark.h>

#include <random>

#include "bssd/attack.hpp"
#include "bssd/model.hpp"

using namespace bssd;

namespace {

void BM_FindBssBatch(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto model = ClassifierModel::init(mlp_spec(2, {64, 64, 64}, 3), 4);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Tensor x(Shape{rows, 2});
  for (auto& v : x.values()) v = n(rng);
  const auto pred = model.predict_batch(x);
  std::vector<std::size_t> targets(rows);
  for (std::size_t r = 0; r < rows; ++r) targets[r] = (pred[r] + 1) % 3;
  const AttackConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(find_bss_batch(model, x, pred, targets, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FindBssBatch)->Arg(1)->Arg(16)->Arg(64);

}  // namespace
