#include <benchmark/benchmark.h>

#include <cmath>

#include "histofuse/classify.hpp"
#include "histofuse/gp.hpp"
#include "histofuse/rng.hpp"

using namespace histofuse;

namespace {

// Three Gaussian classes in `dim` dimensions, unit variance.
TrainingSet blobs(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  TrainingSet d;
  d.rows = rows;
  d.dim = dim;
  d.n_classes = 3;
  for (std::size_t i = 0; i < rows; ++i) {
    const int c = static_cast<int>(i % 3);
    for (std::size_t j = 0; j < dim; ++j) d.x.push_back(rng.normal() + (j == static_cast<std::size_t>(c) ? 3.0 : 0.0));
    d.y.push_back(c);
  }
  return d;
}

void BM_KnnPredict(benchmark::State& state) {
  const auto train = blobs(static_cast<std::size_t>(state.range(0)), 44, 1);
  const auto query = blobs(100, 44, 2);
  const auto model = train_knn(train, {5, KnnMetric::euclidean, KnnWeighting::uniform});
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(query.x, query.rows));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_KnnPredict)->Arg(1000)->Arg(10000);

void BM_SvmTrain(benchmark::State& state) {
  const auto train = blobs(static_cast<std::size_t>(state.range(0)), 44, 3);
  for (auto _ : state) benchmark::DoNotOptimize(train_svm(train, {10.0, 0.0, 1e-3, 10'000'000}, 1));
}
BENCHMARK(BM_SvmTrain)->Arg(300)->Arg(1500)->Unit(benchmark::kMillisecond);

void BM_GbmTrain(benchmark::State& state) {
  const auto train = blobs(1000, 44, 4);
  for (auto _ : state) benchmark::DoNotOptimize(train_gbm(train, {50, 0.1, 3, 1.0}, 1));
}
BENCHMARK(BM_GbmTrain)->Unit(benchmark::kMillisecond);

void BM_GpFit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(5);
  std::vector<std::vector<double>> pts(n, std::vector<double>(4));
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : pts[i]) v = rng.uniform();
    ys[i] = std::sin(6 * pts[i][0]) + pts[i][1];
  }
  for (auto _ : state) benchmark::DoNotOptimize(GpModel::fit(pts, ys));
}
BENCHMARK(BM_GpFit)->Arg(10)->Arg(30)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
