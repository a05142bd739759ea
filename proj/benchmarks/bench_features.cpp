#include <benchmark/benchmark.h>

#include <filesystem>

#include "histofuse/backend.hpp"
#include "histofuse/hog.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/noise.hpp"
#include "histofuse/rng.hpp"

using namespace histofuse;

namespace {

ImageTensor random_image(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  ImageTensor im(side, side, 3);
  for (auto& v : im.values()) v = rng.uniform();
  return im;
}

void BM_Hog(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto im = random_image(side, 1);
  HogConfig cfg;
  cfg.cell_size = side / 8;
  for (auto _ : state) benchmark::DoNotOptimize(hog(im, cfg));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Hog)->Arg(299)->Arg(768);

void BM_InjectNoise(benchmark::State& state) {
  const auto im = random_image(299, 2);
  for (auto _ : state) benchmark::DoNotOptimize(inject_noise(im, {30.0, 1}, "bench"));
}
BENCHMARK(BM_InjectNoise);

void BM_FixtureExtract(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "histofuse_bench_fixture";
  std::filesystem::create_directories(dir);
  FixtureModelSpec spec;
  spec.feature_dim = static_cast<std::size_t>(state.range(0));
  write_fixture_model(dir / "fx.onnx", spec);
  const auto backend = Backend::load(dir / "fx.onnx");
  const auto im = random_image(299, 3);
  for (auto _ : state) benchmark::DoNotOptimize(backend.features(im));
  std::filesystem::remove_all(dir);
}
BENCHMARK(BM_FixtureExtract)->Arg(8)->Arg(64);

void BM_Auc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(4);
  std::vector<double> scores(n);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = rng.uniform();
    labels[i] = static_cast<int>(rng.below(2));
  }
  for (auto _ : state) benchmark::DoNotOptimize(auc(scores, labels));
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(n));
}
BENCHMARK(BM_Auc)->Arg(1000)->Arg(100000);

}  // namespace
