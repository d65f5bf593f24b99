#include <benchmark/benchmark.h>

#include "odgen/denoiser.hpp"
#include "odgen/diffusion.hpp"
#include "odgen/domain.hpp"
#include "odgen/gravity.hpp"
#include "odgen/io.hpp"
#include "odgen/metrics.hpp"

#include <random>

using namespace odgen;

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

Matrix random_distances(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coord(0.0, 30.0);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(coord(rng), coord(rng));
  return compute_distance_matrix(pts);
}

struct Instance {
  Matrix features;
  Matrix noised;
  Matrix distances;
  Matrix dlape;
};

Instance make_instance(int n, const DenoiserConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance in;
  in.features = random_matrix(n, cfg.feature_dim, rng);
  in.noised = random_matrix(n, n, rng);
  in.distances = random_distances(n, rng);
  in.dlape = compute_dlape(in.distances, cfg.hidden_dim);
  return in;
}

}  // namespace

static void BM_DenoiserForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  DenoiserConfig cfg;
  cfg.init_seed = 1;
  Denoiser model(cfg);
  const Instance in = make_instance(n, cfg, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        model.predict(in.features, in.noised, in.distances, in.dlape, 10));
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_DenoiserForward)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_DenoiserTrainStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  DiffusionTrainConfig cfg;
  cfg.T = 200;
  cfg.seed = 3;
  cfg.denoiser.init_seed = 3;
  Denoiser model(cfg.denoiser);
  Trainer trainer(model, cfg);

  SyntheticAreaSpec spec;
  spec.area_id = "bench";
  spec.n_regions = n;
  spec.seed = 4;
  const LoadedArea la = generate_synthetic_area(spec);
  const FeatureScaler scaler = FeatureScaler::fit({&la.area});
  const AreaTensors tensors =
      prepare_area_tensors(la.area, &la.od, scaler, cfg.denoiser.hidden_dim);

  std::mt19937_64 rng(5);
  for (auto _ : state) {
    model.params().zero_grad();
    benchmark::DoNotOptimize(trainer.accumulate(tensors, rng, 1.0));
    trainer.update();
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_DenoiserTrainStep)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Dlape(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(6);
  const Matrix d = random_distances(n, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(compute_dlape(d, 32));
  }
}
BENCHMARK(BM_Dlape)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_GravityPredict(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(7);
  const Matrix d = random_distances(n, rng);
  Vector masses(n);
  std::uniform_real_distribution<double> mass(10.0, 100.0);
  for (int i = 0; i < n; ++i) masses[i] = mass(rng);
  GravityParams params;
  params.scale = 0.01;
  params.decay = 2.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(gravity_predict(params, masses, d));
  }
}
BENCHMARK(BM_GravityPredict)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kMicrosecond);

static void BM_Cpc(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::mt19937_64 rng(8);
  const Matrix f = random_matrix(n, n, rng, 0.0, 100.0);
  const Matrix g = random_matrix(n, n, rng, 0.0, 100.0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cpc(f, g));
  }
}
BENCHMARK(BM_Cpc)->Arg(8)->Arg(16)->Arg(32)->Arg(64)->Unit(benchmark::kNanosecond);

BENCHMARK_MAIN();
