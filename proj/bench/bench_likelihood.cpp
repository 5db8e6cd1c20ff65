// Serial dense reference vs. low-rank OpenMP kernel for the n x K class
// log-density matrix, plus the full step-1 objective.

#include "bsgmm/likelihood.hpp"
#include "bsgmm/simulation.hpp"

#include <benchmark/benchmark.h>
#include <omp.h>

#include <map>

using namespace bsgmm;

namespace {

struct Fixture {
  LongitudinalDataset data;
  std::vector<ClassParams> classes;
};

const Fixture& fixture(int n, int waves) {
  static std::map<std::pair<int, int>, Fixture> cache;
  auto it = cache.find({n, waves});
  if (it != cache.end()) return it->second;
  SimCondition c;
  c.n = n;
  c.waves = waves;
  const auto beta = calibrate_coefficients(c, 1);
  auto rng = make_rng(1, 0);
  Fixture f;
  f.data = generate_dataset(c, beta, rng);
  const auto means = c.class_means();
  for (int k = 0; k < 2; ++k) {
    ClassParams p;
    p.frame = Frame::Original;
    p.mean = means[static_cast<std::size_t>(k)];
    p.cov = c.growth_cov;
    p.knot = c.knots[static_cast<std::size_t>(k)];
    p.residual_var = c.residual_var;
    f.classes.push_back(to_reparameterized(p));
  }
  return cache.emplace(std::make_pair(n, waves), std::move(f)).first->second;
}

void BM_reference(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::class_log_densities(f.data, f.classes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_kernel(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  omp_set_num_threads(static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::class_log_densities(f.data, f.classes));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_step1_loglik(benchmark::State& state) {
  const auto& f = fixture(static_cast<int>(state.range(0)), 10);
  omp_set_num_threads(static_cast<int>(state.range(1)));
  const MixtureModel m{f.classes, FreeMixing{{0.5, 0.5}}};
  for (auto _ : state) benchmark::DoNotOptimize(step1_loglik(f.data, m));
}

}  // namespace

BENCHMARK(BM_reference)->ArgsProduct({{1000, 10000}, {10, 30}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kernel)->ArgsProduct({{1000, 10000}, {10, 30}, {1, 2, 4}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_step1_loglik)->ArgsProduct({{1000, 10000}, {1, 4}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
