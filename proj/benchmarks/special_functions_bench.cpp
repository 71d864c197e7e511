#include <benchmark/benchmark.h>

#include "sveb/special_functions.hpp"

static void BM_LogGamma(benchmark::State& state) {
  double x = 0.37;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sveb::special::log_gamma(x));
    x = x < 200.0 ? x * 1.7 : 0.37;
  }
}
BENCHMARK(BM_LogGamma);

static void BM_LogGammaDiff(benchmark::State& state) {
  const double d = static_cast<double>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(sveb::special::log_gamma_diff(12.5, d));
}
BENCHMARK(BM_LogGammaDiff)->Arg(3)->Arg(30)->Arg(3000);

static void BM_Digamma(benchmark::State& state) {
  double x = 0.37;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sveb::special::digamma(x));
    x = x < 200.0 ? x * 1.7 : 0.37;
  }
}
BENCHMARK(BM_Digamma);

static void BM_Trigamma(benchmark::State& state) {
  double x = 0.37;
  for (auto _ : state) {
    benchmark::DoNotOptimize(sveb::special::trigamma(x));
    x = x < 200.0 ? x * 1.7 : 0.37;
  }
}
BENCHMARK(BM_Trigamma);

BENCHMARK_MAIN();
