// Serial reference vs optimized path on training-shaped problems.
// Counters report multiply-accumulates per second.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "xinv/kernels.hpp"
#include "xinv/rng.hpp"

using namespace xinv;
namespace k = xinv::kern;

namespace {

std::vector<float> randn(uint64_t seed, int64_t n) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

void bench_gemm(benchmark::State& state, bool fast) {
  int64_t M = state.range(0), N = state.range(1), K = state.range(2);
  auto A = randn(1, M * K);
  auto B = randn(2, K * N);
  std::vector<float> C(M * N);
  k::parallel() = fast;
  for (auto _ : state) {
    k::gemm(M, N, K, A.data(), B.data(), C.data(), false);
    benchmark::DoNotOptimize(C.data());
  }
  k::parallel() = true;
  state.counters["mac/s"] = benchmark::Counter(double(M * N * K) * state.iterations(),
                                               benchmark::Counter::kIsRate);
}

void bench_conv(benchmark::State& state, bool fast) {
  // first stage of the 32x32 classifier: conv 3x3, 1->128, batch 16
  int64_t N = 16, IC = 1, H = 32, W = 32, OC = 128;
  int kk = 3, s = 1, p = 1;
  auto x = randn(3, N * IC * H * W);
  auto w = randn(4, OC * IC * kk * kk);
  auto b = randn(5, OC);
  std::vector<float> y(N * OC * H * W);
  k::parallel() = fast;
  for (auto _ : state) {
    k::conv2d_fwd(x.data(), N, IC, H, W, w.data(), b.data(), OC, kk, s, p, y.data());
    benchmark::DoNotOptimize(y.data());
  }
  k::parallel() = true;
  double macs = double(N) * OC * H * W * IC * kk * kk;
  state.counters["mac/s"] = benchmark::Counter(macs * state.iterations(),
                                               benchmark::Counter::kIsRate);
}

}  // namespace

BENCHMARK_CAPTURE(bench_gemm, reference, false)->Args({256, 256, 1152})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_gemm, optimized, true)->Args({256, 256, 1152})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_gemm, optimized, true)->Args({512, 64, 16384})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_gemm, optimized, true)->Args({1024, 16, 2048})->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_conv, reference, false)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(bench_conv, optimized, true)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
