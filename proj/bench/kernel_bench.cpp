// OpenMP kernels against the serial reference loops in refcheck.
// Threads come from the first benchmark argument where it applies (0: every hardware thread).
#include <random>
#include <thread>

#include <benchmark/benchmark.h>

#include "ernet/kernels.hpp"
#include "ernet/refcheck.hpp"

using namespace ernet;
using kernels::Dims3;

namespace {

std::vector<double> noise(size_t n, uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(gen);
  return v;
}

const std::array<double, 12> kAffine{0.98, 0.05, 0.0, 0.03, -0.04, 1.01, 0.02, -0.05, 0.01, 0.0, 0.99, 0.02};

void use_threads(benchmark::State& state) {
  const auto n = state.range(0);
  kernels::set_num_threads(n > 0 ? int(n) : int(std::thread::hardware_concurrency()));
}

void BM_ConvFast(benchmark::State& state) {
  use_threads(state);
  const int64_t n = state.range(1);
  const kernels::ConvGeometry g{8, 16, 3, 1, 1, {n, n, n}};
  const auto in = noise(size_t(8 * n * n * n), 1);
  const auto w = noise(size_t(16 * 8 * 27), 2);
  const auto b = noise(16, 3);
  std::vector<double> out(size_t(16 * g.out().count()));
  for (auto _ : state) {
    kernels::conv3d_forward(g, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ConvNaive(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto in = noise(size_t(8 * n * n * n), 1);
  const auto w = noise(size_t(16 * 8 * 27), 2);
  const auto b = noise(16, 3);
  for (auto _ : state) benchmark::DoNotOptimize(refcheck::naive_conv(8, 16, 3, 1, 1, {n, n, n}, in, w, b));
}

void BM_WarpFast(benchmark::State& state) {
  use_threads(state);
  const int64_t n = state.range(1);
  const auto src = noise(size_t(n * n * n), 4);
  std::vector<double> out(src.size());
  for (auto _ : state) {
    kernels::warp_forward({n, n, n}, src, kAffine, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_WarpNaive(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto src = noise(size_t(n * n * n), 4);
  for (auto _ : state) benchmark::DoNotOptimize(refcheck::naive_warp({n, n, n}, src, kAffine));
}

void BM_NccFast(benchmark::State& state) {
  use_threads(state);
  const int64_t n = state.range(1);
  const auto a = noise(size_t(n * n * n), 5);
  const auto b = noise(size_t(n * n * n), 6);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::ncc_forward({n, n, n}, 9, 1e-5, a, b));
}

void BM_NccNaive(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto a = noise(size_t(n * n * n), 5);
  const auto b = noise(size_t(n * n * n), 6);
  for (auto _ : state) benchmark::DoNotOptimize(refcheck::naive_ncc({n, n, n}, 9, 1e-5, a, b));
}

void BM_SmoothnessFast(benchmark::State& state) {
  use_threads(state);
  const int64_t n = state.range(1);
  const auto m = noise(size_t(n * n * n), 7);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::smoothness_forward({n, n, n}, m));
}

void BM_SmoothnessNaive(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto m = noise(size_t(n * n * n), 7);
  for (auto _ : state) benchmark::DoNotOptimize(refcheck::naive_smoothness({n, n, n}, m));
}

}  // namespace

BENCHMARK(BM_ConvFast)->ArgsProduct({{1, 0}, {16, 32}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvNaive)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WarpFast)->ArgsProduct({{1, 0}, {16, 32, 64}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WarpNaive)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NccFast)->ArgsProduct({{1, 0}, {16, 32}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_NccNaive)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SmoothnessFast)->ArgsProduct({{1, 0}, {32, 64}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SmoothnessNaive)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
