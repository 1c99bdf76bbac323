// Serial reference kernels vs the OpenMP row-parallel versions, plus the
// bipartition sweep at 1 and 4 threads. The parallel paths are required to be
// bit-identical to the serial ones; these benchmarks measure what the extra
// threads buy at desk-scale shapes.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "phimesa/common.hpp"
#include "phimesa/kernels.hpp"
#include "phimesa/phi.hpp"

namespace {

std::vector<float> random_matrix(int64_t rows, int64_t cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<float> m(static_cast<size_t>(rows * cols));
    for (auto& x : m)
        x = static_cast<float>((static_cast<double>(rng() >> 11) * 0x1.0p-53) * 2.0 - 1.0);
    return m;
}

phimesa::phi::TransitionTable random_table(int32_t channels, int64_t rows, uint64_t seed) {
    std::mt19937_64 rng(seed);
    phimesa::phi::StateTrajectory t;
    t.rows = rows;
    t.channels = channels;
    t.alphabet_sizes.assign(static_cast<size_t>(channels), 2);
    t.values.resize(static_cast<size_t>(rows * channels));
    for (auto& v : t.values) v = static_cast<int32_t>(rng() & 1);
    return phimesa::phi::count_transitions(t, 1);
}

void bm_matmul_serial(benchmark::State& state) {
    const int64_t n = state.range(0);
    const auto a = random_matrix(n, n, 1);
    const auto b = random_matrix(n, n, 2);
    std::vector<float> c(static_cast<size_t>(n * n));
    for (auto _ : state) {
        phimesa::kernels::matmul_serial(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
}

void bm_matmul_parallel(benchmark::State& state) {
    const int64_t n = state.range(0);
    phimesa::set_max_threads(4);
    const auto a = random_matrix(n, n, 1);
    const auto b = random_matrix(n, n, 2);
    std::vector<float> c(static_cast<size_t>(n * n));
    for (auto _ : state) {
        phimesa::kernels::matmul(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    phimesa::set_max_threads(1);
}

void bm_mib_sweep_serial(benchmark::State& state) {
    const auto table = random_table(static_cast<int32_t>(state.range(0)), 20000, 3);
    phimesa::set_max_threads(1);
    for (auto _ : state) {
        auto r = phimesa::phi::mib_exhaustive(table);
        benchmark::DoNotOptimize(r.score);
    }
}

void bm_mib_sweep_parallel(benchmark::State& state) {
    const auto table = random_table(static_cast<int32_t>(state.range(0)), 20000, 3);
    phimesa::set_max_threads(4);
    for (auto _ : state) {
        auto r = phimesa::phi::mib_exhaustive(table);
        benchmark::DoNotOptimize(r.score);
    }
    phimesa::set_max_threads(1);
}

}  // namespace

BENCHMARK(bm_matmul_serial)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_matmul_parallel)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(bm_mib_sweep_serial)->Arg(8)->Arg(10);
BENCHMARK(bm_mib_sweep_parallel)->Arg(8)->Arg(10);

BENCHMARK_MAIN();
