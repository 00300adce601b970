#include <benchmark/benchmark.h>

#include "star/common.hpp"

namespace {

void BM_DeriveSeed(benchmark::State& state) {
    std::uint64_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(star::derive_seed(42, "stream", i++));
    }
}
BENCHMARK(BM_DeriveSeed);

}  // namespace

BENCHMARK_MAIN();
