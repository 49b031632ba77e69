// Serial reference vs OpenMP kernels, and eval-engine worker scaling.
//   ./build/bench/idkit_bench --benchmark_filter=Tmm

#include <benchmark/benchmark.h>

#include "idkit/eval_engine.hpp"
#include "idkit/shape.hpp"
#include "idkit/tmm.hpp"

using namespace idkit;

namespace {

DesignPoint sample_point(const DesignSpace& space, std::uint64_t seed) {
    Rng rng(seed);
    return sample_uniform(space, rng);
}

const tmm::MotfSimulator& simulator() {
    static const tmm::MotfSimulator sim;
    return sim;
}

void BM_TmmSerial(benchmark::State& state) {
    const auto stack = simulator().stack_for(sample_point(DesignSpace::motf(), 1));
    for (auto _ : state) benchmark::DoNotOptimize(tmm::stack_spectrum_serial(stack, simulator().grid()));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(simulator().grid().size()));
}

void BM_TmmParallel(benchmark::State& state) {
    const auto stack = simulator().stack_for(sample_point(DesignSpace::motf(), 1));
    for (auto _ : state) benchmark::DoNotOptimize(tmm::stack_spectrum(stack, simulator().grid()));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(simulator().grid().size()));
}

template <bool Parallel>
void BM_Raster(benchmark::State& state) {
    const auto layout = shape::tpv_layout(sample_point(DesignSpace::tpv(), 2));
    const shape::Window window{2.0 * layout.pitch_nm, {0.0, 0.0}};
    const auto n = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        if constexpr (Parallel) benchmark::DoNotOptimize(shape::rasterize(layout.outlines, window, n));
        else benchmark::DoNotOptimize(shape::rasterize_serial(layout.outlines, window, n));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

// Synthetic simulator with 5 ms of emulated latency per call.
void BM_EngineWorkers(benchmark::State& state) {
    const auto space = DesignSpace::scf();
    std::vector<DesignPoint> pts;
    for (std::uint64_t i = 0; i < 64; ++i) pts.push_back(sample_point(space, 100 + i));
    SimulatorBinding b;
    b.kind = SimulatorKind::internal_synthetic;
    b.cache = false;
    b.sleep_ms = 5.0;
    b.workers = static_cast<std::size_t>(state.range(0));
    EvalEngine engine(space, b);
    for (auto _ : state) benchmark::DoNotOptimize(engine.evaluate_batch(pts));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(pts.size()));
}

}  // namespace

BENCHMARK(BM_TmmSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TmmParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Raster<false>)->Name("BM_RasterSerial")->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Raster<true>)->Name("BM_RasterParallel")->Arg(256)->Arg(1024)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_EngineWorkers)->Arg(1)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
