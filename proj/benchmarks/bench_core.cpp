#include <benchmark/benchmark.h>

#include <random>

#include "lcsurv/layers.hpp"
#include "lcsurv/recurrent.hpp"
#include "lcsurv/survival.hpp"

using namespace lcsurv;

namespace {

std::vector<SurvivalLabel> labels(std::size_t n, Rng& rng) {
    std::uniform_int_distribution<int> level(1, 40);
    std::bernoulli_distribution event(0.7);
    std::vector<SurvivalLabel> y(n);
    for (auto& l : y) l = {10.0 * level(rng), event(rng) ? 1 : 0};
    y.front().event = 1;
    return y;
}

void BM_CoxLossAndGrad(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const auto y = labels(n, rng);
    const Tensor h = Tensor::randn({n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(cox_loss_and_grad(h.values(), y));
    state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CoxLossAndGrad)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

void BM_HarrellC(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const auto y = labels(n, rng);
    const Tensor r = Tensor::randn({n}, rng);
    for (auto _ : state) benchmark::DoNotOptimize(harrell_c(r.values(), y));
}
BENCHMARK(BM_HarrellC)->Arg(256)->Arg(1024);

void BM_RecurrentStep(benchmark::State& state) {
    const auto kind = static_cast<CellKind>(state.range(0));
    Rng rng(3);
    RecurrentCell cell(kind, 32, 32);
    cell.init(rng);
    const Tensor x = Tensor::randn({32}, rng);
    RnnState s = RnnState::zeros(32);
    for (auto _ : state) {
        s = cell.step(x, s, 365.0);
        benchmark::DoNotOptimize(s.h.data());
    }
}
BENCHMARK(BM_RecurrentStep)
    ->Arg(static_cast<int>(CellKind::lstm))
    ->Arg(static_cast<int>(CellKind::talstm))
    ->Arg(static_cast<int>(CellKind::tlstm));

void BM_Conv3dForwardBackward(benchmark::State& state) {
    const auto edge = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    Conv3d conv(4, 8, 3, 1, 1);
    conv.init(rng);
    const Tensor x = Tensor::randn({2, 4, edge, edge, edge}, rng);
    for (auto _ : state) {
        const Tensor y = conv.forward(x);
        benchmark::DoNotOptimize(conv.backward(y));
    }
}
BENCHMARK(BM_Conv3dForwardBackward)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
