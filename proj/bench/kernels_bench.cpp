// Serial reference kernels against the OpenMP kernels on model-sized shapes.

#include "wmlab/kernels.hpp"
#include "wmlab/rng.hpp"

#include <benchmark/benchmark.h>

#include <omp.h>

using namespace wmlab;
namespace k = wmlab::kernels;

namespace {

Tensor random(Shape s, std::uint64_t seed)
{
    Rng rng(seed);
    Tensor t(std::move(s));
    for (double& v : t.vec()) v = rng.uniform(-1.0, 1.0);
    return t;
}

template <bool Reference>
void BM_Gemm(benchmark::State& state)
{
    const int n = static_cast<int>(state.range(0));
    const Tensor a = random({n, n}, 1), b = random({n, n}, 2);
    Tensor c({n, n});
    for (auto _ : state) {
        if constexpr (Reference)
            k::reference::gemm(false, false, n, n, n, 1.0, a.data(), n, b.data(), n, 0.0, c.data(), n);
        else
            k::gemm(false, false, n, n, n, 1.0, a.data(), n, b.data(), n, 0.0, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

// encoder-sized convolution: batch 8, 16 -> 16 channels, 3x3
template <bool Reference>
void BM_ConvForward(benchmark::State& state)
{
    const int r = static_cast<int>(state.range(0));
    const Tensor x = random({8, 16, r, r}, 3), w = random({16, 16, 3, 3}, 4), bias = random({16}, 5);
    for (auto _ : state) {
        Tensor y = Reference ? k::reference::conv2d_forward(x, w, bias, {1, 1}) : k::conv2d_forward(x, w, bias, {1, 1});
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state)
{
    const int r = static_cast<int>(state.range(0));
    const Tensor x = random({8, 16, r, r}, 3), w = random({16, 16, 3, 3}, 4), dy = random({8, 16, r, r}, 6);
    for (auto _ : state) {
        Tensor dx(x.shape()), dw(w.shape()), db({16});
        if constexpr (Reference)
            k::reference::conv2d_backward(x, w, dy, {1, 1}, &dx, &dw, &db);
        else
            k::conv2d_backward(x, w, dy, {1, 1}, &dx, &dw, &db);
        benchmark::DoNotOptimize(dw.data());
    }
}

// decoder-sized depthwise 7x7
template <bool Reference>
void BM_Depthwise(benchmark::State& state)
{
    const int r = static_cast<int>(state.range(0));
    const Tensor x = random({8, 24, r, r}, 7), w = random({24, 1, 7, 7}, 8), bias = random({24}, 9);
    for (auto _ : state) {
        Tensor y = Reference ? k::reference::depthwise_forward(x, w, bias, {1, 3})
                             : k::depthwise_forward(x, w, bias, {1, 3});
        benchmark::DoNotOptimize(y.data());
    }
}

} // namespace

BENCHMARK(BM_Gemm<true>)->Name("gemm/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<false>)->Name("gemm/openmp")->Arg(64)->Arg(256)->UseRealTime();
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/serial")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/openmp")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/serial")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/openmp")->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Depthwise<true>)->Name("depthwise/serial")->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Depthwise<false>)->Name("depthwise/openmp")->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond)->UseRealTime();

int main(int argc, char** argv)
{
    benchmark::Initialize(&argc, argv);
    benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
    benchmark::RunSpecifiedBenchmarks();
    benchmark::Shutdown();
    return 0;
}
