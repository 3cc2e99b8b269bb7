// Microbenchmarks of the autodiff primitives on the shapes the models use.

#include <benchmark/benchmark.h>

#include "lclip/ops.hpp"

using namespace lclip;

namespace {

void BM_MatmulForward(benchmark::State& state) {
    const int64_t rows = state.range(0);
    Rng rng(1);
    TensorF a = TensorF::randn({rows, 128}, rng);
    TensorF w = TensorF::randn({128, 256}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF out = ops::matmul(a, w);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * rows * 128 * 256);
}
BENCHMARK(BM_MatmulForward)->Arg(128)->Arg(2176);

void BM_MatmulTrain(benchmark::State& state) {
    const int64_t rows = state.range(0);
    Rng rng(1);
    TensorF a = TensorF::randn({rows, 128}, rng);
    TensorF w = TensorF::randn({128, 256}, rng).set_requires_grad();
    for (auto _ : state) {
        w.zero_grad();
        backward(ops::sum(ops::matmul(a, w)));
        benchmark::DoNotOptimize(w.grad().data());
    }
}
BENCHMARK(BM_MatmulTrain)->Arg(2176);

void BM_Conv2dForward(benchmark::State& state) {
    Rng rng(2);
    TensorF x = TensorF::randn({32, 64, 64, 3}, rng);
    TensorF k = TensorF::randn({3, 3, 3, 32}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF out = ops::conv2d(x, k, 2, 1);
        benchmark::DoNotOptimize(out.values().data());
    }
}
BENCHMARK(BM_Conv2dForward);

void BM_Attention(benchmark::State& state) {
    Rng rng(3);
    TensorF q = TensorF::randn({128, 17, 128}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF out = ops::attention(q, q, q, 4);
        benchmark::DoNotOptimize(out.values().data());
    }
}
BENCHMARK(BM_Attention);

void BM_Gelu(benchmark::State& state) {
    Rng rng(4);
    TensorF x = TensorF::randn({2176, 256}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF out = ops::gelu(x);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}
BENCHMARK(BM_Gelu);

void BM_SoftmaxLastAxis(benchmark::State& state) {
    Rng rng(5);
    TensorF x = TensorF::randn({512, 17, 17}, rng);
    NoGradGuard ng;
    for (auto _ : state) {
        TensorF out = ops::softmax(x, -1);
        benchmark::DoNotOptimize(out.values().data());
    }
}
BENCHMARK(BM_SoftmaxLastAxis);

} // namespace

BENCHMARK_MAIN();
