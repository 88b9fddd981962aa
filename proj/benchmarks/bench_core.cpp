#include <benchmark/benchmark.h>

#include <cmath>

#include "dier/diffusion.hpp"
#include "dier/nets.hpp"
#include "dier/ops.hpp"
#include "dier/training.hpp"

using namespace dier;

namespace {

void BM_matmul(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    Rng rng(1);
    Tensor a = randn({n, n}, rng);
    Tensor b = randn({n, n}, rng);
    for (auto _ : state) {
        auto c = matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);

void BM_conv2d_stage(benchmark::State& state) {
    Rng rng(2);
    Tensor x = randn({32, 32, 16, 16}, rng);
    Tensor w = randn({32, 32, 3, 3}, rng);
    Tensor bias = randn({32}, rng);
    for (auto _ : state) {
        auto y = conv2d(x, w, bias, 1, 1);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_conv2d_stage);

void BM_encoder_forward_nano(benchmark::State& state) {
    auto enc = init_encoder(encoder_nano(), 3);
    Rng rng(4);
    Tensor x = randn({32, 1, 16, 16}, rng);
    std::vector<int> ts(32, 500);
    for (auto _ : state) {
        auto v = encoder_forward(enc, x, ts);
        benchmark::DoNotOptimize(v.data().data());
    }
}
BENCHMARK(BM_encoder_forward_nano);

void BM_dit_forward_nano(benchmark::State& state) {
    auto dit = init_dit(dit_nano(), 5);
    Rng rng(6);
    Tensor x = randn({32, 1, 16, 16}, rng);
    Tensor v = randn({32, 128}, rng);
    std::vector<int> ts(32, 500);
    for (auto _ : state) {
        auto out = dit_forward(dit, x, ts, v);
        benchmark::DoNotOptimize(out.data().data());
    }
}
BENCHMARK(BM_dit_forward_nano);

void BM_train_step_nano(benchmark::State& state) {
    auto enc = init_encoder(encoder_nano(), 7);
    auto dit = init_dit(dit_nano(), 7);
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    Rng data_rng(8);
    Tensor x0 = randn({32, 1, 16, 16}, data_rng);
    for (auto& v : x0.mut()) v = std::tanh(v);
    auto params = collect_params(enc, dit);
    OptimizerState opt;
    Rng rng(9);
    for (auto _ : state) {
        Tape tape;
        auto draw = diffusion_loss(enc, dit, x0, sched, rng);
        tape.backward(draw.loss);
        adam_step(
            params, [&](const NamedParam& np) { return tape.grad(*np.tensor); }, opt, 1e-4f);
        benchmark::DoNotOptimize(draw.loss.item());
    }
}
BENCHMARK(BM_train_step_nano);

void BM_ddim_decode_step(benchmark::State& state) {
    auto sched = make_linear_schedule(1000, 1e-4f, 0.02f);
    Rng rng(10);
    Tensor x = randn({16, 1, 16, 16}, rng);
    Tensor eps = randn(x.shape(), rng);
    for (auto _ : state) {
        auto y = ddim_step(x, eps, 700, 650, sched);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_ddim_decode_step);

}  // namespace

BENCHMARK_MAIN();
