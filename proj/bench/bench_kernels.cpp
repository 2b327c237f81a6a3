// Batched OpenMP kernels against the serial loop-level reference, at the
// default window width. Set OMP_NUM_THREADS to compare thread counts.

#include "etcn/kernels.hpp"
#include "etcn/network.hpp"
#include "etcn/reference.hpp"
#include "etcn/training.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

using namespace etcn;

namespace {

constexpr int kSteps = 120;

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

void BM_ConvBatched(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(channels, batch * kSteps, 1);
    const Matrix w = random_matrix(channels, 5 * channels, 2);
    const Vector b = Vector::Zero(channels);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::causal_conv(x, w, b, kSteps, 5, 2));
    state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ConvReference(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(channels, batch * kSteps, 1);
    const Matrix w = random_matrix(channels, 5 * channels, 2);
    const Vector b = Vector::Zero(channels);
    for (auto _ : state)
        for (int s = 0; s < batch; ++s)
            benchmark::DoNotOptimize(reference::causal_conv(x.middleCols(s * kSteps, kSteps), w, b, 5, 2));
    state.SetItemsProcessed(state.iterations() * batch);
}

void BM_AttentionBatched(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(channels, batch * kSteps, 3);
    const Matrix wq = random_matrix(channels, channels, 4), wk = random_matrix(channels, channels, 5),
                 wv = random_matrix(channels, channels, 6);
    for (auto _ : state) benchmark::DoNotOptimize(kernels::self_attention(x, wq, wk, wv, kSteps, false));
    state.SetItemsProcessed(state.iterations() * batch);
}

void BM_AttentionReference(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(channels, batch * kSteps, 3);
    const Matrix wq = random_matrix(channels, channels, 4), wk = random_matrix(channels, channels, 5),
                 wv = random_matrix(channels, channels, 6);
    for (auto _ : state)
        for (int s = 0; s < batch; ++s)
            benchmark::DoNotOptimize(reference::self_attention(x.middleCols(s * kSteps, kSteps), wq, wk, wv));
    state.SetItemsProcessed(state.iterations() * batch);
}

Model bench_model(int channels) {
    NetworkConfig cfg;
    cfg.n_vars = kDefaultVars;
    cfg.window_width = kSteps;
    cfg.tcn_channels = channels;
    return init_model(cfg, 7);
}

void BM_ForwardBatched(benchmark::State& state) {
    const Model m = bench_model(static_cast<int>(state.range(0)));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(kDefaultVars, batch * kSteps, 8);
    for (auto _ : state) benchmark::DoNotOptimize(network_forward(m, x, Mode::Eval).logits);
    state.SetItemsProcessed(state.iterations() * batch);
}

void BM_ForwardReference(benchmark::State& state) {
    const Model m = bench_model(static_cast<int>(state.range(0)));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(kDefaultVars, batch * kSteps, 8);
    std::vector<Matrix> windows;
    for (int s = 0; s < batch; ++s) windows.emplace_back(x.middleCols(s * kSteps, kSteps));
    for (auto _ : state) benchmark::DoNotOptimize(reference::network_forward(m, windows, Mode::Eval));
    state.SetItemsProcessed(state.iterations() * batch);
}

void BM_TrainStep(benchmark::State& state) {
    Model m = bench_model(static_cast<int>(state.range(0)));
    const int batch = static_cast<int>(state.range(1));
    const Matrix x = random_matrix(kDefaultVars, batch * kSteps, 9);
    std::vector<int> labels(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % kNumClasses;
    AdamState adam = make_adam_state(m.params);
    std::uint64_t step = 0;
    for (auto _ : state) {
        const auto f = network_forward(m, x, Mode::Train, ++step);
        const auto g = network_backward(m, f.cache, f.logits, labels);
        adam_step(m.params, g, adam, 1e-4);
    }
    state.SetItemsProcessed(state.iterations() * batch);
}

const std::vector<std::vector<std::int64_t>> kShapes{{4, 32}, {32, 128}};

}  // namespace

BENCHMARK(BM_ConvBatched)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ConvReference)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionBatched)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionReference)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardBatched)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForwardReference)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainStep)->ArgsProduct(kShapes)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
