// Reference (serial, bounds-checked) vs parallel (padded, OpenMP) conv kernels.
// Thread count comes from RSPNET_THREADS.
#include <benchmark/benchmark.h>

#include <vector>

#include "rspnet/kernels.hpp"
#include "rspnet/rng.hpp"

using namespace rspnet;
using kernels::ConvGeometry;

namespace {

// Shapes met during search: 16x16 maps after the x4 stem, 8 channels per RSP half.
ConvGeometry geometry(const benchmark::State& state) {
  const auto k = state.range(0);
  const auto dil = state.range(1);
  const auto groups = state.range(2);
  const std::int64_t c = 8;
  return ConvGeometry{8, c, 16, 16, c, k, 1, dil * (k - 1) / 2, dil, groups};
}

struct Buffers {
  std::vector<float> x, w, dy, y, dx, dw;
  explicit Buffers(const ConvGeometry& g) {
    Rng rng(1);
    auto fill = [&](std::vector<float>& v, std::int64_t n) {
      auto t = uniform_tensor<float>(Shape{n}, -1, 1, rng);
      v.assign(t.data().begin(), t.data().end());
    };
    fill(x, g.batch * g.in_channels * g.in_h * g.in_w);
    fill(w, g.out_channels * g.in_per_group() * g.kernel * g.kernel);
    fill(dy, g.batch * g.out_channels * g.out_h() * g.out_w());
    y.resize(dy.size());
    dx.resize(x.size());
    dw.resize(w.size());
  }
};

void set_flops(benchmark::State& state, const ConvGeometry& g) {
  const double macs = static_cast<double>(g.batch * g.out_channels * g.out_h() * g.out_w() *
                                          g.in_per_group() * g.kernel * g.kernel);
  state.counters["MAC/s"] = benchmark::Counter(macs, benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void BM_Forward(benchmark::State& state) {
  kernels::configure_threads_from_env();
  const auto g = geometry(state);
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_forward<float>(g, b.x, b.w, {}, b.y);
    } else {
      kernels::reference::conv2d_forward<float>(g, b.x, b.w, {}, b.y);
    }
    benchmark::DoNotOptimize(b.y.data());
  }
  set_flops(state, g);
}

template <bool Parallel>
void BM_BackwardInput(benchmark::State& state) {
  kernels::configure_threads_from_env();
  const auto g = geometry(state);
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_input<float>(g, b.w, b.dy, b.dx);
    } else {
      kernels::reference::conv2d_backward_input<float>(g, b.w, b.dy, b.dx);
    }
    benchmark::DoNotOptimize(b.dx.data());
  }
  set_flops(state, g);
}

template <bool Parallel>
void BM_BackwardWeight(benchmark::State& state) {
  kernels::configure_threads_from_env();
  const auto g = geometry(state);
  Buffers b(g);
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::parallel::conv2d_backward_weight<float>(g, b.x, b.dy, b.dw);
    } else {
      kernels::reference::conv2d_backward_weight<float>(g, b.x, b.dy, b.dw);
    }
    benchmark::DoNotOptimize(b.dw.data());
  }
  set_flops(state, g);
}

// Args: kernel, dilation, groups.
void shapes(benchmark::internal::Benchmark* b) {
  b->ArgNames({"k", "dil", "groups"});
  b->Args({3, 1, 1})->Args({5, 1, 1})->Args({3, 2, 1})->Args({3, 1, 8});
}

}  // namespace

BENCHMARK(BM_Forward<false>)->Name("forward/reference")->Apply(shapes);
BENCHMARK(BM_Forward<true>)->Name("forward/parallel")->Apply(shapes);
BENCHMARK(BM_BackwardInput<false>)->Name("backward_input/reference")->Apply(shapes);
BENCHMARK(BM_BackwardInput<true>)->Name("backward_input/parallel")->Apply(shapes);
BENCHMARK(BM_BackwardWeight<false>)->Name("backward_weight/reference")->Apply(shapes);
BENCHMARK(BM_BackwardWeight<true>)->Name("backward_weight/parallel")->Apply(shapes);

BENCHMARK_MAIN();
