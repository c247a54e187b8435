// Parallel kernels against the serial reference implementations.
//
//   ./bench_kernels --benchmark_filter=Conv
//   OMP_NUM_THREADS=4 ./bench_kernels

#include <benchmark/benchmark.h>

#include "dgreid/kernels.hpp"
#include "dgreid/rng.hpp"

namespace {

using dgreid::Tensor;
namespace k = dgreid::kernels;

Tensor random(std::vector<std::size_t> shape, std::uint64_t seed) {
  dgreid::Rng rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dgreid::uniform01(rng) - 0.5;
  return t;
}

// Batch of 16 feature maps at the tiny backbone's second block: 16 -> 32
// channels, 32x16 spatial.
struct ConvCase {
  Tensor x = random({16, 16, 32, 16}, 1);
  Tensor w = random({32, 16, 3, 3}, 2);
  Tensor b = random({32}, 3);
  Tensor gy = random({16, 32, 32, 16}, 4);
};

template <Tensor (*Forward)(const Tensor&, const Tensor&, const Tensor&, std::size_t,
                            std::size_t)>
void conv_forward(benchmark::State& state) {
  ConvCase c;
  for (auto _ : state) benchmark::DoNotOptimize(Forward(c.x, c.w, c.b, 1, 1));
}

template <Tensor (*Backward)(const Tensor&, const Tensor&, const Tensor&, std::size_t,
                             std::size_t, Tensor*, Tensor*, bool)>
void conv_backward(benchmark::State& state) {
  ConvCase c;
  Tensor gw(c.w.shape()), gb(c.b.shape());
  for (auto _ : state) {
    benchmark::DoNotOptimize(Backward(c.x, c.w, c.gy, 1, 1, &gw, &gb, true));
  }
}

template <Tensor (*Forward)(const Tensor&, const Tensor&, const Tensor&)>
void linear_forward(benchmark::State& state) {
  const Tensor x = random({64, 64}, 5), w = random({512, 64}, 6), b = random({512}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Forward(x, w, b));
}

template <Tensor (*Distances)(const Tensor&, const Tensor&)>
void pairwise(benchmark::State& state) {
  const Tensor a = random({500, 32}, 8), b = random({1000, 32}, 9);
  for (auto _ : state) benchmark::DoNotOptimize(Distances(a, b));
}

BENCHMARK(conv_forward<k::conv2d_forward>)->Name("ConvForward/parallel")->UseRealTime();
BENCHMARK(conv_forward<k::reference::conv2d_forward>)->Name("ConvForward/reference")->UseRealTime();
BENCHMARK(conv_backward<k::conv2d_backward>)->Name("ConvBackward/parallel")->UseRealTime();
BENCHMARK(conv_backward<k::reference::conv2d_backward>)->Name("ConvBackward/reference")->UseRealTime();
BENCHMARK(linear_forward<k::linear_forward>)->Name("LinearForward/parallel")->UseRealTime();
BENCHMARK(linear_forward<k::reference::linear_forward>)->Name("LinearForward/reference")->UseRealTime();
BENCHMARK(pairwise<k::pairwise_distances>)->Name("PairwiseDistances/parallel")->UseRealTime();
BENCHMARK(pairwise<k::reference::pairwise_distances>)->Name("PairwiseDistances/reference")->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
