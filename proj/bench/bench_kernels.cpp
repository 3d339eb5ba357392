#include <benchmark/benchmark.h>

#include <random>

#include "ordcast/kernels.hpp"

using namespace ordcast;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct ConvData {
  Tensor in, weight, bias, grad_out;
  explicit ConvData(std::size_t size)
      : in(random_tensor({16, size, size}, 1)),
        weight(random_tensor({16, 16, 3, 3}, 2)),
        bias(random_tensor({16}, 3)),
        grad_out(random_tensor({16, size, size}, 4)) {}
};

template <auto Fn>
void conv_forward(benchmark::State& state) {
  const ConvData d(static_cast<std::size_t>(state.range(0)));
  Tensor out;
  for (auto _ : state) {
    Fn(d.in, d.weight, d.bias, out);
    benchmark::DoNotOptimize(out.data().data());
  }
}

template <auto Fn>
void conv_backward(benchmark::State& state) {
  const ConvData d(static_cast<std::size_t>(state.range(0)));
  Tensor gi(d.in.shape()), gw(d.weight.shape()), gb(d.bias.shape());
  for (auto _ : state) {
    Fn(d.in, d.weight, d.grad_out, &gi, gw, gb);
    benchmark::DoNotOptimize(gw.data().data());
  }
}

template <auto Fn>
void box_mean(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor f = random_tensor({n, n}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(f, 11));
}

template <auto Fn>
void confusion(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor p = random_tensor({n * n}, 6), o = random_tensor({n * n}, 7);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(p.data().data(), o.data().data(), nullptr, n * n, 0.2));
}

template <auto Fn>
void shift(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  const Tensor src = random_tensor({n, n}, 8);
  Tensor out({n, n});
  for (auto _ : state) {
    Fn(src.data().data(), out.data().data(), n, n, 1.3, -2.7, -1.0);
    benchmark::DoNotOptimize(out.data().data());
  }
}

}  // namespace

BENCHMARK(conv_forward<kernels::conv2d_forward>)->Name("conv2d_forward/omp")->Arg(32)->Arg(64);
BENCHMARK(conv_forward<kernels::serial::conv2d_forward>)->Name("conv2d_forward/serial")->Arg(32)->Arg(64);
BENCHMARK(conv_backward<kernels::conv2d_backward>)->Name("conv2d_backward/omp")->Arg(32)->Arg(64);
BENCHMARK(conv_backward<kernels::serial::conv2d_backward>)->Name("conv2d_backward/serial")->Arg(32)->Arg(64);
BENCHMARK(box_mean<kernels::box_mean>)->Name("box_mean/omp")->Arg(128)->Arg(512);
BENCHMARK(box_mean<kernels::serial::box_mean>)->Name("box_mean/serial")->Arg(128)->Arg(512);
BENCHMARK(confusion<kernels::confusion>)->Name("confusion/omp")->Arg(128)->Arg(512);
BENCHMARK(confusion<kernels::serial::confusion>)->Name("confusion/serial")->Arg(128)->Arg(512);
BENCHMARK(shift<kernels::shift_bilinear>)->Name("shift_bilinear/omp")->Arg(128)->Arg(512);
BENCHMARK(shift<kernels::serial::shift_bilinear>)->Name("shift_bilinear/serial")->Arg(128)->Arg(512);

BENCHMARK_MAIN();
