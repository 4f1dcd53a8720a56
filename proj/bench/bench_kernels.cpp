#include <benchmark/benchmark.h>

#include <vector>

#include "fluvinv/generator.hpp"
#include "fluvinv/kernels.hpp"
#include "fluvinv/random.hpp"

namespace {

using fluvinv::kernels::ConvGeometry;

struct Case {
  ConvGeometry g;
  std::vector<double> in, w, bias, out;

  explicit Case(std::int64_t channels) {
    g.cin = g.cout = channels;
    g.nz = 8;
    g.ny = g.nx = 32;
    g.kz = g.ky = g.kx = 3;
    fluvinv::Rng rng(1);
    in = rng.normal_vector(static_cast<std::size_t>(g.cin * g.volume()));
    w = rng.normal_vector(static_cast<std::size_t>(g.cout * g.cin * g.taps()));
    bias.assign(static_cast<std::size_t>(g.cout), 0.1);
    out.resize(static_cast<std::size_t>(g.cout * g.volume()));
  }
};

void conv_reference(benchmark::State& state) {
  Case c(state.range(0));
  for (auto _ : state) {
    fluvinv::kernels::conv3d_forward_reference(c.g, c.in, c.w, c.bias, c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
  state.SetItemsProcessed(state.iterations() * c.g.cout * c.g.cin * c.g.volume() * c.g.taps());
}

void conv_openmp(benchmark::State& state) {
  Case c(state.range(0));
  for (auto _ : state) {
    fluvinv::kernels::conv3d_forward(c.g, c.in, c.w, c.bias, c.out);
    benchmark::DoNotOptimize(c.out.data());
  }
  state.SetItemsProcessed(state.iterations() * c.g.cout * c.g.cin * c.g.volume() * c.g.taps());
}

void neural_generate(benchmark::State& state) {
  fluvinv::ArchitectureDescriptor a;
  a.latent_dim = 16;
  a.base_channels = static_cast<int>(state.range(0));
  const fluvinv::NeuralGenerator gen(fluvinv::NeuralGenerator::initialize(a, 1));
  const auto z = fluvinv::sample_prior(1, 16, 2)[0];
  for (auto _ : state) benchmark::DoNotOptimize(gen.generate(z));
}

}  // namespace

BENCHMARK(conv_reference)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(conv_openmp)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(neural_generate)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
