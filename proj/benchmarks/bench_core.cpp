#include <benchmark/benchmark.h>

#include <cmath>

#include "jacreg/field.hpp"
#include "jacreg/filter.hpp"
#include "jacreg/loss.hpp"
#include "jacreg/parallel.hpp"
#include "jacreg/registrar.hpp"

using namespace jacreg;

namespace {

Grid3 cube(int n) { return Grid3{{n, n, n}}; }

Volume3 test_image(const Grid3& g) {
  Volume3 v(g);
  const auto& d = g.dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        v.at(x, y, z) = 100.0 * std::sin(0.3 * x) * std::cos(0.2 * y) + 20.0 * std::sin(0.25 * z + 0.1 * x);
  return v;
}

DisplacementField test_field(const Grid3& g, double amp) {
  DisplacementField f(g);
  const auto& d = g.dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x) {
        const auto i = static_cast<std::size_t>(g.index(x, y, z));
        f.u[0][i] = amp * std::sin(0.2 * y + 0.1 * z);
        f.u[1][i] = amp * std::cos(0.15 * x);
        f.u[2][i] = 0.5 * amp * std::sin(0.1 * (x + y));
      }
  return f;
}

void BM_gaussian_filter(benchmark::State& state) {
  const auto g = cube(static_cast<int>(state.range(0)));
  const GaussianFilter filter(1.5, g.dims);
  const auto img = test_image(g);
  std::vector<double> out;
  for (auto _ : state) {
    filter.apply(img.data(), out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * g.size());
}
BENCHMARK(BM_gaussian_filter)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_warp(benchmark::State& state) {
  const auto g = cube(static_cast<int>(state.range(0)));
  const auto img = test_image(g);
  const auto f = test_field(g, 2.0);
  for (auto _ : state) benchmark::DoNotOptimize(warp(img, f));
  state.SetItemsProcessed(state.iterations() * g.size());
}
BENCHMARK(BM_warp)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_lncc(benchmark::State& state) {
  const auto g = cube(static_cast<int>(state.range(0)));
  const auto a = test_image(g);
  const auto b = warp(a, test_field(g, 1.0));
  const LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(lncc_loss(a, b, cfg));
}
BENCHMARK(BM_lncc)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_gradicon(benchmark::State& state) {
  const auto g = cube(static_cast<int>(state.range(0)));
  const auto ab = test_field(g, 1.5), ba = test_field(g, -1.5);
  const LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(gradicon_reg(ab, ba, cfg));
}
BENCHMARK(BM_gradicon)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_loss_gradient(benchmark::State& state) {
  const auto g = cube(static_cast<int>(state.range(0)));
  const auto a = test_image(g);
  const auto b = warp(a, test_field(g, 1.0));
  const auto ab = test_field(g, 0.5), ba = test_field(g, -0.5);
  const LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(loss_gradient(a, b, ab, ba, cfg, Wrt::field_ab));
}
BENCHMARK(BM_loss_gradient)->Arg(32)->Unit(benchmark::kMillisecond);

// One full-resolution unit of 10 iterations on a 32^3 pair.
void BM_registration_unit(benchmark::State& state) {
  set_thread_count(static_cast<int>(state.range(0)));
  const auto g = cube(32);
  const auto a = test_image(g);
  const auto b = warp(a, test_field(g, 1.0));
  RegistrationUnit unit;
  unit.iterations = 10;
  const RegistrationConfig cfg;
  const auto id = identity_field(g);
  for (auto _ : state) benchmark::DoNotOptimize(optimize_unit(a, b, id, id, unit, cfg));
  set_thread_count(1);
}
BENCHMARK(BM_registration_unit)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
