#include <benchmark/benchmark.h>

#include "qreporter/oracle.hpp"

using namespace qreporter;

namespace {

OracleSystem cluster(std::size_t protons) {
  OracleSystem sys(FieldSetting(619.0, Vec3(0.2, 0.1, 1.0)));
  sys.add_spin(Species::nv);
  sys.add_spin(Species::electron, Vec3(1.0, -1.5, 3.0));
  for (std::size_t p = 0; p < protons; ++p) {
    sys.add_spin(Species::proton, Vec3(1.0 + 0.2 * static_cast<double>(p), -1.5, 3.25));
  }
  sys.derive_couplings();
  return sys;
}

void BM_OracleEcho(benchmark::State& state) {
  const auto sys = cluster(static_cast<std::size_t>(state.range(0)));
  const auto grid = linspace(0.0, 2.0, 50);
  for (auto _ : state) benchmark::DoNotOptimize(oracle_echo_trace(sys, 1, grid));
  state.SetLabel("dim " + std::to_string(sys.dimension()));
}
BENCHMARK(BM_OracleEcho)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_Hamiltonian(benchmark::State& state) {
  const auto sys = cluster(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(build_hamiltonian(sys));
}
BENCHMARK(BM_Hamiltonian)->Arg(3)->Arg(6)->Unit(benchmark::kMicrosecond);

}  // namespace
