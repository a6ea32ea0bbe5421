#include <benchmark/benchmark.h>

#include "qreporter/fit.hpp"
#include "qreporter/io.hpp"
#include "qreporter/localize.hpp"

using namespace qreporter;

namespace {

MultiAngleDataset dataset(std::size_t points) {
  const double pol[] = {0, 35, 35, 35, 70, 70, 70};
  const double az[] = {0, 0, 120, 240, 60, 180, 300};
  MultiAngleDataset data;
  for (int i = 0; i < 7; ++i) {
    SpinSystem s;
    s.reporter_sites = {{1.25, -1.75, 3.0}, {-3.75, 2.25, 3.0}};
    s.field = FieldSetting::from_angles(300.0, pol[i], az[i]);
    auto tr = tabulate(linspace(0.0, 4.0, points), [&](double t) { return deer_signal(t, s, 1.0, DecoherenceParams{}); });
    data.traces.push_back({s.field, synthesize_trace(tr, NoiseModel{}, 10 + i)});
  }
  return data;
}

void BM_DeerChi2(benchmark::State& state) {
  const auto data = dataset(static_cast<std::size_t>(state.range(0)));
  const std::vector<Vec3> sites{{1.0, -1.5, 3.0}, {-3.5, 2.0, 3.0}};
  for (auto _ : state) benchmark::DoNotOptimize(deer_dataset_chi2(data, sites, 1.0, DecoherenceParams{}));
}
BENCHMARK(BM_DeerChi2)->Arg(100)->Arg(400);

void BM_SingleReporterMap(benchmark::State& state) {
  auto data = dataset(100);
  ReporterLocalizationConfig cfg;
  cfg.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(localize_reporters(data, cfg));
}
BENCHMARK(BM_SingleReporterMap)->Unit(benchmark::kMillisecond);

void BM_EchoFit(benchmark::State& state) {
  const double wn = 16.5683826639;
  const auto model = make_trace_model("echo1");
  const auto data = synthesize_trace(
      model.simulate(linspace(0.0, 2.0, 200), {{"a", 66.0}, {"b", 52.0}, {"b_rms", 0.3}, {"omega_n", wn}, {"t2_s", 1.5}}),
      NoiseModel{}, 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_trace(model, data, {{"a", 60.0}, {"b", 45.0}, {"b_rms", 0.25}, {"t2_s", 1.2}},
                                       {{"a", {0.0, 150.0}}, {"b", {0.0, 150.0}}, {"b_rms", {0.0, 2.0}}, {"t2_s", {0.1, 20.0}}},
                                       {{"omega_n", wn}, {"stretch", 1.0}}));
  }
}
BENCHMARK(BM_EchoFit)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
