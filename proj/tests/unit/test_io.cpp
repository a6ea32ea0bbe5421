#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qreporter/experiment.hpp"
#include "qreporter/io.hpp"

using namespace qreporter;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("qreporter_io_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scene(const std::string& name) { return fs::path(QREPORTER_DATA_DIR) / "scenes" / name; }

std::string schema_message(const std::string& text) {
  try {
    parse_config(text);
  } catch (const SchemaError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Noise, SigmaAndSeeds) {
  NoiseModel n;
  EXPECT_NEAR(n.sigma(), 1.0 / (0.03 * std::sqrt(5e6 * 0.02)), 1e-15);
  EXPECT_NEAR(n.sigma(), 0.1054092553, 1e-9);
  const auto model = tabulate(linspace(0.0, 1.0, 50), [](double t) { return std::cos(t); });
  const auto a = synthesize_trace(model, n, 11);
  const auto b = synthesize_trace(model, n, 11);
  const auto c = synthesize_trace(model, n, 12);
  EXPECT_EQ(a.signal, b.signal);
  EXPECT_NE(a.signal, c.signal);
  n.repetitions = 1e30;
  const auto quiet = synthesize_trace(model, n, 11);
  for (std::size_t i = 0; i < model.size(); ++i) EXPECT_NEAR(quiet.signal[i], model.signal[i], 1e-10);
  n.repetitions = 0.0;
  EXPECT_THROW(n.validate(), DomainError);
}

TEST_F(TempDir, TraceRoundTrip) {
  auto t = tabulate(linspace(0.0, 2.0, 37), [](double x) { return std::exp(-x) * std::cos(7.0 * x) + 1e-17; });
  t.sigma.assign(t.size(), 0.1054092553389459);
  save_trace(dir_ / "t.csv", t, {{"model", "bath"}, {"field_gauss", "383"}});
  const auto back = load_trace(dir_ / "t.csv");
  EXPECT_EQ(back.trace.abscissa, t.abscissa);
  EXPECT_EQ(back.trace.signal, t.signal);
  EXPECT_EQ(back.trace.sigma, t.sigma);
  EXPECT_EQ(back.metadata.at("model"), "bath");
  EXPECT_EQ(back.metadata.at("abscissa_units"), "us");
  save_trace(dir_ / "t2.csv", back.trace, back.metadata);
  EXPECT_EQ(slurp(dir_ / "t.csv"), slurp(dir_ / "t2.csv"));
}

TEST_F(TempDir, TraceErrors) {
  std::ofstream(dir_ / "bad.csv") << "# qreporter-trace version=1\nabscissa,signal\n0,1\n1,abc\n";
  EXPECT_THROW(load_trace(dir_ / "bad.csv"), SchemaError);
  std::ofstream(dir_ / "ver.csv") << "# qreporter-trace version=9\nabscissa,signal\n0,1\n";
  EXPECT_THROW(load_trace(dir_ / "ver.csv"), SchemaError);
  EXPECT_THROW(load_trace(dir_ / "missing.csv"), SchemaError);
}

TEST_F(TempDir, FitRoundTrip) {
  FitResult f;
  f.model = "echo1";
  f.names = {"a", "b"};
  f.values = Eigen::Vector2d(66.1, 51.9);
  f.covariance.resize(2, 2);
  f.covariance << 4.0, 0.3, 0.3, 9.0;
  f.fixed = {{"omega_n", 16.5683826639}, {"t2_s", std::numeric_limits<double>::infinity()}};
  f.chi2 = 201.3;
  f.reduced_chi2 = 1.0221;
  f.dof = 197;
  f.converged = true;
  save_fit(dir_ / "f.json", f);
  const auto g = load_fit(dir_ / "f.json");
  EXPECT_EQ(g.model, f.model);
  EXPECT_EQ(g.names, f.names);
  EXPECT_EQ(g.values, f.values);
  EXPECT_EQ(g.covariance, f.covariance);
  EXPECT_EQ(g.fixed, f.fixed);
  EXPECT_EQ(g.chi2, f.chi2);
  EXPECT_EQ(g.dof, f.dof);
  EXPECT_TRUE(g.converged);
  EXPECT_EQ(fit_to_json(f), fit_to_json(g));
}

TEST_F(TempDir, MapRoundTrip) {
  ProbabilityMap m(GridAxis::with_step(-1.0, 1.0, 0.5), GridAxis::with_step(0.0, 1.5, 0.5));
  for (std::size_t i = 0; i < m.density.size(); ++i) m.density[i] = 1.0 / (1.0 + i * i);
  m.normalize();
  m.units = "nm";
  save_map(dir_ / "m.txt", m);
  const auto back = load_map(dir_ / "m.txt");
  EXPECT_EQ(back.density, m.density);
  EXPECT_EQ(back.x.n, 4u);
  EXPECT_EQ(back.y.n, 3u);
  EXPECT_EQ(back.x.lo, -1.0);
  EXPECT_NEAR(back.total(), 1.0, 1e-9);
}

TEST_F(TempDir, DatasetRoundTrip) {
  ExperimentConfig cfg = load_config(scene("localize_single.json"));
  cfg.grid.points = 20;
  const auto data = synthesize_angles(cfg);
  save_dataset(dir_ / "set.json", data);
  const auto back = load_dataset(dir_ / "set.json");
  ASSERT_EQ(back.traces.size(), data.traces.size());
  for (std::size_t i = 0; i < data.traces.size(); ++i) {
    EXPECT_EQ(back.traces[i].trace.signal, data.traces[i].trace.signal);
    EXPECT_NEAR((back.traces[i].field.direction() - data.traces[i].field.direction()).norm(), 0.0, 1e-15);
    EXPECT_EQ(back.traces[i].field.magnitude(), data.traces[i].field.magnitude());
  }
}

TEST_F(TempDir, ConfigRoundTripIsStable) {
  for (const auto& entry : fs::directory_iterator(fs::path(QREPORTER_DATA_DIR) / "scenes")) {
    const auto cfg = load_config(entry.path());
    const auto text = config_to_json(cfg);
    const auto again = config_to_json(parse_config(text));
    EXPECT_EQ(text, again) << entry.path();
  }
}

TEST(Config, Fixtures) {
  const auto a = load_config(scene("nv_a_619G.json"));
  EXPECT_EQ(a.model.id, "echo1");
  EXPECT_DOUBLE_EQ(a.scene.field.magnitude(), 619.0);
  EXPECT_NEAR(a.scene.field.direction().dot(nv_axis_111()), 1.0, 1e-15);
  EXPECT_EQ(a.fit.lattice_points, 3u);
  const auto params = resolve_model_params(a);
  EXPECT_NEAR(params.at("omega_n"), 16.5683826639, 1e-9);
  EXPECT_EQ(params.at("t2_s"), 1.5);

  const auto b = load_config(scene("nv_b_665G.json"));
  const auto pb = resolve_model_params(b);
  EXPECT_NEAR(pb.at("a1"), -11.1707420288, 1e-6);
  EXPECT_NEAR(pb.at("b1"), 42.2781069627, 1e-6);

  const auto p = load_config(scene("protons_nv_a.json"));
  ASSERT_TRUE(p.protons.has_value());
  EXPECT_EQ(p.protons->a0_range.hi, 40.0);
  EXPECT_TRUE(std::isinf(load_config(scene("deer_three_reporters.json")).decoherence.t2_nv));
}

TEST(Config, SchemaErrorsNameTheField) {
  EXPECT_NE(schema_message(R"({"seed": 1})").find("'version'"), std::string::npos);
  EXPECT_NE(schema_message(R"({"version": 1, "grid": {"start": 0, "points": 10}})").find("grid.stop"),
            std::string::npos);
  EXPECT_NE(schema_message(R"({"version": 1, "oracle": {"sequence": "custom"}})").find("oracle.sequence"),
            std::string::npos);
  EXPECT_NE(schema_message(R"({"version": 1, "scene": {"reporters_nm": [[0, 0]]}})").find("reporters_nm"),
            std::string::npos);
  EXPECT_NE(schema_message(R"({"version": 2})").find("version 2"), std::string::npos);
  EXPECT_NE(schema_message("{\n  \"version\": 1,\n  \"seed\": ,\n}").find("line 3"), std::string::npos);
  EXPECT_THROW(parse_config(R"({"version": 1, "model": {"id": "eseem", "params": {"a": "x"}}})"), SchemaError);
}

TEST(Config, UnknownModelParamIsRejected) {
  auto cfg = parse_config(R"({"version": 1, "model": {"id": "eseem", "params": {"zeta": 1.0}}})");
  EXPECT_THROW(resolve_model_params(cfg), SchemaError);
}

TEST_F(TempDir, ManifestIsAcceptedAsConfig) {
  RunManifest m;
  m.command = "simulate";
  m.config = load_config(scene("bath_383G.json"));
  m.seed = m.config.seed;
  m.constants_version = "1";
  m.outputs = {"out.csv"};
  save_manifest(dir_ / "run.json", m);
  const auto back = load_config(dir_ / "run.json");
  EXPECT_EQ(config_to_json(back), config_to_json(m.config));
}

TEST(Experiment, SimulationIsDeterministic) {
  auto cfg = load_config(scene("nv_a_619G.json"));
  const auto a = simulate_model(cfg);
  const auto b = simulate_model(cfg);
  EXPECT_EQ(a.signal, b.signal);
  const auto n1 = synthesize_trace(a, *cfg.noise, cfg.seed);
  const auto n2 = synthesize_trace(b, *cfg.noise, cfg.seed);
  EXPECT_EQ(n1.signal, n2.signal);
}
