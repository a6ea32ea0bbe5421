#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "qreporter/localize.hpp"

using namespace qreporter;

namespace {

MultiAngleDataset noiseless_dataset(const std::vector<Vec3>& sites, double azimuth_offset_deg = 0.0,
                                    double sigma = 0.01) {
  const double pol[] = {0, 35, 35, 35, 70, 70, 70};
  const double az[] = {0, 0, 120, 240, 60, 180, 300};
  const auto grid = linspace(0.0, 4.0, 60);
  MultiAngleDataset data;
  for (int i = 0; i < 7; ++i) {
    SpinSystem s;
    s.reporter_sites = sites;
    s.field = FieldSetting::from_angles(300.0, pol[i], az[i] + azimuth_offset_deg);
    auto trace = tabulate(grid, [&](double t) { return deer_signal(t, s, 1.0, DecoherenceParams{}); });
    trace.sigma.assign(trace.size(), sigma);
    data.traces.push_back({s.field, std::move(trace)});
  }
  return data;
}

ReporterLocalizationConfig small_config(std::size_t n_spins = 1) {
  ReporterLocalizationConfig cfg;
  cfg.x = GridAxis::with_step(-4.0, 4.0, 0.5);
  cfg.y = cfg.x;
  cfg.n_spins = n_spins;
  cfg.threads = 1;
  return cfg;
}

}  // namespace

TEST(GridAxis, CellsAndErrors) {
  const auto ax = GridAxis::with_step(-8.0, 8.0, 0.5);
  EXPECT_EQ(ax.n, 32u);
  EXPECT_DOUBLE_EQ(ax.center(0), -7.75);
  EXPECT_EQ(*ax.cell_of(0.1), 16u);
  EXPECT_EQ(*ax.cell_of(8.0), 31u);
  EXPECT_FALSE(ax.cell_of(8.01).has_value());
  EXPECT_THROW(GridAxis::with_step(0.0, 1.0, 0.3), DomainError);
  EXPECT_THROW(GridAxis::with_step(0.0, 1.0, -0.5), DomainError);
  EXPECT_THROW(GridAxis::with_step(1.0, 1.0, 0.5), DomainError);
}

TEST(ProbabilityMap, LogWeightsAreStable) {
  const auto ax = GridAxis::with_step(0.0, 2.0, 1.0);
  const auto m = ProbabilityMap::from_log_weights(ax, ax, {1000.0, 1000.0 + std::log(3.0), -1e300, 1000.0});
  EXPECT_NEAR(m.total(), 1.0, 1e-12);
  EXPECT_NEAR(m.at(1, 0), 0.6, 1e-12);
  EXPECT_NEAR(m.at(0, 0), 0.2, 1e-12);
  EXPECT_EQ(m.at(0, 1), 0.0);
  EXPECT_EQ(m.argmax(), std::make_pair(std::size_t{1}, std::size_t{0}));
}

TEST(ProbabilityMap, CredibleRegions) {
  const auto ax = GridAxis::with_step(0.0, 2.0, 1.0);
  ProbabilityMap m(ax, ax);
  m.density = {0.1, 0.6, 0.05, 0.25};
  const auto mask50 = m.credible_mask(0.5);
  EXPECT_EQ(std::count(mask50.begin(), mask50.end(), true), 1);
  EXPECT_TRUE(m.in_credible_region(1.5, 0.5, 0.5));
  EXPECT_FALSE(m.in_credible_region(0.5, 0.5, 0.5));
  EXPECT_DOUBLE_EQ(m.credible_area(0.8), 2.0);
  EXPECT_DOUBLE_EQ(m.credible_area(0.9), 3.0);
  EXPECT_FALSE(m.in_credible_region(5.0, 5.0, 0.99));
}

TEST(ProbabilityMap, NormalizeZeroThrows) {
  const auto ax = GridAxis::with_step(0.0, 2.0, 1.0);
  ProbabilityMap m(ax, ax);
  EXPECT_THROW(m.normalize(), NoSolutionError);
  m.density = {1.0, 2.0, 3.0, 4.0};
  m.normalize();
  EXPECT_NEAR(m.total(), 1.0, 1e-15);
}

TEST(Dataset, Validation) {
  MultiAngleDataset data;
  EXPECT_THROW(data.validate(), DomainError);
  auto d = noiseless_dataset({{1.25, -1.75, 3.0}});
  EXPECT_NO_THROW(d.validate());
  d.traces.resize(1);
  EXPECT_THROW(d.validate(), DomainError);
  d = noiseless_dataset({{1.25, -1.75, 3.0}});
  d.traces[2].trace.sigma.clear();
  EXPECT_THROW(d.validate(), DomainError);
}

TEST(Reporters, NoiselessSingleArgmaxOnTruth) {
  const Vec3 truth(1.25, -1.75, 3.0);
  const auto data = noiseless_dataset({truth});
  EXPECT_NEAR(deer_dataset_chi2(data, {truth}, 1.0, DecoherenceParams{}), 0.0, 1e-18);
  const auto res = localize_reporters(data, small_config());
  const auto am = res.combined.argmax_position();
  EXPECT_NEAR(am.x(), truth.x(), 1e-12);
  EXPECT_NEAR(am.y(), truth.y(), 1e-12);
  EXPECT_NEAR(res.combined.total(), 1.0, 1e-9);
  EXPECT_NEAR((res.sites[0] - truth).norm(), 0.0, 1e-4);
  EXPECT_EQ(res.dof, 7u * 60u - 2u);
  EXPECT_FALSE(res.partial);
}

TEST(Reporters, RotationEquivariance) {
  const Vec3 truth(1.25, -1.75, 3.0);
  const Vec3 rotated(1.75, 1.25, 3.0);  // +90 deg about z
  const auto cfg = small_config();
  const auto a = localize_reporters(noiseless_dataset({truth}, 0.0, 0.05), cfg);
  const auto b = localize_reporters(noiseless_dataset({rotated}, 90.0, 0.05), cfg);
  const std::size_t n = cfg.x.n;
  double worst = 0.0;
  for (std::size_t iy = 0; iy < n; ++iy) {
    for (std::size_t ix = 0; ix < n; ++ix) {
      // (x, y) -> (-y, x)
      worst = std::max(worst, std::abs(a.combined.at(ix, iy) - b.combined.at(n - 1 - iy, ix)));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Reporters, BudgetExhaustionCarriesPartialResult) {
  auto cfg = small_config();
  cfg.max_evaluations = 50;
  try {
    localize_reporters(noiseless_dataset({{1.25, -1.75, 3.0}}), cfg);
    FAIL() << "expected LocalizationBudgetError";
  } catch (const LocalizationBudgetError& e) {
    EXPECT_TRUE(e.partial().partial);
    EXPECT_GE(e.partial().evaluations, 50u);
  }
}

TEST(Reporters, ThreadCountDoesNotChangeResult) {
  auto cfg = small_config(2);
  cfg.x = GridAxis::with_step(-2.0, 2.0, 0.5);
  cfg.y = cfg.x;
  cfg.starts_per_spin = 2;
  const auto data = noiseless_dataset({{1.25, -0.75, 3.0}, {-1.25, 0.75, 3.0}}, 0.0, 0.05);
  const auto one = localize_reporters(data, cfg);
  cfg.threads = 3;
  const auto three = localize_reporters(data, cfg);
  ASSERT_EQ(one.spin_maps.size(), 2u);
  EXPECT_EQ(one.combined.density, three.combined.density);
  EXPECT_EQ(one.chi2_min, three.chi2_min);
}

TEST(Reporters, RejectsBadConfig) {
  const auto data = noiseless_dataset({{1.25, -1.75, 3.0}});
  auto cfg = small_config(0);
  EXPECT_THROW(localize_reporters(data, cfg), DomainError);
}

TEST(Protons, ZeroCovarianceIsADelta) {
  ProtonLocalizationConfig cfg;
  cfg.samples = 500;
  const HyperfineParams hf{-66.0, 52.0, 0.0};
  const auto res = localize_protons(hf, cfg);
  const auto& neg = res.branch(-1);
  const auto exact = solve_proton_geometry(-66.0, 52.0);
  EXPECT_EQ(neg.accepted, 500u);
  EXPECT_NEAR(neg.r_nm.lo, exact.r_nm, 1e-12);
  EXPECT_NEAR(neg.r_nm.hi, exact.r_nm, 1e-12);
  EXPECT_NEAR(neg.theta_deg.median, exact.theta_deg, 1e-9);
  EXPECT_NEAR(neg.map.total(), 1.0, 1e-9);
  EXPECT_NEAR(res.branch(+1).r_nm.median, 0.1852117652, 1e-9);
}

TEST(Protons, IntervalsShrinkWithCovariance) {
  double last_width = 1e9;
  for (double scale : {1.0, 0.25, 0.0625}) {
    ProtonLocalizationConfig cfg;
    cfg.covariance << 18.0 * 18.0 * scale, 0.0, 0.0, 20.0 * 20.0 * scale;
    cfg.samples = 5000;
    const auto res = localize_protons({66.0, 52.0, 0.0}, cfg);
    const double w = res.negative_a.r_nm.hi - res.negative_a.r_nm.lo;
    EXPECT_LT(w, last_width);
    last_width = w;
  }
}

TEST(Protons, DeterministicForSeed) {
  ProtonLocalizationConfig cfg;
  cfg.covariance << 324.0, 0.0, 0.0, 400.0;
  cfg.a0_range = {0.0, 40.0};
  cfg.samples = 2000;
  const auto a = localize_protons({66.0, 52.0, 0.0}, cfg);
  const auto b = localize_protons({66.0, 52.0, 0.0}, cfg);
  EXPECT_EQ(a.negative_a.map.density, b.negative_a.map.density);
  EXPECT_EQ(a.positive_a.theta_deg.median, b.positive_a.theta_deg.median);
}
