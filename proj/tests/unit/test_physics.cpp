#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "qreporter/errors.hpp"
#include "qreporter/physics.hpp"

using namespace qreporter;

namespace {

const Vec3 kAxis = nv_axis_111();
FieldSetting aligned(double gauss) { return FieldSetting(gauss, kAxis); }
constexpr double kPi = 3.14159265358979323846;

}  // namespace

TEST(Constants, DipolarPrefactorsFromSi) {
  const auto& c = default_constants();
  // (mu0/4pi) hbar gamma^2 with gamma in rad/(s T), scaled to rad nm^3/us.
  EXPECT_NEAR(c.k_ee, 326.401360586, 1e-7);
  EXPECT_NEAR(c.k_ep, 0.496596355748, 1e-9);
  EXPECT_NEAR(c.k_ee / c.k_ep, c.gamma_e / c.gamma_p, 1e-9);
}

TEST(Constants, FileRoundTripAndChecks) {
  const auto path = std::filesystem::temp_directory_path() / "qreporter_constants_test.txt";
  default_constants().save(path);
  const auto c = PhysicalConstants::load(path);
  EXPECT_DOUBLE_EQ(c.k_ee, default_constants().k_ee);
  EXPECT_DOUBLE_EQ(c.gamma_p, default_constants().gamma_p);

  std::ofstream(path) << "version = 1\ndelta_nv_mhz = 2870\ngamma_e_mhz_per_g = 2.8\n"
                         "gamma_p_khz_per_g = 4.26\nk_ee = 326.97\n";
  EXPECT_THROW(PhysicalConstants::load(path), SchemaError);
  std::ofstream(path) << "version = 2\ndelta_nv_mhz = 2870\ngamma_e_mhz_per_g = 2.8\ngamma_p_khz_per_g = 4.26\n";
  EXPECT_THROW(PhysicalConstants::load(path), SchemaError);
  std::ofstream(path) << "version = 1\ndelta_nv_mhz = 2870\n";
  EXPECT_THROW(PhysicalConstants::load(path), SchemaError);
  std::filesystem::remove(path);
}

TEST(Zeeman, NvBranch) {
  EXPECT_NEAR(zeeman_nv(aligned(0.0), kAxis), 18032.7418316054, 1e-8);
  EXPECT_NEAR(zeeman_nv(aligned(383.0), kAxis), 11294.6539081860, 1e-8);
  EXPECT_NEAR(zeeman_nv(aligned(619.0), kAxis), 7142.7250572018, 1e-8);
  EXPECT_NEAR(zeeman_nv_upper(aligned(383.0), kAxis) - zeeman_nv(aligned(383.0), kAxis),
              2.0 * default_constants().gamma_e * 383.0, 1e-8);
}

TEST(Zeeman, RejectsMisalignedAndOutOfRange) {
  EXPECT_THROW(zeeman_nv(FieldSetting(383.0, Vec3::UnitZ()), kAxis), FieldMisalignmentError);
  EXPECT_NO_THROW(zeeman_nv(FieldSetting::from_angles(383.0, 54.7356103, 45.0 + 4.0), kAxis));
  EXPECT_THROW(zeeman_nv(aligned(1600.0), kAxis), DomainError);
  EXPECT_TRUE(near_level_anticrossing(aligned(1020.0)));
  EXPECT_FALSE(near_level_anticrossing(aligned(619.0)));
  EXPECT_THROW(FieldSetting(-1.0, Vec3::UnitZ()), DomainError);
  EXPECT_THROW(FieldSetting(1.0, Vec3::Zero()), DomainError);
}

TEST(Zeeman, ReporterAndProton) {
  EXPECT_EQ(zeeman_reporter(aligned(0.0)), 0.0);
  EXPECT_NEAR(zeeman_reporter(aligned(383.0)), 6738.0879234194, 1e-8);
  const double slope = (zeeman_reporter(aligned(500.0)) - zeeman_reporter(aligned(100.0))) / 400.0;
  EXPECT_NEAR(slope, 2.0 * kPi * 2.8, 1e-12);
  EXPECT_NEAR(larmor_proton(aligned(383.0)), 10.2515194835, 1e-9);
  EXPECT_NEAR(larmor_proton(aligned(619.0)), 16.5683826639, 1e-9);
  EXPECT_EQ(larmor_proton(aligned(0.0)), 0.0);
}

TEST(Dipolar, KnownGeometries) {
  const FieldSetting bz(383.0, Vec3::UnitZ());
  EXPECT_NEAR(dipolar_coupling_ee(Vec3::Zero(), Vec3(3, 0, 0), bz), 12.0889392810, 1e-8);
  EXPECT_NEAR(dipolar_coupling_ee(Vec3::Zero(), Vec3(0, 0, 3), bz), -24.1778785619, 1e-8);
  const double magic = std::acos(1.0 / std::sqrt(3.0));
  for (double r : {0.5, 2.0, 7.0}) {
    const Vec3 site(r * std::sin(magic), 0.0, r * std::cos(magic));
    EXPECT_NEAR(dipolar_coupling_ee(Vec3::Zero(), site, bz), 0.0, 1e-12);
  }
  EXPECT_THROW(dipolar_coupling_ee(Vec3::Zero(), Vec3(0.01, 0, 0), bz), GeometryError);
}

TEST(Dipolar, SphericalAverageVanishes) {
  // Gauss-Legendre would be exact; the midpoint rule on cos(theta) is enough here.
  const int n = 20000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = -1.0 + (i + 0.5) * 2.0 / n;
    sum += 1.0 - 3.0 * u * u;
  }
  EXPECT_NEAR(sum / n, 0.0, 1e-8);
}

TEST(Hyperfine, ForwardValues) {
  auto h = hyperfine_from_geometry(0.22, 26.0);
  EXPECT_NEAR(h.a, -66.3881522733, 1e-8);
  EXPECT_NEAR(h.b, 55.1263056722, 1e-8);
  h = hyperfine_from_geometry(0.26, 47.0);
  EXPECT_NEAR(h.a, -11.1707420288, 1e-8);
  EXPECT_NEAR(h.b, 42.2781069627, 1e-8);
  EXPECT_NEAR(hyperfine_from_geometry(0.3, 0.0).b, 0.0, 1e-15);
  EXPECT_NEAR(hyperfine_from_geometry(0.3, 30.0, 12.0).a - hyperfine_from_geometry(0.3, 30.0).a, 12.0, 1e-12);
  EXPECT_THROW(hyperfine_from_geometry(0.01, 30.0), GeometryError);
}

TEST(Hyperfine, InverseBothSigns) {
  const auto g = geometry_from_hyperfine({66.0, 52.0, 0.0}, {0.0, 0.0});
  EXPECT_NEAR(g.negative_a.point.r_nm, 0.2223696671, 1e-9);
  EXPECT_NEAR(g.negative_a.point.theta_deg, 25.0694467432, 1e-8);
  EXPECT_NEAR(g.positive_a.point.r_nm, 0.1852117652, 1e-9);
  EXPECT_NEAR(g.positive_a.point.theta_deg, 76.8356215657, 1e-8);
  EXPECT_EQ(g.branch(-1).a_sign, -1);
  EXPECT_THROW(geometry_from_hyperfine({66.0, 0.0, 0.0}, {0.0, 0.0}), NoSolutionError);
}

TEST(Hyperfine, RoundTripIdentity) {
  for (int deg = 10; deg <= 80; deg += 5) {
    for (double r : {0.15, 0.22, 0.4}) {
      const auto h = hyperfine_from_geometry(r, deg);
      const auto g = geometry_from_hyperfine(h, {0.0, 0.0});
      const auto& br = h.a >= 0 ? g.positive_a : g.negative_a;
      EXPECT_NEAR(br.point.r_nm / r, 1.0, 1e-9) << deg;
      EXPECT_NEAR(br.point.theta_deg / deg, 1.0, 1e-9) << deg;
    }
  }
}

TEST(Hyperfine, ContourSweepsA0) {
  const auto g = geometry_from_hyperfine({66.0, 52.0, 0.0}, {0.0, 40.0}, 5);
  ASSERT_EQ(g.negative_a.contour.size(), 5u);
  // Larger a0 pushes the negative branch to larger |a_dip|, smaller theta.
  EXPECT_GT(g.negative_a.contour.front().theta_deg, g.negative_a.contour.back().theta_deg);
  const auto mid = solve_proton_geometry(-66.0 - 20.0, 52.0);
  EXPECT_NEAR(g.negative_a.point.theta_deg, mid.theta_deg, 1e-12);
}

TEST(Hyperfine, DegenerateSmallB) {
  const auto g = geometry_from_hyperfine({66.0, 1e-9, 0.0}, {0.0, 0.0});
  EXPECT_TRUE(g.positive_a.degenerate);
  EXPECT_TRUE(g.negative_a.degenerate);
  EXPECT_NEAR(g.negative_a.point.theta_deg, 0.0, 1e-6);
  EXPECT_NEAR(g.positive_a.point.theta_deg, 90.0, 1e-6);
}

TEST(Eseem, Frequencies) {
  const double wn = larmor_proton(aligned(619.0));
  const auto f = eseem_frequencies({66.0, 52.0, 0.0}, wn);
  EXPECT_NEAR(f.omega_plus, 30.7570812705, 1e-8);
  EXPECT_NEAR(f.omega_minus, 55.9734272661, 1e-8);
  EXPECT_NEAR(f.depth_k, 0.2504452969, 1e-9);
  EXPECT_NEAR(f.depth_scaling, 2.0 * std::sqrt(f.depth_k), 1e-12);

  const auto nob = eseem_frequencies({66.0, 0.0, 0.0}, wn);
  EXPECT_NEAR(nob.omega_plus, std::abs(33.0 - wn), 1e-12);
  EXPECT_NEAR(nob.omega_minus, 33.0 + wn, 1e-12);
  EXPECT_EQ(nob.depth_k, 0.0);
  const auto bare = eseem_frequencies({0.0, 0.0, 0.0}, wn);
  EXPECT_NEAR(bare.omega_plus, wn, 1e-12);
  EXPECT_NEAR(bare.omega_minus, wn, 1e-12);
}

TEST(Eseem, InverseFromMeasuredFrequencies) {
  const double wn = larmor_proton(aligned(619.0));
  const auto h = hyperfine_from_eseem(30.0, 59.0, wn);
  EXPECT_NEAR(h.a, 77.8893164274, 1e-8);
  EXPECT_NEAR(h.b, 39.9650994003, 1e-8);
  EXPECT_THROW(hyperfine_from_eseem(1.0, 100.0, wn), NoSolutionError);
}

TEST(Eseem, BranchIdentityRandomized) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = u(rng) - 50.0, b = u(rng), wn = 0.3 * u(rng);
    const auto f = eseem_frequencies({a, b, 0.0}, wn);
    const double lhs = f.omega_plus * f.omega_plus - f.omega_minus * f.omega_minus;
    EXPECT_NEAR(lhs, -2.0 * a * wn, 1e-9 * (1.0 + std::abs(a * wn)));
  }
}

TEST(MinSeparation, Values) {
  EXPECT_NEAR(min_separation_from_t1(29.4, 0.25), 13.3868922099, 1e-8);
  EXPECT_NEAR(min_separation_from_t1(29.4, 0.0130259895), 5.0, 1e-8);
  double prev = 0.0;
  for (double t1 : {1.0, 5.0, 29.4, 100.0}) {
    const double r = min_separation_from_t1(t1, 0.25);
    EXPECT_GT(r, prev);
    prev = r;
  }
  EXPECT_THROW(min_separation_from_t1(0.0, 0.25), DomainError);
}

TEST(UnitScaling, DoublingDistanceDividesByEight) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const FieldSetting bz(383.0, Vec3(0.2, 0.1, 1.0));
  for (int i = 0; i < 200; ++i) {
    const Vec3 v(u(rng) * 5, u(rng) * 5, u(rng) * 5);
    if (v.norm() < 0.2) continue;
    const double d1 = dipolar_coupling_ee(Vec3::Zero(), v, bz);
    const double d2 = dipolar_coupling_ee(Vec3::Zero(), 2.0 * v, bz);
    EXPECT_NEAR(d1 / 8.0, d2, 1e-12 * std::abs(d1));
    const double th = 90.0 * (u(rng) + 1.0);
    const auto h1 = hyperfine_from_geometry(0.3, th), h2 = hyperfine_from_geometry(0.6, th);
    EXPECT_NEAR(h1.a / 8.0, h2.a, 1e-12 * (1.0 + std::abs(h1.a)));
    EXPECT_NEAR(h1.b / 8.0, h2.b, 1e-12 * (1.0 + std::abs(h1.b)));
  }
}

TEST(Scene, Validation) {
  SpinSystem s;
  s.field = FieldSetting(383.0, Vec3::UnitZ());
  s.reporter_sites = {{0, 0, 3}, {1, 0, 3}};
  EXPECT_NO_THROW(s.validate());
  s.reporter_sites.push_back({1.01, 0, 3});
  EXPECT_THROW(s.validate(), GeometryError);
  s.reporter_sites.pop_back();
  s.reporter_sites.push_back({2, 0, 5});
  EXPECT_THROW(s.validate(), GeometryError);
}
