#include "qreporter/physics.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kMaxNvField = 1500.0;

double angle_deg(const Vec3& u, const Vec3& v) {
  const double c = std::clamp(u.normalized().dot(v.normalized()), -1.0, 1.0);
  return std::acos(c) / kDeg;
}

void check_aligned(const FieldSetting& field, const Vec3& nv_axis, double max_misalignment_deg) {
  if (field.magnitude() < 0.0 || field.magnitude() > kMaxNvField) {
    std::ostringstream msg;
    msg << "field " << field.magnitude() << " G outside the NV model window [0, " << kMaxNvField
        << "] G";
    throw DomainError(msg.str());
  }
  if (field.magnitude() == 0.0) return;
  const double misalignment = angle_deg(field.direction(), nv_axis);
  if (misalignment > max_misalignment_deg) {
    std::ostringstream msg;
    msg << "field is " << misalignment << " deg off the NV axis (limit " << max_misalignment_deg
        << " deg); the linear Zeeman formula does not apply";
    throw FieldMisalignmentError(msg.str());
  }
}

}  // namespace

FieldSetting::FieldSetting(double magnitude_gauss, const Vec3& direction) {
  if (!(magnitude_gauss >= 0.0) || !std::isfinite(magnitude_gauss)) {
    throw DomainError("field magnitude must be finite and non-negative");
  }
  const double n = direction.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw DomainError("field direction must be a nonzero vector");
  magnitude_ = magnitude_gauss;
  direction_ = direction / n;
}

FieldSetting FieldSetting::from_angles(double magnitude_gauss, double polar_deg, double azimuth_deg) {
  const double th = polar_deg * kDeg;
  const double ph = azimuth_deg * kDeg;
  return {magnitude_gauss, Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th))};
}

Vec3 nv_axis_111() { return Vec3(1.0, 1.0, 1.0).normalized(); }

void SpinSystem::validate() const {
  std::vector<Vec3> all;
  all.push_back(nv_position);
  auto on_surface = [&](const Vec3& p, const char* what, std::size_t i) {
    if (std::abs(p.z() - surface_z) > surface_tolerance) {
      std::ostringstream msg;
      msg << what << " " << i << " at z = " << p.z() << " nm is off the surface plane z = " << surface_z
          << " (tolerance " << surface_tolerance << ")";
      throw GeometryError(msg.str());
    }
  };
  for (std::size_t i = 0; i < reporter_sites.size(); ++i) {
    on_surface(reporter_sites[i], "reporter", i);
    all.push_back(reporter_sites[i]);
  }
  for (std::size_t i = 0; i < proton_sites.size(); ++i) {
    on_surface(proton_sites[i], "proton", i);
    all.push_back(proton_sites[i]);
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if ((all[i] - all[j]).norm() <= kMinSiteSeparation) {
        throw GeometryError("two sites coincide (separation below 0.05 nm)");
      }
    }
  }
}

double zeeman_nv(const FieldSetting& field, const Vec3& nv_axis, const PhysicalConstants& c,
                 double max_misalignment_deg) {
  check_aligned(field, nv_axis, max_misalignment_deg);
  return c.delta_nv - c.gamma_e * field.magnitude();
}

double zeeman_nv_upper(const FieldSetting& field, const Vec3& nv_axis, const PhysicalConstants& c,
                       double max_misalignment_deg) {
  check_aligned(field, nv_axis, max_misalignment_deg);
  return c.delta_nv + c.gamma_e * field.magnitude();
}

bool near_level_anticrossing(const FieldSetting& field, const PhysicalConstants& c, double window_gauss) {
  return std::abs(field.magnitude() - c.delta_nv / c.gamma_e) < window_gauss;
}

double zeeman_reporter(const FieldSetting& field, const PhysicalConstants& c) {
  return c.gamma_e * field.magnitude();
}

double larmor_proton(const FieldSetting& field, const PhysicalConstants& c) {
  return c.gamma_p * field.magnitude();
}

double dipolar_coupling_ee(const Vec3& site_i, const Vec3& site_j, const FieldSetting& field,
                           const PhysicalConstants& c) {
  const Vec3 d = site_j - site_i;
  const double r = d.norm();
  if (r < kMinSiteSeparation) throw GeometryError("coincident sites in dipolar coupling");
  const double cos_t = d.dot(field.direction()) / r;
  return c.k_ee * (1.0 - 3.0 * cos_t * cos_t) / (r * r * r);
}

HyperfineParams hyperfine_from_geometry(double r_nm, double theta_deg, double a0,
                                        const PhysicalConstants& c) {
  if (!(r_nm >= kMinSiteSeparation)) throw GeometryError("degenerate proton radius");
  if (!(theta_deg >= 0.0 && theta_deg <= 180.0)) throw DomainError("theta must lie in [0, 180] deg");
  const double th = theta_deg * kDeg;
  const double cs = std::cos(th);
  const double sn = std::sin(th);
  const double scale = c.k_ep / (r_nm * r_nm * r_nm);
  return {a0 + scale * (1.0 - 3.0 * cs * cs), std::abs(scale * 3.0 * cs * sn), a0};
}

HyperfineParams hyperfine_from_sites(const Vec3& reporter, const Vec3& proton, const FieldSetting& field,
                                     double a0, const PhysicalConstants& c) {
  const Vec3 d = proton - reporter;
  const double r = d.norm();
  if (r < kMinSiteSeparation) throw GeometryError("degenerate proton radius");
  const double cos_t = std::clamp(d.dot(field.direction()) / r, -1.0, 1.0);
  return hyperfine_from_geometry(r, std::acos(cos_t) / kDeg, a0, c);
}

ProtonGeometry solve_proton_geometry(double a_dip, double b, const PhysicalConstants& c) {
  if (!(b > 0.0) || !std::isfinite(b) || !std::isfinite(a_dip)) {
    throw NoSolutionError("hyperfine inversion needs finite b > 0");
  }
  const double rho = a_dip / b;
  // Positive root of t^2 - 3 rho t - 2 = 0, written to avoid cancellation.
  const double disc = std::sqrt(9.0 * rho * rho + 8.0);
  const double t = rho >= 0.0 ? 0.5 * (3.0 * rho + disc) : 4.0 / (disc - 3.0 * rho);
  const double scale = b * (1.0 + t * t) / (3.0 * t);
  return {std::cbrt(c.k_ep / scale), std::atan(t) / kDeg};
}

GeometryEstimate geometry_from_hyperfine(const HyperfineParams& params, const Interval& a0_range,
                                         int contour_samples, const PhysicalConstants& c) {
  if (!(params.b > 0.0)) throw NoSolutionError("hyperfine inversion needs b > 0");
  if (a0_range.hi < a0_range.lo) throw DomainError("a0 interval is reversed");
  if (contour_samples < 1) contour_samples = 1;

  auto solve_branch = [&](int sign) {
    GeometryBranch br;
    br.a_sign = sign;
    const double a_signed = sign * std::abs(params.a);
    br.point = solve_proton_geometry(a_signed - a0_range.mid(), params.b, c);
    const int n = a0_range.width() > 0.0 ? contour_samples : 1;
    for (int i = 0; i < n; ++i) {
      const double a0 = n == 1 ? a0_range.lo : a0_range.lo + a0_range.width() * i / (n - 1);
      br.contour.push_back(solve_proton_geometry(a_signed - a0, params.b, c));
    }
    const double th = br.point.theta_deg * kDeg;
    br.degenerate = std::abs(std::sin(th) * std::cos(th)) < 1e-6;
    return br;
  };
  return {solve_branch(+1), solve_branch(-1)};
}

EseemFrequencies eseem_frequencies(const HyperfineParams& p, double omega_n) {
  if (!(omega_n >= 0.0)) throw DomainError("omega_n must be non-negative");
  EseemFrequencies f;
  const double q = 0.25 * p.b * p.b;
  f.omega_plus = std::sqrt((0.5 * p.a - omega_n) * (0.5 * p.a - omega_n) + q);
  f.omega_minus = std::sqrt((0.5 * p.a + omega_n) * (0.5 * p.a + omega_n) + q);
  const double prod = f.omega_plus * f.omega_minus;
  if (prod > 0.0) {
    const double ratio = p.b * omega_n / prod;
    f.depth_k = ratio * ratio;
    f.depth_scaling = 2.0 * ratio;
  }
  return f;
}

HyperfineParams hyperfine_from_eseem(double omega_plus, double omega_minus, double omega_n) {
  if (!(omega_n > 0.0)) throw DomainError("omega_n must be positive to invert ESEEM frequencies");
  const double wp2 = omega_plus * omega_plus;
  const double wm2 = omega_minus * omega_minus;
  const double a = (wm2 - wp2) / (2.0 * omega_n);
  const double b2 = 2.0 * (wp2 + wm2) - a * a - 4.0 * omega_n * omega_n;
  if (b2 < 0.0) throw NoSolutionError("ESEEM frequencies imply b^2 < 0");
  return {a, std::sqrt(b2), 0.0};
}

double min_separation_from_t1(double t1_us, double geometry_factor, const PhysicalConstants& c) {
  if (!(t1_us > 0.0) || !(geometry_factor > 0.0)) {
    throw DomainError("t1 and geometry factor must be positive");
  }
  return std::cbrt(geometry_factor * c.k_ee * t1_us);
}

}  // namespace qreporter
