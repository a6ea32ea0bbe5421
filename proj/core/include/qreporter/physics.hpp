#pragma once

#include <Eigen/Core>
#include <vector>

#include "qreporter/constants.hpp"

namespace qreporter {

using Vec3 = Eigen::Vector3d;

/// Static field: magnitude in G along a unit direction.
class FieldSetting {
 public:
  FieldSetting() = default;
  /// Direction is normalized; throws DomainError for a zero direction or
  /// negative magnitude.
  FieldSetting(double magnitude_gauss, const Vec3& direction);

  /// Direction given by polar/azimuth angles (degrees) in the lab frame.
  static FieldSetting from_angles(double magnitude_gauss, double polar_deg, double azimuth_deg);

  double magnitude() const noexcept { return magnitude_; }
  const Vec3& direction() const noexcept { return direction_; }

 private:
  double magnitude_ = 0.0;
  Vec3 direction_ = Vec3::UnitZ();
};

/// (111) axis in a frame whose z axis is the (100) surface normal.
Vec3 nv_axis_111();

/// Geometric scene. Lab frame: NV at `nv_position`, diamond surface is the
/// plane z = surface_z (nm).
struct SpinSystem {
  Vec3 nv_position = Vec3::Zero();
  Vec3 nv_axis = nv_axis_111();
  std::vector<Vec3> reporter_sites;
  std::vector<Vec3> proton_sites;
  FieldSetting field;
  double surface_z = 3.0;
  double surface_tolerance = 0.5;

  /// Throws GeometryError if a site is off the surface plane or two sites
  /// are closer than kMinSiteSeparation.
  void validate() const;
};

inline constexpr double kMinSiteSeparation = 0.05;  // nm

/// Hyperfine couplings in rad/us: H = a Jz Iz + b Jz Ix. `a` includes the
/// contact term a0.
struct HyperfineParams {
  double a = 0.0;
  double b = 0.0;
  double a0 = 0.0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const noexcept { return 0.5 * (lo + hi); }
  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return x >= lo && x <= hi; }
};

// Level structure ----------------------------------------------------------

/// ms=0 <-> ms=-1 transition, Delta - gamma_e B. Valid for B in [0, 1500] G
/// with the field along the NV axis; throws FieldMisalignmentError when the
/// angle exceeds `max_misalignment_deg`.
double zeeman_nv(const FieldSetting& field, const Vec3& nv_axis,
                 const PhysicalConstants& c = default_constants(),
                 double max_misalignment_deg = 5.0);

/// ms=0 <-> ms=+1 branch, Delta + gamma_e B (upper line of the Zeeman diagram).
double zeeman_nv_upper(const FieldSetting& field, const Vec3& nv_axis,
                       const PhysicalConstants& c = default_constants(),
                       double max_misalignment_deg = 5.0);

/// True when the NV ground-state level anticrossing (~1024 G) lies within
/// `window_gauss` of the field magnitude.
bool near_level_anticrossing(const FieldSetting& field, const PhysicalConstants& c = default_constants(),
                             double window_gauss = 50.0);

double zeeman_reporter(const FieldSetting& field, const PhysicalConstants& c = default_constants());
double larmor_proton(const FieldSetting& field, const PhysicalConstants& c = default_constants());

// Couplings ----------------------------------------------------------------

/// Secular electron-electron dipolar coupling k_ee (1 - 3cos^2 theta) / r^3,
/// theta measured from the field direction.
double dipolar_coupling_ee(const Vec3& site_i, const Vec3& site_j, const FieldSetting& field,
                           const PhysicalConstants& c = default_constants());

/// a = a0 + k_ep (1 - 3cos^2 theta)/r^3, b = |k_ep 3 cos theta sin theta / r^3|.
HyperfineParams hyperfine_from_geometry(double r_nm, double theta_deg, double a0 = 0.0,
                                        const PhysicalConstants& c = default_constants());

/// Same, from a reporter and proton position with theta relative to the field.
HyperfineParams hyperfine_from_sites(const Vec3& reporter, const Vec3& proton,
                                     const FieldSetting& field, double a0 = 0.0,
                                     const PhysicalConstants& c = default_constants());

struct ProtonGeometry {
  double r_nm = 0.0;
  double theta_deg = 0.0;
};

struct GeometryBranch {
  int a_sign = 0;               // hypothesised sign of the secular coupling
  ProtonGeometry point;         // solution at the midpoint of the a0 interval
  std::vector<ProtonGeometry> contour;  // solutions as a0 sweeps the interval
  bool degenerate = false;      // b -> 0: theta pinned at 0 or 90 deg
};

struct GeometryEstimate {
  GeometryBranch positive_a;
  GeometryBranch negative_a;
  const GeometryBranch& branch(int sign) const noexcept { return sign >= 0 ? positive_a : negative_a; }
};

/// Closed-form inverse of the point-dipole hyperfine model on theta in
/// (0, 90) deg for each hypothesis on the sign of a (|a| is what the ESEEM
/// frequencies fix). With t = tan(theta) and rho = (a - a0) / b:
///   t^2 - 3 rho t - 2 = 0,   k_ep / r^3 = b (1 + t^2) / (3 t).
GeometryEstimate geometry_from_hyperfine(const HyperfineParams& params, const Interval& a0_range,
                                         int contour_samples = 41,
                                         const PhysicalConstants& c = default_constants());

/// Single solve for a signed dipolar part a_dip = a - a0 and b > 0.
ProtonGeometry solve_proton_geometry(double a_dip, double b,
                                     const PhysicalConstants& c = default_constants());

struct EseemFrequencies {
  double omega_plus = 0.0;   // sqrt((a/2 - wn)^2 + b^2/4)
  double omega_minus = 0.0;  // sqrt((a/2 + wn)^2 + b^2/4)
  double depth_k = 0.0;      // Mims depth (b wn / (w+ w-))^2
  double depth_scaling = 0.0;  // 2 b wn / (w+ w-), reported for traceability
};

EseemFrequencies eseem_frequencies(const HyperfineParams& params, double omega_n);

/// Inverse of eseem_frequencies: recovers (a, b) from the two branch
/// frequencies. Throws NoSolutionError when b^2 would be negative.
HyperfineParams hyperfine_from_eseem(double omega_plus, double omega_minus, double omega_n);

/// Minimum mean reporter separation implied by a reporter T1, equating a
/// flip-flop rate k_ee / (g r^3) to 1/T1: r = (g k_ee T1)^(1/3).
double min_separation_from_t1(double t1_us, double geometry_factor,
                              const PhysicalConstants& c = default_constants());

}  // namespace qreporter
