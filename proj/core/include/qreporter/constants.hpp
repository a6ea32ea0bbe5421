#pragma once

#include <filesystem>
#include <numbers>
#include <string>

namespace qreporter {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Physical constants in the internal unit system:
/// angular frequencies in rad/us, fields in G, distances in nm.
///
/// The dipolar prefactors are derived, not configured:
///   k_ee = (mu0/4pi) hbar gamma_e^2,  k_ep = (mu0/4pi) hbar gamma_e gamma_p
/// so that k_ee / k_ep == gamma_e / gamma_p holds identically.
struct PhysicalConstants {
  std::string version = "1";
  double delta_nv = 0;  // NV zero-field splitting, rad/us
  double gamma_e = 0;   // rad/(us G)
  double gamma_p = 0;   // rad/(us G)
  double k_ee = 0;      // rad nm^3 / us
  double k_ep = 0;      // rad nm^3 / us

  /// Build from frequencies in the units the literature quotes them in.
  static PhysicalConstants from_frequencies(double delta_nv_mhz, double gamma_e_mhz_per_g,
                                            double gamma_p_khz_per_g, std::string version = "1");

  /// Parse a key = value constants file. Stored k_ee/k_ep entries, if present,
  /// must agree with the values derived from the gyromagnetic ratios.
  static PhysicalConstants load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;
};

/// SI inputs to the dipolar prefactors (CODATA 2018).
inline constexpr double kHbarSI = 1.054571817e-34;       // J s
inline constexpr double kMu0Over4PiSI = 1.00000000055e-7;  // T^2 m^3 / J

/// Built-in constants: Delta = 2pi x 2870 MHz, gamma_e = 2pi x 2.8 MHz/G,
/// gamma_p = 2pi x 4.26 kHz/G.
const PhysicalConstants& default_constants();

/// Constants selected by the QREPORTER_CONSTANTS environment variable when
/// it names a file, the built-in defaults otherwise.
PhysicalConstants constants_from_environment();

}  // namespace qreporter
