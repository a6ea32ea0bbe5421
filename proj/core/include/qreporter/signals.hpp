#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "qreporter/physics.hpp"

namespace qreporter {

/// (abscissa, signal, sigma) series shared by simulation, noise synthesis and
/// fitting. Signals follow the scaled-population convention: +1 for the
/// initial state, -1 for full inversion. `sigma` may be empty for noiseless
/// model traces.
struct SignalTrace {
  std::vector<double> abscissa;
  std::vector<double> signal;
  std::vector<double> sigma;

  std::size_t size() const noexcept { return abscissa.size(); }
  bool has_sigma() const noexcept { return !sigma.empty(); }

  /// Throws DomainError when lengths differ, the abscissa is not strictly
  /// increasing, or (for normalized signals) a point sits more than 5 sigma
  /// outside [-1, 1].
  void validate(bool normalized = true) const;
};

std::vector<double> linspace(double lo, double hi, std::size_t n);

/// Evaluate a pointwise model on a grid.
SignalTrace tabulate(std::span<const double> grid, const std::function<double(double)>& model);

/// Phenomenological decay constants (us). Infinite values switch a decay off.
struct DecoherenceParams {
  double t2_nv = 5.0;
  double t2_s = std::numeric_limits<double>::infinity();
  double t1_s = 29.4;
  double rabi_decay = 1.0;
  double stretch_exponent = 1.0;

  static DecoherenceParams none();
  void validate() const;
};

/// Semiclassical proton bath seen by a reporter: rms field (G) and its
/// precession frequency (rad/us).
struct BathParams {
  double b_rms = 0.0;
  double omega_n = 0.0;
};

/// One coherently coupled proton.
struct ProtonCoupling {
  HyperfineParams params;
  double omega_n = 0.0;
};

// NV sequences -------------------------------------------------------------

double nv_echo(double t_nv, const DecoherenceParams& dec);

/// DEER echo of the NV with simultaneous reporter flips of probability
/// `flip_prob`, thermal reporters:
///   nv_echo(t) * prod_i [1 - p + p cos(d_i t / 2)].
double deer_signal(double t_nv, const SpinSystem& system, double flip_prob, const DecoherenceParams& dec,
                   const PhysicalConstants& c = default_constants());

/// Same with precomputed couplings d_i (rad/us).
double deer_signal(double t_nv, std::span<const double> couplings, double flip_prob,
                   const DecoherenceParams& dec);

/// DEER signal vs reporter drive frequency at fixed t_nv: the flip
/// probability follows a Lorentzian of half-width `linewidth` centred on the
/// reporter Zeeman frequency.
double deer_spectrum(double omega_drive, const SpinSystem& system, double linewidth, double t_nv,
                     double flip_prob, const DecoherenceParams& dec,
                     const PhysicalConstants& c = default_constants());

// Reporter sequences -------------------------------------------------------

double reporter_rabi(double t_r, double rabi_freq, const DecoherenceParams& dec);
double reporter_t1(double t_p, const DecoherenceParams& dec);

/// Two-pulse ESEEM of a reporter coupled to one proton. `t_s` is the full
/// echo time; each free-evolution period lasts t_s / 2.
///   E = 1 - (k/2) (1 - cos(w+ t_s/2)) (1 - cos(w- t_s/2))
double eseem_single(double t_s, const HyperfineParams& params, double omega_n);

/// Product of per-proton echo modulations.
double eseem_multi(double t_s, std::span<const ProtonCoupling> protons);

/// Echo of a reporter in a semiclassical bath of protons:
///   exp(-2 (gamma_e b_rms / wn)^2 sin^4(wn t_s / 4)) exp(-(t_s/t2_s)^n).
/// Collapses sit at t_s = 2 pi k / wn for odd k.
double bath_echo(double t_s, const BathParams& bath, const DecoherenceParams& dec,
                 const PhysicalConstants& c = default_constants());

/// Coherent protons, semiclassical bath and echo decay, multiplied.
double reporter_echo_combined(double t_s, std::span<const ProtonCoupling> protons, const BathParams& bath,
                              const DecoherenceParams& dec, const PhysicalConstants& c = default_constants());

}  // namespace qreporter
