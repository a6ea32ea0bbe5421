#include "qreporter/signals.hpp"

#include <cmath>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

void require_time(double t, const char* what) {
  if (!(t >= 0.0)) throw DomainError(std::string(what) + " must be non-negative");
}

double stretched_decay(double t, double tau, double n) {
  if (std::isinf(tau)) return 1.0;
  return std::exp(-std::pow(t / tau, n));
}

double bath_modulation(double t_s, const BathParams& bath, const PhysicalConstants& c) {
  if (bath.b_rms == 0.0 || bath.omega_n <= 0.0) return 1.0;
  const double ratio = c.gamma_e * bath.b_rms / bath.omega_n;
  const double s = std::sin(0.25 * bath.omega_n * t_s);
  const double s2 = s * s;
  return std::exp(-2.0 * ratio * ratio * s2 * s2);
}

}  // namespace

void SignalTrace::validate(bool normalized) const {
  if (signal.size() != abscissa.size() || (!sigma.empty() && sigma.size() != abscissa.size())) {
    throw DomainError("trace columns have different lengths");
  }
  for (std::size_t i = 1; i < abscissa.size(); ++i) {
    if (!(abscissa[i] > abscissa[i - 1])) throw DomainError("trace abscissa is not strictly increasing");
  }
  for (std::size_t i = 0; i < signal.size(); ++i) {
    const double slack = sigma.empty() ? 1e-9 : 5.0 * sigma[i];
    if (!std::isfinite(signal[i]) || (normalized && std::abs(signal[i]) > 1.0 + slack)) {
      std::ostringstream msg;
      msg << "trace point " << i << " = " << signal[i] << " is outside [-1, 1]";
      throw DomainError(msg.str());
    }
    if (!sigma.empty() && !(sigma[i] >= 0.0)) throw DomainError("negative sigma");
  }
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

SignalTrace tabulate(std::span<const double> grid, const std::function<double(double)>& model) {
  SignalTrace tr;
  tr.abscissa.assign(grid.begin(), grid.end());
  tr.signal.reserve(grid.size());
  for (double t : grid) tr.signal.push_back(model(t));
  return tr;
}

DecoherenceParams DecoherenceParams::none() {
  constexpr double inf = std::numeric_limits<double>::infinity();
  return {inf, inf, inf, inf, 1.0};
}

void DecoherenceParams::validate() const {
  for (double v : {t2_nv, t2_s, t1_s, rabi_decay}) {
    if (!(v > 0.0)) throw DomainError("decay times must be positive");
  }
  if (!(stretch_exponent >= 1.0 && stretch_exponent <= 3.0)) {
    throw DomainError("stretch exponent must lie in [1, 3]");
  }
}

double nv_echo(double t_nv, const DecoherenceParams& dec) {
  require_time(t_nv, "t_nv");
  return stretched_decay(t_nv, dec.t2_nv, dec.stretch_exponent);
}

double deer_signal(double t_nv, std::span<const double> couplings, double flip_prob,
                   const DecoherenceParams& dec) {
  require_time(t_nv, "t_nv");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw DomainError("flip probability must lie in [0, 1]");
  double v = nv_echo(t_nv, dec);
  for (double d : couplings) v *= 1.0 - flip_prob + flip_prob * std::cos(0.5 * d * t_nv);
  return v;
}

double deer_signal(double t_nv, const SpinSystem& system, double flip_prob, const DecoherenceParams& dec,
                   const PhysicalConstants& c) {
  std::vector<double> d;
  d.reserve(system.reporter_sites.size());
  for (const auto& site : system.reporter_sites) {
    d.push_back(dipolar_coupling_ee(system.nv_position, site, system.field, c));
  }
  return deer_signal(t_nv, d, flip_prob, dec);
}

double deer_spectrum(double omega_drive, const SpinSystem& system, double linewidth, double t_nv,
                     double flip_prob, const DecoherenceParams& dec, const PhysicalConstants& c) {
  if (!(linewidth > 0.0)) throw DomainError("linewidth must be positive");
  const double detuning = omega_drive - zeeman_reporter(system.field, c);
  const double lorentz = linewidth * linewidth / (detuning * detuning + linewidth * linewidth);
  return deer_signal(t_nv, system, flip_prob * lorentz, dec, c);
}

double reporter_rabi(double t_r, double rabi_freq, const DecoherenceParams& dec) {
  require_time(t_r, "t_r");
  return std::cos(rabi_freq * t_r) * stretched_decay(t_r, dec.rabi_decay, 1.0);
}

double reporter_t1(double t_p, const DecoherenceParams& dec) {
  require_time(t_p, "t_p");
  return stretched_decay(t_p, dec.t1_s, 1.0);
}

double eseem_single(double t_s, const HyperfineParams& params, double omega_n) {
  require_time(t_s, "t_s");
  const auto f = eseem_frequencies(params, omega_n);
  const double tau = 0.5 * t_s;
  return 1.0 - 0.5 * f.depth_k * (1.0 - std::cos(f.omega_plus * tau)) * (1.0 - std::cos(f.omega_minus * tau));
}

double eseem_multi(double t_s, std::span<const ProtonCoupling> protons) {
  if (protons.empty()) throw DomainError("eseem_multi needs at least one proton");
  double v = 1.0;
  for (const auto& p : protons) v *= eseem_single(t_s, p.params, p.omega_n);
  return v;
}

double bath_echo(double t_s, const BathParams& bath, const DecoherenceParams& dec, const PhysicalConstants& c) {
  require_time(t_s, "t_s");
  if (!(bath.b_rms >= 0.0)) throw DomainError("bath rms field must be non-negative");
  return bath_modulation(t_s, bath, c) * stretched_decay(t_s, dec.t2_s, dec.stretch_exponent);
}

double reporter_echo_combined(double t_s, std::span<const ProtonCoupling> protons, const BathParams& bath,
                              const DecoherenceParams& dec, const PhysicalConstants& c) {
  const double coherent = protons.empty() ? 1.0 : eseem_multi(t_s, protons);
  return coherent * bath_echo(t_s, bath, dec, c);
}

}  // namespace qreporter
