#include "qreporter/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

using cd = std::complex<double>;
using Mat2 = Eigen::Matrix2cd;

constexpr cd kI{0.0, 1.0};

Mat2 sz_op(Species s) {
  Mat2 m = Mat2::Zero();
  if (s == Species::nv) {
    m(1, 1) = -1.0;  // ms = 0 -> 0, ms = -1 -> -1
  } else {
    m(0, 0) = 0.5;
    m(1, 1) = -0.5;
  }
  return m;
}

Mat2 sx_op() {
  Mat2 m = Mat2::Zero();
  m(0, 1) = m(1, 0) = 0.5;
  return m;
}

Mat2 sy_op() {
  Mat2 m = Mat2::Zero();
  m(0, 1) = -0.5 * kI;
  m(1, 0) = 0.5 * kI;
  return m;
}

Mat2 rotation(Axis axis, double angle) {
  const double phi = axis == Axis::x ? 0.0 : 0.5 * std::numbers::pi;
  const double c = std::cos(0.5 * angle);
  const double s = std::sin(0.5 * angle);
  Mat2 r;
  r(0, 0) = c;
  r(1, 1) = c;
  r(0, 1) = -kI * s * std::exp(-kI * phi);
  r(1, 0) = -kI * s * std::exp(kI * phi);
  return r;
}

bool is_electron_like(Species s) { return s == Species::nv || s == Species::electron; }

struct Layout {
  std::size_t n;
  std::size_t mask(std::size_t k) const { return std::size_t{1} << (n - 1 - k); }
  int bit(std::size_t s, std::size_t k) const { return (s & mask(k)) ? 1 : 0; }
  std::size_t with_bit(std::size_t s, std::size_t k, int b) const {
    return b ? (s | mask(k)) : (s & ~mask(k));
  }
};

void add_single(ComplexMatrix& h, const Layout& L, double coef, std::size_t k, const Mat2& a) {
  const auto dim = static_cast<std::size_t>(h.rows());
  for (std::size_t s = 0; s < dim; ++s) {
    const int ak = L.bit(s, k);
    for (int ap = 0; ap < 2; ++ap) {
      const cd v = a(ap, ak);
      if (v == cd{}) continue;
      h(L.with_bit(s, k, ap), s) += coef * v;
    }
  }
}

void add_pair(ComplexMatrix& h, const Layout& L, double coef, std::size_t k, const Mat2& a, std::size_t l,
              const Mat2& b) {
  const auto dim = static_cast<std::size_t>(h.rows());
  for (std::size_t s = 0; s < dim; ++s) {
    const int ak = L.bit(s, k);
    const int bl = L.bit(s, l);
    for (int ap = 0; ap < 2; ++ap) {
      const cd va = a(ap, ak);
      if (va == cd{}) continue;
      for (int bp = 0; bp < 2; ++bp) {
        const cd vb = b(bp, bl);
        if (vb == cd{}) continue;
        h(L.with_bit(L.with_bit(s, k, ap), l, bp), s) += coef * va * vb;
      }
    }
  }
}

// rho <- R_k rho R_k^dagger for a single-spin unitary on spin k.
void apply_local(ComplexMatrix& rho, const Layout& L, std::size_t k, const Mat2& r) {
  const auto dim = static_cast<std::size_t>(rho.rows());
  const std::size_t m = L.mask(k);
  for (std::size_t s0 = 0; s0 < dim; ++s0) {
    if (s0 & m) continue;
    const std::size_t s1 = s0 | m;
    for (std::size_t c = 0; c < dim; ++c) {
      const cd x0 = rho(s0, c);
      const cd x1 = rho(s1, c);
      rho(s0, c) = r(0, 0) * x0 + r(0, 1) * x1;
      rho(s1, c) = r(1, 0) * x0 + r(1, 1) * x1;
    }
  }
  for (std::size_t c0 = 0; c0 < dim; ++c0) {
    if (c0 & m) continue;
    const std::size_t c1 = c0 | m;
    for (std::size_t row = 0; row < dim; ++row) {
      const cd y0 = rho(row, c0);
      const cd y1 = rho(row, c1);
      rho(row, c0) = y0 * std::conj(r(0, 0)) + y1 * std::conj(r(0, 1));
      rho(row, c1) = y0 * std::conj(r(1, 0)) + y1 * std::conj(r(1, 1));
    }
  }
}

ComplexMatrix initial_density(const Layout& L, std::span<const SpinState> initial) {
  const std::size_t dim = std::size_t{1} << L.n;
  ComplexMatrix rho = ComplexMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t s = 0; s < dim; ++s) {
    double p = 1.0;
    for (std::size_t k = 0; k < L.n; ++k) {
      const int b = L.bit(s, k);
      switch (initial[k]) {
        case SpinState::up: p *= b == 0 ? 1.0 : 0.0; break;
        case SpinState::down: p *= b == 1 ? 1.0 : 0.0; break;
        case SpinState::mixed: p *= 0.5; break;
      }
    }
    rho(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = p;
  }
  return rho;
}

void check_dimension(std::size_t n) {
  if (n > kMaxOracleSpins) {
    std::ostringstream msg;
    msg << n << " spins exceed the oracle limit of " << kMaxOracleSpins << " (Hilbert dimension 2^"
        << kMaxOracleSpins << ")";
    throw DimensionError(msg.str());
  }
  if (n == 0) throw DomainError("oracle system has no spins");
}

}  // namespace

// OracleSystem --------------------------------------------------------------

OracleSystem::OracleSystem(FieldSetting field, PhysicalConstants constants)
    : field_(field), constants_(std::move(constants)) {}

std::size_t OracleSystem::add_spin(Species species, const Vec3& position) {
  spins_.push_back({species, position});
  return spins_.size() - 1;
}

void OracleSystem::set_contact(std::size_t electron, std::size_t proton, double a0) {
  contact_[{electron, proton}] = a0;
}

void OracleSystem::derive_couplings() {
  couplings_.clear();
  for (std::size_t i = 0; i < spins_.size(); ++i) {
    for (std::size_t j = i + 1; j < spins_.size(); ++j) {
      const auto si = spins_[i].species;
      const auto sj = spins_[j].species;
      if (is_electron_like(si) && is_electron_like(sj)) {
        const double d = dipolar_coupling_ee(spins_[i].position, spins_[j].position, field_, constants_);
        couplings_.push_back({i, j, d, 0.0, si == Species::electron && sj == Species::electron});
      } else if (is_electron_like(si) != is_electron_like(sj)) {
        const std::size_t e = is_electron_like(si) ? i : j;
        const std::size_t p = e == i ? j : i;
        double a0 = 0.0;
        if (auto it = contact_.find({e, p}); it != contact_.end()) a0 = it->second;
        const auto hf = hyperfine_from_sites(spins_[e].position, spins_[p].position, field_, a0, constants_);
        couplings_.push_back({e, p, hf.a, hf.b, false});
      }
    }
  }
}

void OracleSystem::set_coupling(const PairCoupling& coupling) {
  if (coupling.i >= spins_.size() || coupling.j >= spins_.size() || coupling.i == coupling.j) {
    throw DomainError("coupling refers to an invalid spin pair");
  }
  auto same = [&](const PairCoupling& c) {
    return (c.i == coupling.i && c.j == coupling.j) || (c.i == coupling.j && c.j == coupling.i);
  };
  couplings_.erase(std::remove_if(couplings_.begin(), couplings_.end(), same), couplings_.end());
  couplings_.push_back(coupling);
}

Eigen::MatrixXd OracleSystem::coupling_matrix() const {
  const auto n = static_cast<Eigen::Index>(spins_.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (const auto& c : couplings_) {
    m(static_cast<Eigen::Index>(c.i), static_cast<Eigen::Index>(c.j)) = c.zz;
    m(static_cast<Eigen::Index>(c.j), static_cast<Eigen::Index>(c.i)) = c.zz;
  }
  return m;
}

std::vector<std::size_t> OracleSystem::indices_of(Species species) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spins_.size(); ++i) {
    if (spins_[i].species == species) out.push_back(i);
  }
  return out;
}

std::size_t OracleSystem::dimension() const {
  check_dimension(spins_.size());
  return std::size_t{1} << spins_.size();
}

OracleSystem OracleSystem::from_scene(const SpinSystem& scene, bool include_nv, const PhysicalConstants& c) {
  OracleSystem sys(scene.field, c);
  if (include_nv) sys.add_spin(Species::nv, scene.nv_position);
  for (const auto& r : scene.reporter_sites) sys.add_spin(Species::electron, r);
  for (const auto& p : scene.proton_sites) sys.add_spin(Species::proton, p);
  sys.derive_couplings();
  return sys;
}

ComplexMatrix build_hamiltonian(const OracleSystem& system, Frame frame) {
  const std::size_t dim = system.dimension();
  const Layout L{system.spins().size()};
  ComplexMatrix h = ComplexMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  const auto& c = system.constants();
  const double b = system.field().magnitude();

  for (std::size_t k = 0; k < L.n; ++k) {
    const auto sp = system.spins()[k].species;
    if (sp == Species::proton) {
      add_single(h, L, -c.gamma_p * b, k, sz_op(sp));
    } else if (frame == Frame::lab) {
      // NV: ms = -1 sits at Delta - gamma_e B above ms = 0.
      const double w = sp == Species::nv ? -(c.delta_nv - c.gamma_e * b) : c.gamma_e * b;
      add_single(h, L, w, k, sz_op(sp));
    }
  }
  for (const auto& pc : system.couplings()) {
    const auto si = system.spins()[pc.i].species;
    const auto sj = system.spins()[pc.j].species;
    if (pc.zz != 0.0) add_pair(h, L, pc.zz, pc.i, sz_op(si), pc.j, sz_op(sj));
    if (pc.zx != 0.0) add_pair(h, L, pc.zx, pc.i, sz_op(si), pc.j, sx_op());
    if (pc.flip_flop && pc.zz != 0.0) {
      add_pair(h, L, -0.5 * pc.zz, pc.i, sx_op(), pc.j, sx_op());
      add_pair(h, L, -0.5 * pc.zz, pc.i, sy_op(), pc.j, sy_op());
    }
  }
  return h;
}

// Sequences ----------------------------------------------------------------

PulseSequence& PulseSequence::delay(double duration) {
  elements_.emplace_back(Delay{duration});
  return *this;
}

PulseSequence& PulseSequence::pulse(Channel target, Axis axis, double angle, double duration) {
  elements_.emplace_back(Pulse{target, axis, angle, duration});
  return *this;
}

PulseSequence& PulseSequence::readout(Channel target) {
  elements_.emplace_back(Readout{target});
  return *this;
}

void PulseSequence::validate() const {
  if (elements_.empty() || !std::holds_alternative<Readout>(elements_.back())) {
    throw DomainError("pulse sequence must end with a readout");
  }
  for (std::size_t i = 0; i + 1 < elements_.size(); ++i) {
    const auto& e = elements_[i];
    if (std::holds_alternative<Readout>(e)) throw DomainError("pulse sequence has more than one readout");
    if (const auto* d = std::get_if<Delay>(&e); d && !(d->duration >= 0.0)) {
      throw DomainError("negative delay");
    }
    if (const auto* p = std::get_if<Pulse>(&e); p && !(p->duration >= 0.0)) {
      throw DomainError("negative pulse duration");
    }
  }
}

PulseSequence hahn_echo_sequence(Channel target, double t_s) {
  constexpr double pi = std::numbers::pi;
  PulseSequence seq;
  seq.pulse(target, Axis::x, 0.5 * pi).delay(0.5 * t_s).pulse(target, Axis::x, pi).delay(0.5 * t_s);
  seq.pulse(target, Axis::x, 0.5 * pi).readout(target);
  return seq;
}

PulseSequence deer_sequence(Channel nv, Channel reporters, double t_nv, double flip_angle) {
  constexpr double pi = std::numbers::pi;
  PulseSequence seq;
  seq.pulse(nv, Axis::x, 0.5 * pi).delay(0.5 * t_nv).pulse(nv, Axis::x, pi);
  if (flip_angle != 0.0) seq.pulse(reporters, Axis::x, flip_angle);
  seq.delay(0.5 * t_nv).pulse(nv, Axis::x, 0.5 * pi).readout(nv);
  return seq;
}

PulseSequence rabi_sequence(Channel target, double t_r, double rabi_freq) {
  PulseSequence seq;
  if (t_r > 0.0) seq.pulse(target, Axis::x, rabi_freq * t_r, t_r);
  seq.readout(target);
  return seq;
}

std::vector<SpinState> thermal_initial_state(const OracleSystem& system) {
  std::vector<SpinState> out;
  for (const auto& s : system.spins()) out.push_back(s.species == Species::nv ? SpinState::up : SpinState::mixed);
  return out;
}

// Runner -------------------------------------------------------------------

OracleRunner::OracleRunner(const OracleSystem& system, Frame frame)
    : system_(system), frame_(frame), hamiltonian_(build_hamiltonian(system, frame)) {
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(hamiltonian_);
  static_eig_ = {es.eigenvalues(), es.eigenvectors()};

  const Layout L{system.spins().size()};
  const auto dim = static_cast<Eigen::Index>(system.dimension());
  electron_zeeman_ = Eigen::VectorXd::Zero(dim);
  if (frame == Frame::lab) {
    const auto& c = system.constants();
    const double b = system.field().magnitude();
    for (std::size_t k = 0; k < L.n; ++k) {
      const auto sp = system.spins()[k].species;
      if (sp == Species::proton) continue;
      const double w = sp == Species::nv ? -(c.delta_nv - c.gamma_e * b) : c.gamma_e * b;
      const Mat2 z = sz_op(sp);
      for (Eigen::Index s = 0; s < dim; ++s) {
        electron_zeeman_(s) += w * z(L.bit(static_cast<std::size_t>(s), k), L.bit(static_cast<std::size_t>(s), k)).real();
      }
    }
  }
}

std::vector<std::size_t> OracleRunner::resolve(const Channel& ch) const {
  std::vector<std::size_t> out;
  if (ch.index) {
    if (*ch.index >= system_.spins().size()) {
      throw ChannelError("channel refers to spin " + std::to_string(*ch.index) + ", which does not exist");
    }
    out.push_back(*ch.index);
  } else if (ch.species) {
    out = system_.indices_of(*ch.species);
  }
  if (out.empty()) throw ChannelError("pulse channel addresses no spin in this system");
  return out;
}

void OracleRunner::evolve(ComplexMatrix& rho, const Eigensystem& eig, double t) const {
  if (t == 0.0) return;
  const auto& v = eig.vectors;
  ComplexMatrix r = v.adjoint() * rho * v;
  const Eigen::Index dim = r.rows();
  Eigen::VectorXcd ph(dim);
  for (Eigen::Index i = 0; i < dim; ++i) ph(i) = std::exp(-kI * eig.values(i) * t);
  for (Eigen::Index j = 0; j < dim; ++j) {
    for (Eigen::Index i = 0; i < dim; ++i) r(i, j) *= ph(i) * std::conj(ph(j));
  }
  rho.noalias() = v * r * v.adjoint();
}

void OracleRunner::apply_pulse(ComplexMatrix& rho, const Pulse& p, double elapsed) const {
  const auto targets = resolve(p.target);
  const Layout L{system_.spins().size()};

  if (p.duration == 0.0) {
    const Mat2 r = rotation(p.axis, p.angle);
    const bool lab = frame_ == Frame::lab && elapsed != 0.0;
    const Eigen::Index dim = rho.rows();
    // Lab frame: the rotating-frame pulse at time t is Z(t) R Z(t)^dagger.
    auto conjugate = [&](double sign) {
      for (Eigen::Index j = 0; j < dim; ++j) {
        for (Eigen::Index i = 0; i < dim; ++i) {
          rho(i, j) *= std::exp(sign * kI * (electron_zeeman_(i) - electron_zeeman_(j)) * elapsed);
        }
      }
    };
    if (lab) conjugate(+1.0);
    for (auto k : targets) apply_local(rho, L, k, r);
    if (lab) conjugate(-1.0);
    return;
  }

  if (frame_ == Frame::lab) {
    throw DomainError("finite-duration pulses are only supported in the rotating frame");
  }
  const double rate = p.angle / p.duration;
  ComplexMatrix h = hamiltonian_;
  const Mat2 drive = p.axis == Axis::x ? sx_op() : sy_op();
  for (auto k : targets) add_single(h, L, rate, k, drive);
  Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
  evolve(rho, {es.eigenvalues(), es.eigenvectors()}, p.duration);
}

OracleResult OracleRunner::run(const PulseSequence& seq, std::span<const SpinState> initial) const {
  seq.validate();
  const Layout L{system_.spins().size()};
  if (initial.size() != L.n) throw DomainError("initial state must list one state per spin");

  ComplexMatrix rho = initial_density(L, initial);
  double elapsed = 0.0;
  OracleResult res;
  for (const auto& e : seq.elements()) {
    if (const auto* d = std::get_if<Delay>(&e)) {
      evolve(rho, static_eig_, d->duration);
      elapsed += d->duration;
    } else if (const auto* p = std::get_if<Pulse>(&e)) {
      apply_pulse(rho, *p, elapsed);
      elapsed += p->duration;
    } else {
      const auto targets = resolve(std::get<Readout>(e).target);
      double acc = 0.0;
      for (auto k : targets) {
        for (Eigen::Index s = 0; s < rho.rows(); ++s) {
          acc += rho(s, s).real() * (L.bit(static_cast<std::size_t>(s), k) == 0 ? 1.0 : -1.0);
        }
      }
      res.expectation = acc / static_cast<double>(targets.size());
    }
  }
  res.populations = rho.diagonal().real();
  res.trace = rho.trace().real();
  res.purity = rho.cwiseAbs2().sum();
  res.density = std::move(rho);
  return res;
}

OracleResult run_sequence(const OracleSystem& system, const PulseSequence& seq, std::span<const SpinState> initial,
                          Frame frame) {
  return OracleRunner(system, frame).run(seq, initial);
}

// Traces -------------------------------------------------------------------

SignalTrace oracle_deer_trace(const OracleSystem& system, std::span<const double> grid, double flip_prob,
                              FlipModel model) {
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw DomainError("flip probability must lie in [0, 1]");
  const auto nvs = system.indices_of(Species::nv);
  const auto reporters = system.indices_of(Species::electron);
  if (nvs.size() != 1) throw DomainError("DEER needs exactly one NV spin");
  if (reporters.empty()) throw DomainError("DEER needs at least one reporter");

  const OracleRunner runner(system);
  const auto initial = thermal_initial_state(system);
  const Channel nv = Channel::spin(nvs.front());

  if (model == FlipModel::rotation) {
    const double angle = std::acos(1.0 - 2.0 * flip_prob);
    return tabulate(grid, [&](double t) {
      return runner.run(deer_sequence(nv, Channel::of(Species::electron), t, angle), initial).expectation;
    });
  }

  if (reporters.size() > 10) throw DimensionError("mixture flip model enumerates at most 10 reporters");
  const std::size_t subsets = std::size_t{1} << reporters.size();
  return tabulate(grid, [&](double t) {
    double acc = 0.0;
    for (std::size_t mask = 0; mask < subsets; ++mask) {
      double w = 1.0;
      for (std::size_t r = 0; r < reporters.size(); ++r) w *= (mask >> r) & 1 ? flip_prob : 1.0 - flip_prob;
      if (w == 0.0) continue;
      constexpr double pi = std::numbers::pi;
      PulseSequence seq;
      seq.pulse(nv, Axis::x, 0.5 * pi).delay(0.5 * t).pulse(nv, Axis::x, pi);
      for (std::size_t r = 0; r < reporters.size(); ++r) {
        if ((mask >> r) & 1) seq.pulse(Channel::spin(reporters[r]), Axis::x, pi);
      }
      seq.delay(0.5 * t).pulse(nv, Axis::x, 0.5 * pi).readout(nv);
      acc += w * runner.run(seq, initial).expectation;
    }
    return acc;
  });
}

SignalTrace oracle_echo_trace(const OracleSystem& system, std::size_t electron, std::span<const double> grid,
                              Frame frame) {
  if (electron >= system.spins().size() || system.spins()[electron].species == Species::proton) {
    throw ChannelError("echo target must be an electron spin");
  }
  const OracleRunner runner(system, frame);
  std::vector<SpinState> initial(system.spins().size(), SpinState::mixed);
  initial[electron] = SpinState::up;
  return tabulate(grid, [&](double t) {
    return runner.run(hahn_echo_sequence(Channel::spin(electron), t), initial).expectation;
  });
}

BathOracleResult oracle_bath_limit(const BathOracleConfig& cfg, const PhysicalConstants& c) {
  if (cfg.n_protons > 10) throw DimensionError("bath oracle supports at most 10 protons");
  if (!(cfg.omega_n > 0.0)) throw DomainError("bath oracle needs omega_n > 0");
  if (cfg.configurations == 0) throw DomainError("bath oracle needs at least one configuration");

  BathOracleResult out;
  out.trace.abscissa = cfg.grid;
  out.trace.signal.assign(cfg.grid.size(), 0.0);
  if (cfg.n_protons == 0) {
    std::fill(out.trace.signal.begin(), out.trace.signal.end(), 1.0);
    return out;
  }

  const FieldSetting field(cfg.omega_n / c.gamma_p, Vec3::UnitZ());
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double sum_b2 = 0.0;

  for (std::size_t conf = 0; conf < cfg.configurations; ++conf) {
    OracleSystem sys(field, c);
    sys.add_spin(Species::electron);
    std::vector<HyperfineParams> hf;
    double mean_b2 = 0.0;
    for (std::size_t p = 0; p < cfg.n_protons; ++p) {
      // Upper hemisphere, 0.3-0.8 nm from the reporter.
      const double cos_t = 0.05 + 0.9 * unit(rng);
      const double phi = kTwoPi * unit(rng);
      const double r = 0.3 + 0.5 * unit(rng);
      const double sin_t = std::sqrt(1.0 - cos_t * cos_t);
      const Vec3 pos = r * Vec3(sin_t * std::cos(phi), sin_t * std::sin(phi), cos_t);
      sys.add_spin(Species::proton, pos);
      hf.push_back(hyperfine_from_sites(Vec3::Zero(), pos, field, 0.0, c));
      mean_b2 += hf.back().b * hf.back().b;
    }
    mean_b2 /= static_cast<double>(cfg.n_protons);
    const double scale = cfg.coupling_scale / std::sqrt(mean_b2);
    for (std::size_t p = 0; p < cfg.n_protons; ++p) {
      sys.set_coupling({0, p + 1, scale * hf[p].a, scale * hf[p].b, false});
    }
    sum_b2 += static_cast<double>(cfg.n_protons) * cfg.coupling_scale * cfg.coupling_scale;

    // Keep the density matrix in the Hamiltonian eigenbasis: delays become
    // phase factors, the first pi/2 and the final pi/2 + readout are folded
    // into the initial state and the observable.
    const ComplexMatrix h = build_hamiltonian(sys);
    Eigen::SelfAdjointEigenSolver<ComplexMatrix> es(h);
    const ComplexMatrix& v = es.eigenvectors();
    const Eigen::VectorXd& lam = es.eigenvalues();
    const Eigen::Index dim = h.rows();
    const Layout L{sys.spins().size()};

    auto rotate_all = [&](const Mat2& r) {
      ComplexMatrix u = ComplexMatrix::Identity(dim, dim);
      // Left action only: u <- R_0 u.
      const std::size_t m = L.mask(0);
      for (std::size_t s0 = 0; s0 < static_cast<std::size_t>(dim); ++s0) {
        if (s0 & m) continue;
        const std::size_t s1 = s0 | m;
        for (Eigen::Index col = 0; col < dim; ++col) {
          const cd x0 = u(static_cast<Eigen::Index>(s0), col);
          const cd x1 = u(static_cast<Eigen::Index>(s1), col);
          u(static_cast<Eigen::Index>(s0), col) = r(0, 0) * x0 + r(0, 1) * x1;
          u(static_cast<Eigen::Index>(s1), col) = r(1, 0) * x0 + r(1, 1) * x1;
        }
      }
      return ComplexMatrix(v.adjoint() * u * v);
    };
    const ComplexMatrix half = rotate_all(rotation(Axis::x, 0.5 * std::numbers::pi));
    const ComplexMatrix full = rotate_all(rotation(Axis::x, std::numbers::pi));

    std::vector<SpinState> init(sys.spins().size(), SpinState::mixed);
    init[0] = SpinState::up;
    const ComplexMatrix rho0 = v.adjoint() * initial_density(L, init) * v;
    const ComplexMatrix rho1 = half * rho0 * half.adjoint();

    ComplexMatrix obs = ComplexMatrix::Zero(dim, dim);
    for (Eigen::Index s = 0; s < dim; ++s) obs(s, s) = L.bit(static_cast<std::size_t>(s), 0) == 0 ? 1.0 : -1.0;
    const ComplexMatrix obs_eig = half.adjoint() * (v.adjoint() * obs * v) * half;

    ComplexMatrix r(dim, dim);
    for (std::size_t g = 0; g < cfg.grid.size(); ++g) {
      const double tau = 0.5 * cfg.grid[g];
      Eigen::VectorXcd ph(dim);
      for (Eigen::Index i = 0; i < dim; ++i) ph(i) = std::exp(-kI * lam(i) * tau);
      r = ph.asDiagonal() * rho1 * ph.conjugate().asDiagonal();
      r = full * r * full.adjoint();
      r = ph.asDiagonal() * r * ph.conjugate().asDiagonal();
      const double e = (r.transpose().cwiseProduct(obs_eig)).sum().real();
      out.trace.signal[g] += e / static_cast<double>(cfg.configurations);
    }
  }
  out.effective_b_rms = std::sqrt(sum_b2 / static_cast<double>(cfg.configurations)) / c.gamma_e;
  return out;
}

}  // namespace qreporter
