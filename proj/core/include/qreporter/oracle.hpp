#pragma once

#include <Eigen/Core>
#include <complex>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "qreporter/physics.hpp"
#include "qreporter/signals.hpp"

namespace qreporter {

using ComplexMatrix = Eigen::MatrixXcd;

enum class Species { nv, electron, proton };

/// Electron Zeeman terms are dropped in the rotating frame; the proton Zeeman
/// term -wn Iz is kept in both frames.
enum class Frame { rotating, lab };

inline constexpr std::size_t kMaxOracleSpins = 12;

struct OracleSpin {
  Species species = Species::electron;
  Vec3 position = Vec3::Zero();
};

/// zz Sz_i Sz_j + zx Sz_i Ix_j, plus -(zz/2)(Sx_i Sx_j + Sy_i Sy_j) when
/// flip_flop is set (secular coupling of like spins). All in rad/us.
struct PairCoupling {
  std::size_t i = 0;
  std::size_t j = 0;
  double zz = 0.0;
  double zx = 0.0;
  bool flip_flop = false;
};

/// A small spin cluster for brute-force simulation. The NV is an effective
/// two-level system (ms = 0 as "up", ms = -1 as "down"); its z operator is
/// diag(0, -1).
class OracleSystem {
 public:
  explicit OracleSystem(FieldSetting field = {}, PhysicalConstants constants = default_constants());

  /// Scene conversion: optional NV, every reporter, every proton, with
  /// couplings derived from geometry.
  static OracleSystem from_scene(const SpinSystem& scene, bool include_nv = true,
                                 const PhysicalConstants& c = default_constants());

  std::size_t add_spin(Species species, const Vec3& position = Vec3::Zero());

  /// Contact term added to the secular coupling of an electron-proton pair
  /// when couplings are derived.
  void set_contact(std::size_t electron, std::size_t proton, double a0);

  /// Replace all couplings by values computed from positions: secular
  /// dipolar between electrons (with flip-flops among reporters), point
  /// dipole hyperfine plus contact term for electron-proton pairs, nothing
  /// between protons.
  void derive_couplings();

  /// Insert or override the coupling of one pair.
  void set_coupling(const PairCoupling& coupling);
  void clear_couplings() { couplings_.clear(); }

  const std::vector<OracleSpin>& spins() const noexcept { return spins_; }
  const std::vector<PairCoupling>& couplings() const noexcept { return couplings_; }
  const FieldSetting& field() const noexcept { return field_; }
  const PhysicalConstants& constants() const noexcept { return constants_; }

  /// Symmetric matrix of zz couplings.
  Eigen::MatrixXd coupling_matrix() const;

  std::vector<std::size_t> indices_of(Species species) const;
  std::size_t dimension() const;

 private:
  FieldSetting field_;
  PhysicalConstants constants_;
  std::vector<OracleSpin> spins_;
  std::vector<PairCoupling> couplings_;
  std::map<std::pair<std::size_t, std::size_t>, double> contact_;
};

ComplexMatrix build_hamiltonian(const OracleSystem& system, Frame frame = Frame::rotating);

// Pulse sequences ----------------------------------------------------------

/// Either every spin of one species or a single spin by index.
struct Channel {
  std::optional<Species> species;
  std::optional<std::size_t> index;

  static Channel of(Species s) { return {s, std::nullopt}; }
  static Channel spin(std::size_t i) { return {std::nullopt, i}; }
};

enum class Axis { x, y };

struct Delay {
  double duration = 0.0;
};

/// Resonant rotation by `angle` about `axis`. Zero duration means an ideal
/// instantaneous pulse; otherwise the drive acts together with the couplings.
struct Pulse {
  Channel target;
  Axis axis = Axis::x;
  double angle = 0.0;
  double duration = 0.0;
};

/// Projective readout of 2 Sz, averaged over the channel's spins.
struct Readout {
  Channel target;
};

using SequenceElement = std::variant<Delay, Pulse, Readout>;

class PulseSequence {
 public:
  PulseSequence& delay(double duration);
  PulseSequence& pulse(Channel target, Axis axis, double angle, double duration = 0.0);
  PulseSequence& readout(Channel target);

  const std::vector<SequenceElement>& elements() const noexcept { return elements_; }
  /// Exactly one readout, last; durations non-negative.
  void validate() const;

 private:
  std::vector<SequenceElement> elements_;
};

/// pi/2 - t_s/2 - pi - t_s/2 - pi/2, readout on the same channel.
PulseSequence hahn_echo_sequence(Channel target, double t_s);

/// NV echo with a simultaneous reporter rotation by `flip_angle` at its centre.
PulseSequence deer_sequence(Channel nv, Channel reporters, double t_nv, double flip_angle);

/// Single resonant pulse of length t_r at angular rate rabi_freq.
PulseSequence rabi_sequence(Channel target, double t_r, double rabi_freq);

// Execution ----------------------------------------------------------------

enum class SpinState { up, down, mixed };

/// NV pure in ms = 0, everything else maximally mixed.
std::vector<SpinState> thermal_initial_state(const OracleSystem& system);

struct OracleResult {
  double expectation = 0.0;
  Eigen::VectorXd populations;
  double purity = 0.0;
  double trace = 0.0;
  ComplexMatrix density;
};

/// Holds the eigendecomposition of the static Hamiltonian so that sweeps over
/// delays reuse it.
class OracleRunner {
 public:
  explicit OracleRunner(const OracleSystem& system, Frame frame = Frame::rotating);

  OracleResult run(const PulseSequence& seq, std::span<const SpinState> initial) const;
  const ComplexMatrix& hamiltonian() const noexcept { return hamiltonian_; }

 private:
  struct Eigensystem {
    Eigen::VectorXd values;
    ComplexMatrix vectors;
  };

  std::vector<std::size_t> resolve(const Channel& ch) const;
  void evolve(ComplexMatrix& rho, const Eigensystem& eig, double t) const;
  void apply_pulse(ComplexMatrix& rho, const Pulse& p, double elapsed) const;

  OracleSystem system_;
  Frame frame_;
  ComplexMatrix hamiltonian_;
  Eigensystem static_eig_;
  Eigen::VectorXd electron_zeeman_;  // diagonal, lab frame only
};

OracleResult run_sequence(const OracleSystem& system, const PulseSequence& seq,
                          std::span<const SpinState> initial, Frame frame = Frame::rotating);

/// How a partial reporter flip is modelled in DEER.
enum class FlipModel { rotation, mixture };

/// DEER trace over `grid`: one NV and at least one electron. Reporters start
/// maximally mixed.
SignalTrace oracle_deer_trace(const OracleSystem& system, std::span<const double> grid, double flip_prob,
                              FlipModel model = FlipModel::rotation);

/// Hahn echo of one electron (initially up) over full echo times `grid`;
/// other spins start maximally mixed.
SignalTrace oracle_echo_trace(const OracleSystem& system, std::size_t electron, std::span<const double> grid,
                              Frame frame = Frame::rotating);

struct BathOracleConfig {
  std::size_t n_protons = 6;
  double coupling_scale = 1.0;  // rms of the pseudo-secular couplings b_i, rad/us
  double omega_n = 10.25;
  std::vector<double> grid;     // echo times, us
  std::size_t configurations = 16;
  std::uint64_t seed = 1;
};

struct BathOracleResult {
  SignalTrace trace;
  /// Field whose semiclassical echo matches the weak-coupling limit:
  /// gamma_e b_rms = sqrt(sum_i b_i^2), averaged in quadrature over configurations.
  double effective_b_rms = 0.0;
};

/// Reporter plus weakly coupled protons at random positions with a fixed rms
/// coupling, echo averaged over configurations.
BathOracleResult oracle_bath_limit(const BathOracleConfig& config,
                                   const PhysicalConstants& c = default_constants());

}  // namespace qreporter
