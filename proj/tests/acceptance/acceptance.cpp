// Acceptance run: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "qreporter/experiment.hpp"

using namespace qreporter;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

ExperimentConfig fixture(const std::string& name) {
  return load_config(fs::path(QREPORTER_DATA_DIR) / "scenes" / name);
}

double max_abs_dev(const SignalTrace& a, const SignalTrace& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.signal[i] - b.signal[i]));
  return d;
}

FitResult fit_config(const ExperimentConfig& cfg, const SignalTrace& data) {
  const auto model = make_trace_model(cfg.model.id);
  auto fixed = cfg.fit.fixed;
  for (const auto& [k, v] : resolve_model_params(cfg)) {
    if (!cfg.fit.init.count(k)) fixed.try_emplace(k, v);
  }
  FitOptions fo;
  fo.lattice_points = cfg.fit.lattice_points;
  fo.random_starts = cfg.fit.random_starts;
  fo.seed = cfg.seed;
  return fit_trace(model, data, cfg.fit.init, cfg.fit.bounds, fixed, fo);
}

// 1 ---------------------------------------------------------------------------
void eseem_round_trip(Outcome& o) {
  const double wn = larmor_proton(FieldSetting(619.0, Vec3::UnitZ()));
  const auto hf = hyperfine_from_eseem(30.0, 59.0, wn);
  const auto back = eseem_frequencies(hf, wn);
  const double rel = std::max(std::abs(back.omega_plus - 30.0) / 30.0, std::abs(back.omega_minus - 59.0) / 59.0);
  const auto fwd = eseem_frequencies({66.0, 52.0, 0.0}, wn);
  o.detail << "a=" << hf.a << " b=" << hf.b << " round-trip rel " << rel << "; w+=" << fwd.omega_plus
           << " w-=" << fwd.omega_minus;
  o.require(rel < 1e-9, "round trip");
  o.require(fwd.omega_plus >= 28.0 && fwd.omega_plus <= 33.0, "w+ range");
  o.require(fwd.omega_minus >= 52.0 && fwd.omega_minus <= 60.0, "w- range");
}

// 2 ---------------------------------------------------------------------------
void proton_geometry(Outcome& o) {
  const auto est = geometry_from_hyperfine({66.0, 52.0, 0.0}, {0.0, 0.0});
  const auto& p = est.negative_a.point;
  o.detail << "a<0 branch r=" << p.r_nm * 10.0 << " A theta=" << p.theta_deg << " deg (a>0 branch r="
           << est.positive_a.point.r_nm * 10.0 << " A)";
  o.require(p.r_nm >= 0.20 && p.r_nm <= 0.24, "point r");
  o.require(p.theta_deg >= 11.0 && p.theta_deg <= 41.0, "point theta");

  ProtonLocalizationConfig cfg;
  cfg.covariance << 18.0 * 18.0, 0.0, 0.0, 20.0 * 20.0;
  cfg.a0_range = {0.0, 40.0};
  cfg.samples = 20000;
  const auto loc = localize_protons({66.0, 52.0, 0.0}, cfg);
  const auto& b = loc.negative_a;
  o.detail << "; r68=[" << b.r_nm.lo * 10.0 << ", " << b.r_nm.hi * 10.0 << "] A theta68=[" << b.theta_deg.lo << ", "
           << b.theta_deg.hi << "] deg";
  o.require(b.r_nm.overlaps(0.22, 0.02), "r interval");
  o.require(b.theta_deg.overlaps(26.0, 15.0), "theta interval");
  o.require(std::abs(b.map.total() - 1.0) < 1e-9, "map normalization");
}

// 3 ---------------------------------------------------------------------------
void oracle_equivalence(Outcome& o) {
  const auto grid = linspace(0.0, 2.0, 200);
  const double wn = larmor_proton(FieldSetting(619.0, Vec3::UnitZ()));
  OracleSystem single(FieldSetting(619.0, Vec3::UnitZ()));
  single.add_spin(Species::electron);
  single.add_spin(Species::proton, Vec3(0.0, 0.0, 0.3));
  single.set_coupling({0, 1, 66.0, 52.0, false});
  const auto echo = oracle_echo_trace(single, 0, grid);
  const auto ref = tabulate(grid, [&](double t) { return eseem_single(t, {66.0, 52.0, 0.0}, wn); });
  const double d1 = max_abs_dev(echo, ref);

  auto nvb = fixture("nv_b_665G.json");
  nvb.grid = {0.0, 2.0, 200};
  const double d2 = max_abs_dev(simulate_oracle(nvb), simulate_oracle_reference(nvb));

  auto deer = fixture("deer_three_reporters.json");
  deer.grid.points = 200;
  const auto sites = deer.scene.reporter_sites;
  double d3 = 0.0;
  for (std::size_t n = 1; n <= sites.size(); ++n) {
    deer.scene.reporter_sites.assign(sites.begin(), sites.begin() + static_cast<std::ptrdiff_t>(n));
    d3 = std::max(d3, max_abs_dev(simulate_oracle(deer), simulate_oracle_reference(deer)));
  }
  o.detail << "eseem_single " << d1 << ", eseem_multi " << d2 << ", deer(1-3) " << d3;
  o.require(d1 < 1e-6 && d2 < 1e-6 && d3 < 1e-6, "deviation");
}

// 4 ---------------------------------------------------------------------------
void larmor_slope(Outcome& o) {
  auto cfg = fixture("larmor_scan.json");
  const double gp = default_constants().gamma_p;
  int ok = 0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s + 1);
    const auto pts = synthesize_field_scan(cfg);
    const auto f = fit_gyromagnetic(pts);
    if (std::abs(f.slope - gp) <= 2.0 * f.slope_sigma) ++ok;
  }
  o.detail << ok << "/" << seeds << " seeds within 2 sigma of " << gp;
  o.require(ok >= 19, "success rate");
}

// 5 ---------------------------------------------------------------------------
void bath_collapses(Outcome& o) {
  const auto dec = DecoherenceParams::none();
  double worst = 0.0;
  for (double wn : {8.0, 10.25, 16.57, 25.0}) {
    const double stop = 7.0 * kPi / wn;
    const auto grid = linspace(0.0, stop, 2001);
    const double step = grid[1] - grid[0];
    const auto tr = tabulate(grid, [&](double t) { return bath_echo(t, {0.3, wn}, dec); });
    std::vector<double> minima;
    for (std::size_t i = 1; i + 1 < tr.size(); ++i) {
      if (tr.signal[i] < tr.signal[i - 1] && tr.signal[i] <= tr.signal[i + 1]) minima.push_back(grid[i]);
    }
    const std::vector<double> expect{2.0 * kPi / wn, 6.0 * kPi / wn};
    o.require(minima.size() == expect.size(), "minimum count at wn=" + std::to_string(wn));
    for (std::size_t k = 0; k < std::min(minima.size(), expect.size()); ++k) {
      const double off = std::abs(minima[k] - expect[k]) / step;
      worst = std::max(worst, off);
      o.require(off <= 1.0, "collapse position at wn=" + std::to_string(wn));
    }
  }
  o.detail << "worst offset " << worst << " grid steps";

  BathOracleConfig cfg;
  cfg.n_protons = 6;
  cfg.coupling_scale = 2.0;
  cfg.omega_n = 10.25;
  cfg.configurations = 8;
  cfg.seed = 5;
  cfg.grid = linspace(0.3, 0.95, 131);
  const auto res = oracle_bath_limit(cfg);
  const auto it = std::min_element(res.trace.signal.begin(), res.trace.signal.end());
  const double t_min = cfg.grid[static_cast<std::size_t>(it - res.trace.signal.begin())];
  const double rel = std::abs(t_min / (2.0 * kPi / cfg.omega_n) - 1.0);
  o.detail << "; oracle ensemble first collapse " << t_min << " us (" << rel * 100.0 << "% off)";
  o.require(rel <= 0.05, "oracle collapse");
}

// 6 ---------------------------------------------------------------------------
bool within_cells(const Vec3& fit, const Vec3& truth, double cell, double cells) {
  return std::abs(fit.x() - truth.x()) <= cells * cell + 1e-9 && std::abs(fit.y() - truth.y()) <= cells * cell + 1e-9;
}

void reporter_localization(Outcome& o) {
  auto one = fixture("localize_single.json");
  const auto data1 = synthesize_angles(one);
  const auto res1 = localize_reporters(data1, one.localize);
  const auto am = res1.combined.argmax_position();
  const Vec3 truth1 = one.scene.reporter_sites[0];
  const double cell = one.localize.x.step();
  o.detail << "single argmax (" << am.x() << ", " << am.y() << ")";
  o.require(within_cells(Vec3(am.x(), am.y(), 0.0), truth1, cell, 2.0), "single argmax");
  double norm_err = std::abs(res1.combined.total() - 1.0);

  auto four = one;
  four.seed = 3;
  four.localize.seed = 3;
  four.scene.reporter_sites = {{1.25, -1.75, 3.0}, {-3.75, 2.25, 3.0}, {4.25, 3.75, 3.0}, {-2.25, -5.75, 3.0}};
  four.localize.n_spins = 4;
  double min_sep = 1e9;
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = i + 1; j < 4; ++j) {
      min_sep = std::min(min_sep, (four.scene.reporter_sites[i] - four.scene.reporter_sites[j]).norm());
    }
  }
  o.require(min_sep >= 5.0, "planted spacing");
  const auto data4 = synthesize_angles(four);
  const auto res4 = localize_reporters(data4, four.localize);
  std::vector<bool> used(res4.sites.size(), false);
  std::size_t recovered = 0;
  for (const auto& truth : four.scene.reporter_sites) {
    for (std::size_t k = 0; k < res4.sites.size(); ++k) {
      if (!used[k] && within_cells(res4.sites[k], truth, cell, 2.0) &&
          res4.spin_maps[k].in_credible_region(truth.x(), truth.y(), 0.95)) {
        used[k] = true;
        ++recovered;
        break;
      }
    }
  }
  norm_err = std::max(norm_err, std::abs(res4.combined.total() - 1.0));
  for (const auto& m : res4.spin_maps) norm_err = std::max(norm_err, std::abs(m.total() - 1.0));
  o.detail << "; 4-reporter scene (min spacing " << min_sep << " nm): " << recovered << "/4 recovered; "
           << "normalization error " << norm_err;
  o.require(recovered == 4, "4-reporter recovery");
  o.require(norm_err < 1e-9, "normalization");
}

// 7 ---------------------------------------------------------------------------
void fit_calibration(Outcome& o) {
  auto cfg = fixture("nv_a_619G.json");
  double sum = 0.0;
  const int seeds = 50;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = static_cast<std::uint64_t>(100 + s);
    const auto data = synthesize_trace(simulate_model(cfg), *cfg.noise, cfg.seed);
    sum += fit_config(cfg, data).reduced_chi2;
  }
  const double mean = sum / seeds;

  auto t1 = fixture("reporter_t1.json");
  int ok = 0;
  double err_sum = 0.0;
  const int t1_seeds = 100;
  for (int s = 0; s < t1_seeds; ++s) {
    t1.seed = static_cast<std::uint64_t>(1000 + s);
    const auto data = synthesize_trace(simulate_model(t1), *t1.noise, t1.seed);
    const auto f = fit_config(t1, data);
    if (std::abs(f.value("t1_s") - 29.4) <= 2.3) ++ok;
    err_sum += f.error("t1_s");
  }
  o.detail << "mean reduced chi2 " << mean << " over " << seeds << " seeds; T1 within 2.3 us in " << ok << "/"
           << t1_seeds << " seeds (mean reported sigma " << err_sum / t1_seeds << " us)";
  o.require(std::abs(mean - 1.0) <= 0.1, "reduced chi2");
  o.require(ok >= 68, "T1 coverage");
}

// 8 ---------------------------------------------------------------------------
double hermitian_defect(const ComplexMatrix& m) { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }

void invariants(Outcome& o) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checks = 0;

  double map_err = 0.0;
  for (int k = 0; k < 20; ++k) {
    const auto ax = GridAxis::with_step(-2.0, 2.0, 0.25);
    std::vector<double> lw(ax.n * ax.n);
    for (auto& w : lw) w = 400.0 * u(rng);
    map_err = std::max(map_err, std::abs(ProbabilityMap::from_log_weights(ax, ax, lw).total() - 1.0));
    ++checks;
  }
  o.require(map_err < 1e-9, "map normalization");

  double excess = 0.0;
  const auto dec = DecoherenceParams{};
  for (int k = 0; k < 50; ++k) {
    const HyperfineParams hf{100.0 * u(rng), 100.0 * std::abs(u(rng)), 0.0};
    const double wn = 20.0 * std::abs(u(rng)) + 0.1;
    SpinSystem s;
    s.field = FieldSetting(300.0, Vec3(u(rng), u(rng), 1.0));
    s.reporter_sites = {{4.0 * u(rng), 4.0 * u(rng), 3.0}, {4.0 * u(rng), 4.0 * u(rng), 3.0}};
    const double p = std::abs(u(rng));
    for (double t : linspace(0.0, 5.0, 101)) {
      excess = std::max({excess, std::abs(eseem_single(t, hf, wn)) - 1.0, std::abs(deer_signal(t, s, p, dec)) - 1.0,
                         std::abs(bath_echo(t, {std::abs(u(rng)), wn}, dec)) - 1.0});
    }
    ++checks;
  }
  o.require(excess <= 1e-12, "trace bounds");

  const auto dir = fs::temp_directory_path() / "qreporter_acceptance";
  fs::create_directories(dir);
  bool round_trip = true;
  for (int k = 0; k < 10; ++k) {
    SignalTrace t = tabulate(linspace(0.0, 3.0, 25), [&](double) { return u(rng); });
    t.sigma.assign(t.size(), std::abs(u(rng)) + 1e-3);
    save_trace(dir / "t.csv", t);
    const auto back = load_trace(dir / "t.csv").trace;
    round_trip = round_trip && back.signal == t.signal && back.sigma == t.sigma && back.abscissa == t.abscissa;
    ++checks;
  }
  fs::remove_all(dir);
  o.require(round_trip, "serialization");

  double herm = 0.0, purity_drift = 0.0;
  for (int k = 0; k < 10; ++k) {
    OracleSystem sys(FieldSetting(200.0 + 400.0 * std::abs(u(rng)), Vec3(u(rng), u(rng), 1.0)));
    sys.add_spin(Species::nv);
    sys.add_spin(Species::electron, Vec3(3.0 * u(rng), 3.0 * u(rng), 3.0));
    sys.add_spin(Species::electron, Vec3(3.0 * u(rng), 3.0 * u(rng), 3.0));
    sys.add_spin(Species::proton, Vec3(3.0 * u(rng), 3.0 * u(rng), 3.3));
    sys.derive_couplings();
    herm = std::max(herm, hermitian_defect(build_hamiltonian(sys)));
    const auto init = thermal_initial_state(sys);
    PulseSequence plain;
    plain.readout(Channel::spin(0));
    const double p0 = run_sequence(sys, plain, init).purity;
    PulseSequence seq;
    for (int j = 0; j < 5; ++j) {
      seq.pulse(Channel::spin(static_cast<std::size_t>(j) % 4), j % 2 ? Axis::x : Axis::y, kPi * u(rng));
      seq.delay(std::abs(u(rng)));
    }
    seq.readout(Channel::spin(0));
    const auto r = run_sequence(sys, seq, init);
    herm = std::max(herm, hermitian_defect(r.density));
    purity_drift = std::max({purity_drift, std::abs(r.purity - p0), std::abs(r.trace - 1.0)});
    ++checks;
  }
  o.require(herm < 1e-10, "Hermiticity");
  o.require(purity_drift < 1e-10, "purity");

  double scaling = 0.0;
  const auto& c = default_constants();
  for (int k = 0; k < 20; ++k) {
    const Vec3 r(u(rng), u(rng), u(rng) + 2.0);
    const FieldSetting f(300.0, Vec3(u(rng), u(rng), 1.0));
    const double d1 = dipolar_coupling_ee(Vec3::Zero(), r, f);
    const double d2 = dipolar_coupling_ee(Vec3::Zero(), 2.0 * r, f);
    scaling = std::max(scaling, std::abs(d2 * 8.0 / d1 - 1.0));
    const double rr = 0.2 + 0.3 * std::abs(u(rng));
    const double th = 90.0 * std::abs(u(rng));
    const auto h1 = hyperfine_from_geometry(rr, th);
    const auto h2 = hyperfine_from_geometry(2.0 * rr, th);
    scaling = std::max(scaling, std::abs(h2.b * 8.0 - h1.b) / std::max(h1.b, 1e-300) * (h1.b > 1e-9 ? 1.0 : 0.0));
    const double b = 100.0 + 900.0 * std::abs(u(rng));
    scaling = std::max(scaling, std::abs(larmor_proton(FieldSetting(2.0 * b, Vec3::UnitZ())) /
                                             (2.0 * larmor_proton(FieldSetting(b, Vec3::UnitZ()))) - 1.0));
    scaling = std::max(scaling, std::abs(zeeman_reporter(FieldSetting(b, Vec3::UnitZ())) / (c.gamma_e * b) - 1.0));
    ++checks;
  }
  o.require(scaling < 1e-12, "unit scaling");
  o.detail << checks << " randomized checks; map " << map_err << ", bounds excess " << excess << ", hermitian "
           << herm << ", purity " << purity_drift << ", scaling " << scaling;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"ESEEM frequency round trip", eseem_round_trip},
      {"proton geometry", proton_geometry},
      {"oracle equivalence", oracle_equivalence},
      {"Larmor scaling", larmor_slope},
      {"bath collapse positions", bath_collapses},
      {"reporter localization", reporter_localization},
      {"fit calibration", fit_calibration},
      {"invariant suites", invariants},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %zu %s: %s (%.1f s) %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", dt,
                o.detail.str().c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
