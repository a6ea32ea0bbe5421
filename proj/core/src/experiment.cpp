#include "qreporter/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

bool uses(const TraceModel& m, const std::string& name) {
  const auto& n = m.parameter_names();
  return std::find(n.begin(), n.end(), name) != n.end();
}

TraceModel model_for(const ExperimentConfig& config, const PhysicalConstants& c) {
  if (config.model.id.empty()) throw SchemaError("missing required field 'model.id'");
  if (config.model.id == "deer") return make_deer_model(config.scene, c);
  try {
    return make_trace_model(config.model.id, c);
  } catch (const DomainError& e) {
    throw SchemaError(std::string("field 'model.id': ") + e.what());
  }
}

OracleSystem oracle_system(const ExperimentConfig& config, const PhysicalConstants& c) {
  auto sys = OracleSystem::from_scene(config.scene, config.oracle.include_nv, c);
  if (config.oracle.drop_reporter_couplings) {
    const auto electrons = sys.indices_of(Species::electron);
    for (std::size_t a = 0; a < electrons.size(); ++a) {
      for (std::size_t b = a + 1; b < electrons.size(); ++b) sys.set_coupling({electrons[a], electrons[b], 0.0, 0.0, false});
    }
  }
  for (const auto& pc : config.oracle.couplings) sys.set_coupling(pc);
  return sys;
}

std::size_t echo_target(const ExperimentConfig& config, const OracleSystem& sys) {
  if (config.oracle.electron) return *config.oracle.electron;
  const auto e = sys.indices_of(Species::electron);
  if (e.empty()) throw ChannelError("scene has no reporter electron to address");
  return e.front();
}

}  // namespace

std::map<std::string, double> resolve_model_params(const ExperimentConfig& config, const PhysicalConstants& c) {
  const auto model = model_for(config, c);
  auto p = config.model.params;
  const auto& dec = config.decoherence;
  const std::pair<const char*, double> from_dec[] = {{"t2_nv", dec.t2_nv},
                                                     {"t2_s", dec.t2_s},
                                                     {"t1_s", dec.t1_s},
                                                     {"rabi_decay", dec.rabi_decay},
                                                     {"stretch", dec.stretch_exponent}};
  for (const auto& [name, v] : from_dec) {
    if (uses(model, name)) p.try_emplace(name, v);
  }
  if (uses(model, "omega_n") && !p.count("omega_n")) p["omega_n"] = larmor_proton(config.scene.field, c);

  const auto& s = config.scene;
  if (!s.reporter_sites.empty()) {
    const char* keys[2][2] = {{"a1", "b1"}, {"a2", "b2"}};
    for (std::size_t k = 0; k < std::min<std::size_t>(2, s.proton_sites.size()); ++k) {
      const auto h = hyperfine_from_sites(s.reporter_sites.front(), s.proton_sites[k], s.field, 0.0, c);
      if (k == 0 && uses(model, "a")) {
        p.try_emplace("a", h.a);
        p.try_emplace("b", h.b);
      }
      if (uses(model, keys[k][0])) {
        p.try_emplace(keys[k][0], h.a);
        p.try_emplace(keys[k][1], h.b);
      }
    }
  }
  for (const auto& [k, v] : p) {
    (void)v;
    if (!uses(model, k)) throw SchemaError("field 'model.params." + k + "' is not a parameter of " + model.id());
  }
  return p;
}

SignalTrace simulate_model(const ExperimentConfig& config, const PhysicalConstants& c) {
  const auto model = model_for(config, c);
  const auto grid = config.grid.values();
  return model.simulate(grid, resolve_model_params(config, c));
}

SignalTrace simulate_oracle(const ExperimentConfig& config, const PhysicalConstants& c) {
  const auto sys = oracle_system(config, c);
  const auto grid = config.grid.values();
  const auto& o = config.oracle;
  if (o.sequence == "deer") {
    if (o.frame != Frame::rotating) throw DomainError("the DEER oracle runs in the rotating frame");
    return oracle_deer_trace(sys, grid, o.flip_prob, o.flip_model);
  }
  if (o.sequence == "echo") return oracle_echo_trace(sys, echo_target(config, sys), grid, o.frame);

  const OracleRunner runner(sys, o.frame);
  if (o.sequence == "rabi") {
    const auto target = echo_target(config, sys);
    std::vector<SpinState> initial(sys.spins().size(), SpinState::mixed);
    initial.at(target) = SpinState::up;
    return tabulate(grid, [&](double t) {
      return runner.run(rabi_sequence(Channel::spin(target), t, o.rabi_freq), initial).expectation;
    });
  }
  // empty: readout of the polarized NV (or the first spin) with nothing applied
  const auto initial = [&] {
    auto st = thermal_initial_state(sys);
    if (!o.include_nv && !st.empty()) st.front() = SpinState::up;
    return st;
  }();
  PulseSequence seq;
  seq.readout(Channel::spin(0));
  const double v = runner.run(seq, initial).expectation;
  return tabulate(grid, [&](double) { return v; });
}

SignalTrace simulate_oracle_reference(const ExperimentConfig& config, const PhysicalConstants& c) {
  const auto grid = config.grid.values();
  const auto& o = config.oracle;
  const auto ideal = DecoherenceParams::none();
  if (o.sequence == "deer") {
    return tabulate(grid, [&](double t) { return deer_signal(t, config.scene, o.flip_prob, ideal, c); });
  }
  if (o.sequence == "rabi") return tabulate(grid, [&](double t) { return reporter_rabi(t, o.rabi_freq, ideal); });
  if (o.sequence == "empty") return tabulate(grid, [](double) { return 1.0; });

  const auto& s = config.scene;
  if (s.reporter_sites.empty()) throw ChannelError("scene has no reporter electron to address");
  std::vector<ProtonCoupling> protons;
  const double wn = larmor_proton(s.field, c);
  for (const auto& p : s.proton_sites) protons.push_back({hyperfine_from_sites(s.reporter_sites.front(), p, s.field, 0.0, c), wn});
  if (protons.empty()) return tabulate(grid, [](double) { return 1.0; });
  return tabulate(grid, [&](double t) { return eseem_multi(t, protons); });
}

MultiAngleDataset synthesize_angles(const ExperimentConfig& config, const PhysicalConstants& c) {
  if (config.angles.empty()) throw SchemaError("missing required field 'angles'");
  if (!config.noise) throw SchemaError("missing required field 'noise'");
  const auto grid = config.grid.values();
  const double p = config.localize.flip_prob;
  MultiAngleDataset out;
  for (std::size_t i = 0; i < config.angles.size(); ++i) {
    SpinSystem scene = config.scene;
    scene.field = FieldSetting::from_angles(config.scene.field.magnitude(), config.angles[i].polar_deg,
                                            config.angles[i].azimuth_deg);
    const auto clean = tabulate(grid, [&](double t) { return deer_signal(t, scene, p, config.decoherence, c); });
    out.traces.push_back({scene.field, synthesize_trace(clean, *config.noise, config.seed * 1000003ULL + i)});
  }
  return out;
}

std::vector<FieldPoint> synthesize_field_scan(const ExperimentConfig& config, const PhysicalConstants& c) {
  if (config.scan.fields_gauss.empty()) throw SchemaError("missing required field 'scan.fields_gauss'");
  if (!(config.scan.relative_noise > 0.0)) throw SchemaError("field 'scan.relative_noise' must be positive");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<FieldPoint> out;
  for (double b : config.scan.fields_gauss) {
    const double wn = larmor_proton(FieldSetting(b, config.scene.field.direction()), c);
    const double sigma = config.scan.relative_noise * wn;
    out.push_back({b, wn + sigma * gauss(rng), sigma});
  }
  return out;
}

}  // namespace qreporter
