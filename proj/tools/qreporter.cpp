// qreporter: simulate, synthesize and invert quantum-reporter measurements.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "qreporter/errors.hpp"
#include "qreporter/experiment.hpp"

namespace qr = qreporter;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kSchema = 2, kConvergence = 3, kDimension = 4, kDomain = 5 };

int exit_code(const qr::Error& e) {
  switch (e.kind()) {
    case qr::ErrorKind::schema: return kSchema;
    case qr::ErrorKind::convergence: return kConvergence;
    case qr::ErrorKind::dimension: return kDimension;
    default: return kDomain;
  }
}

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string model;
  std::string grid;
  std::string angles;
  std::string init;
  std::string fix;
  std::string fields;
  std::optional<std::uint64_t> seed;
  bool compare = false;
  bool quiet = false;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double number(const std::string& s, const std::string& flag) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw qr::SchemaError(flag + ": not a number: '" + s + "'");
}

std::map<std::string, double> assignments(const std::string& s, const std::string& flag) {
  std::map<std::string, double> out;
  for (const auto& kv : split(s, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw qr::SchemaError(flag + ": expected name=value, got '" + kv + "'");
    out[kv.substr(0, eq)] = number(kv.substr(eq + 1), flag);
  }
  return out;
}

class Run {
 public:
  Run(std::string command, const Options& opt)
      : command_(std::move(command)), opt_(opt), constants_(qr::constants_from_environment()),
        start_(std::chrono::steady_clock::now()) {}

  qr::ExperimentConfig config(bool required = true) {
    qr::ExperimentConfig c;
    if (!opt_.config.empty()) c = qr::load_config(opt_.config);
    else if (required) throw qr::SchemaError("--config is required for " + command_);
    if (opt_.seed) {
      c.seed = *opt_.seed;
      c.localize.seed = *opt_.seed;
    }
    if (!opt_.model.empty()) c.model.id = opt_.model;
    if (!opt_.grid.empty()) {
      const auto g = split(opt_.grid, ':');
      if (g.size() != 3) throw qr::SchemaError("--grid: expected start:stop:points");
      c.grid.start = number(g[0], "--grid");
      c.grid.stop = number(g[1], "--grid");
      const double n = number(g[2], "--grid");
      if (n < 2 || n != static_cast<double>(static_cast<std::size_t>(n)) || !(c.grid.stop > c.grid.start)) {
        throw qr::SchemaError("--grid: needs stop > start and an integer point count >= 2");
      }
      c.grid.points = static_cast<std::size_t>(n);
    }
    if (!opt_.angles.empty()) {
      c.angles.clear();
      for (const auto& a : split(opt_.angles, ',')) {
        const auto pa = split(a, ':');
        if (pa.empty() || pa.size() > 2) throw qr::SchemaError("--angles: expected polar[:azimuth],...");
        c.angles.push_back({number(pa[0], "--angles"), pa.size() == 2 ? number(pa[1], "--angles") : 0.0});
      }
    }
    if (!opt_.fields.empty()) {
      c.scan.fields_gauss.clear();
      for (const auto& f : split(opt_.fields, ',')) c.scan.fields_gauss.push_back(number(f, "--fields"));
    }
    config_ = c;
    return c;
  }

  const qr::PhysicalConstants& constants() const { return constants_; }

  fs::path out(const std::string& suffix = "") const {
    if (opt_.out.empty()) throw qr::SchemaError("--out is required for " + command_);
    return fs::path(opt_.out + suffix);
  }

  void wrote(const fs::path& p) { outputs_.push_back(p.string()); }

  std::map<std::string, std::string> metadata(const std::string& sequence) const {
    return {{"sequence", sequence},
            {"seed", std::to_string(config_.seed)},
            {"field_gauss", std::to_string(config_.scene.field.magnitude())},
            {"constants_version", constants_.version}};
  }

  void say(const std::string& line) const {
    if (!opt_.quiet) std::cout << line << "\n";
  }

  void finish() {
    qr::RunManifest m;
    m.command = command_;
    m.config = config_;
    m.seed = config_.seed;
    m.constants_version = constants_.version;
    m.outputs = outputs_;
    m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const auto path = out(".manifest.json");
    qr::save_manifest(path, m);
    say("manifest: " + path.string());
  }

 private:
  std::string command_;
  const Options& opt_;
  qr::PhysicalConstants constants_;
  qr::ExperimentConfig config_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void cmd_simulate(const Options& opt) {
  Run run("simulate", opt);
  const auto cfg = run.config();
  const auto trace = qr::simulate_model(cfg, run.constants());
  qr::save_trace(run.out(), trace, run.metadata(cfg.model.id));
  run.wrote(run.out());
  run.say("trace: " + run.out().string() + " (" + std::to_string(trace.size()) + " points)");
  run.finish();
}

void cmd_oracle(const Options& opt) {
  Run run("oracle", opt);
  const auto cfg = run.config();
  const auto trace = qr::simulate_oracle(cfg, run.constants());
  qr::save_trace(run.out(), trace, run.metadata("oracle-" + cfg.oracle.sequence));
  run.wrote(run.out());
  run.say("trace: " + run.out().string());
  if (opt.compare) {
    const auto ref = qr::simulate_oracle_reference(cfg, run.constants());
    double dev = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) dev = std::max(dev, std::abs(trace.signal[i] - ref.signal[i]));
    qr::save_trace(run.out(".reference.csv"), ref, run.metadata("analytic-" + cfg.oracle.sequence));
    run.wrote(run.out(".reference.csv"));
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << "max |oracle - analytic| = " << dev;
    run.say(s.str());
  }
  run.finish();
}

void cmd_synth(const Options& opt) {
  Run run("synth", opt);
  const auto cfg = run.config();
  if (!cfg.noise) throw qr::SchemaError("missing required field 'noise'");
  if (!cfg.angles.empty()) {
    const auto data = qr::synthesize_angles(cfg, run.constants());
    qr::save_dataset(run.out(), data, run.metadata("deer"));
    run.wrote(run.out());
    for (std::size_t i = 0; i < data.traces.size(); ++i) {
      run.wrote(run.out().parent_path() / (run.out().stem().string() + ".angle" + std::to_string(i) + ".csv"));
    }
    run.say("dataset: " + run.out().string() + " (" + std::to_string(data.traces.size()) + " angles)");
  } else {
    const auto clean = qr::simulate_model(cfg, run.constants());
    const auto noisy = qr::synthesize_trace(clean, *cfg.noise, cfg.seed);
    qr::save_trace(run.out(), noisy, run.metadata(cfg.model.id));
    run.wrote(run.out());
    run.say("trace: " + run.out().string() + " (sigma " + fmt(cfg.noise->sigma()) + ")");
  }
  run.finish();
}

void cmd_fit(const Options& opt) {
  Run run("fit", opt);
  auto cfg = run.config(false);
  if (opt.data.empty()) throw qr::SchemaError("--data is required for fit");
  if (cfg.model.id.empty()) throw qr::SchemaError("--model is required for fit");
  const auto data = qr::load_trace(opt.data).trace;
  const auto model = cfg.model.id == "deer" ? qr::make_deer_model(cfg.scene, run.constants())
                                            : qr::make_trace_model(cfg.model.id, run.constants());
  auto init = cfg.fit.init;
  auto fixed = cfg.fit.fixed;
  for (const auto& [k, v] : assignments(opt.init, "--init")) init[k] = v;
  for (const auto& [k, v] : assignments(opt.fix, "--fix")) {
    fixed[k] = v;
    init.erase(k);
  }
  if (!opt.config.empty()) {
    // Parameters that are not fitted take the configured (scene-resolved) values.
    for (const auto& [k, v] : qr::resolve_model_params(cfg, run.constants())) {
      if (!init.count(k)) fixed.try_emplace(k, v);
    }
  }
  if (init.empty()) {
    for (std::size_t i = 0; i < model.parameter_names().size(); ++i) {
      if (!fixed.count(model.parameter_names()[i])) init[model.parameter_names()[i]] = model.defaults()[i];
    }
  }
  qr::FitOptions fo;
  fo.lattice_points = cfg.fit.lattice_points;
  fo.random_starts = cfg.fit.random_starts;
  fo.seed = cfg.seed;
  const auto fit = qr::fit_trace(model, data, init, cfg.fit.bounds, fixed, fo);
  qr::save_fit(run.out(), fit);
  run.wrote(run.out());
  for (std::size_t i = 0; i < fit.names.size(); ++i) {
    run.say(fit.names[i] + " = " + fmt(fit.value(fit.names[i])) + " +/- " + fmt(fit.error(fit.names[i])));
  }
  run.say("reduced chi2 = " + fmt(fit.reduced_chi2) + " (dof " + std::to_string(fit.dof) + ")");
  run.finish();
}

void cmd_localize(const Options& opt) {
  Run run("localize", opt);
  const auto cfg = run.config(false);
  if (opt.data.empty()) throw qr::SchemaError("--data is required for localize");
  const auto data = qr::load_dataset(opt.data);
  auto lc = cfg.localize;
  lc.decoherence = cfg.decoherence;
  lc.seed = cfg.seed;
  qr::ReporterLocalization res;
  bool partial = false;
  try {
    res = qr::localize_reporters(data, lc, run.constants());
  } catch (const qr::LocalizationBudgetError& e) {
    res = e.partial();
    partial = true;
  }
  if (!res.spin_maps.empty()) {
    qr::save_map(run.out(), res.combined);
    run.wrote(run.out());
    for (std::size_t i = 0; i < res.spin_maps.size(); ++i) {
      const auto p = run.out(".spin" + std::to_string(i) + ".txt");
      qr::save_map(p, res.spin_maps[i]);
      run.wrote(p);
    }
  }
  for (std::size_t i = 0; i < res.sites.size(); ++i) {
    run.say("reporter " + std::to_string(i) + ": (" + fmt(res.sites[i].x()) + ", " + fmt(res.sites[i].y()) + ", " +
            fmt(res.sites[i].z()) + ") nm");
  }
  run.say("chi2 = " + fmt(res.chi2_min) + " (dof " + std::to_string(res.dof) + "), evaluations " +
          std::to_string(res.evaluations));
  run.finish();
  if (partial) throw qr::ConvergenceError("evaluation budget exhausted; partial maps written");
}

void cmd_localize_protons(const Options& opt) {
  Run run("localize-protons", opt);
  const auto cfg = run.config();
  if (!cfg.protons) throw qr::SchemaError("missing required field 'protons'");
  const auto& p = *cfg.protons;
  qr::ProtonLocalizationConfig pc;
  pc.covariance << p.sigma_a * p.sigma_a, p.correlation * p.sigma_a * p.sigma_b,
      p.correlation * p.sigma_a * p.sigma_b, p.sigma_b * p.sigma_b;
  pc.a0_range = p.a0_range;
  pc.samples = p.samples;
  pc.seed = cfg.seed;
  const auto res = qr::localize_protons(p.hyperfine, pc, run.constants());
  for (const auto* br : {&res.positive_a, &res.negative_a}) {
    const std::string tag = br->a_sign > 0 ? "positive" : "negative";
    const auto path = run.out("." + tag + ".txt");
    qr::save_map(path, br->map);
    run.wrote(path);
    run.say(tag + " a: r = " + fmt(10 * br->r_nm.median) + " [" + fmt(10 * br->r_nm.lo) + ", " +
            fmt(10 * br->r_nm.hi) + "] A, theta = " + fmt(br->theta_deg.median) + " [" + fmt(br->theta_deg.lo) +
            ", " + fmt(br->theta_deg.hi) + "] deg");
  }
  run.finish();
}

void cmd_scan_field(const Options& opt) {
  Run run("scan-field", opt);
  const auto cfg = run.config();
  const auto points = qr::synthesize_field_scan(cfg, run.constants());
  qr::SignalTrace table;
  for (const auto& fp : points) {
    table.abscissa.push_back(fp.field_gauss);
    table.signal.push_back(fp.omega_n);
    table.sigma.push_back(fp.sigma);
  }
  auto meta = run.metadata("larmor-scan");
  meta["abscissa_units"] = "G";
  meta["signal_units"] = "rad/us";
  qr::save_trace(run.out(), table, meta);
  run.wrote(run.out());
  const auto fit = qr::fit_gyromagnetic(points);
  const double expected = run.constants().gamma_p;
  run.say("slope = " + fmt(fit.slope) + " +/- " + fmt(fit.slope_sigma) + " rad/(us G); configured " + fmt(expected) +
          " (" + fmt(std::abs(fit.slope - expected) / fit.slope_sigma) + " sigma)");
  run.finish();
}

void cmd_constants(const Options& opt) {
  const auto c = qr::constants_from_environment();
  std::cout << "version " << c.version << "\n";
  std::cout.precision(12);
  std::cout << "delta_nv " << c.delta_nv << " rad/us\ngamma_e " << c.gamma_e << " rad/(us G)\ngamma_p " << c.gamma_p
            << " rad/(us G)\nk_ee " << c.k_ee << " rad nm^3/us\nk_ep " << c.k_ep << " rad nm^3/us\n";
  if (!opt.out.empty()) c.save(opt.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qreporter: quantum-reporter simulation and inference"};
  app.require_subcommand(1);
  Options opt;
  app.add_flag("-q,--quiet", opt.quiet, "Suppress progress output");

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("-c,--config", opt.config, "Experiment config (JSON) or run manifest");
    if (needs_config) c->required();
    sub->add_option("-o,--out", opt.out, "Output path")->required();
    sub->add_option("--seed", opt.seed, "Override the config seed");
    sub->add_flag("-q,--quiet", opt.quiet, "Suppress progress output");
  };

  auto* simulate = app.add_subcommand("simulate", "Noiseless analytic trace");
  common(simulate, true);
  simulate->add_option("-m,--model", opt.model, "Model id (overrides config)");
  simulate->add_option("-g,--grid", opt.grid, "Abscissa grid start:stop:points (us)");

  auto* oracle = app.add_subcommand("oracle", "Density-matrix trace of the configured sequence");
  common(oracle, true);
  oracle->add_option("-g,--grid", opt.grid, "Abscissa grid start:stop:points (us)");
  oracle->add_flag("--compare", opt.compare, "Also write the analytic trace and report the deviation");

  auto* synth = app.add_subcommand("synth", "Noisy synthetic trace or multi-angle dataset");
  common(synth, true);
  synth->add_option("-m,--model", opt.model, "Model id (overrides config)");
  synth->add_option("-g,--grid", opt.grid, "Abscissa grid start:stop:points (us)");
  synth->add_option("-a,--angles", opt.angles, "Field angles polar[:azimuth],... in degrees");

  auto* fit = app.add_subcommand("fit", "Fit an analytic model to a trace");
  common(fit, false);
  fit->add_option("-d,--data", opt.data, "Trace file")->required();
  fit->add_option("-m,--model", opt.model, "Model id");
  fit->add_option("--init", opt.init, "Initial values name=value,...");
  fit->add_option("--fix", opt.fix, "Fixed values name=value,...");

  auto* localize = app.add_subcommand("localize", "Reporter probability maps from a multi-angle dataset");
  common(localize, false);
  localize->add_option("-d,--data", opt.data, "Dataset manifest")->required();

  auto* protons = app.add_subcommand("localize-protons", "Proton position maps from hyperfine estimates");
  common(protons, true);

  auto* scan = app.add_subcommand("scan-field", "Synthetic Larmor frequency scan and slope fit");
  common(scan, true);
  scan->add_option("--fields", opt.fields, "Field magnitudes in G, comma separated");

  auto* constants = app.add_subcommand("constants", "Print the active physical constants");
  constants->add_option("-o,--out", opt.out, "Also write them to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*simulate) cmd_simulate(opt);
    else if (*oracle) cmd_oracle(opt);
    else if (*synth) cmd_synth(opt);
    else if (*fit) cmd_fit(opt);
    else if (*localize) cmd_localize(opt);
    else if (*protons) cmd_localize_protons(opt);
    else if (*scan) cmd_scan_field(opt);
    else if (*constants) cmd_constants(opt);
  } catch (const qr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
