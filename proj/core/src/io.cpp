#include "qreporter/io.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

using nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw SchemaError("cannot write " + path.string());
  out << text;
  if (!out) throw SchemaError("write failed for " + path.string());
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(where + ": not a number: '" + s + "'");
  }
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
    throw SchemaError(source + ": line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
  }
}

// Schema helpers. `path` is the dotted field name used in diagnostics.

const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path + ": expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError("missing required field '" + (path.empty() ? key : path + "." + key) + "'");
  return *it;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

double as_number(const json& v, const std::string& path) {
  if (v.is_null()) return std::numeric_limits<double>::infinity();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  if (!v.is_number()) throw SchemaError("field '" + path + "' must be a number");
  return v.get<double>();
}

json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

std::size_t as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw SchemaError("field '" + path + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

bool as_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw SchemaError("field '" + path + "' must be true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError("field '" + path + "' must be a string");
  return v.get<std::string>();
}

template <class T, class Fn>
void optional_field(const json& j, const std::string& key, const std::string& path, T& dst, Fn conv) {
  if (auto it = j.find(key); it != j.end()) dst = conv(*it, join(path, key));
}

Vec3 as_vec3(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) throw SchemaError("field '" + path + "' must be a 3-vector");
  return {as_number(v[0], path + "[0]"), as_number(v[1], path + "[1]"), as_number(v[2], path + "[2]")};
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Interval as_interval(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw SchemaError("field '" + path + "' must be [lo, hi]");
  Interval iv{as_number(v[0], path + "[0]"), as_number(v[1], path + "[1]")};
  if (iv.hi < iv.lo) throw SchemaError("field '" + path + "' has hi < lo");
  return iv;
}

GridAxis as_axis(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 3) throw SchemaError("field '" + path + "' must be [lo, hi, step]");
  try {
    return GridAxis::with_step(as_number(v[0], path), as_number(v[1], path), as_number(v[2], path));
  } catch (const DomainError& e) {
    throw SchemaError("field '" + path + "': " + e.what());
  }
}

json axis_json(const GridAxis& a) { return json::array({a.lo, a.hi, a.step()}); }

std::map<std::string, double> as_param_map(const json& v, const std::string& path) {
  if (!v.is_object()) throw SchemaError("field '" + path + "' must be an object of numbers");
  std::map<std::string, double> out;
  for (auto it = v.begin(); it != v.end(); ++it) out[it.key()] = as_number(it.value(), join(path, it.key()));
  return out;
}

json param_json(const std::map<std::string, double>& m) {
  json j = json::object();
  for (const auto& [k, v] : m) j[k] = number_json(v);
  return j;
}

std::vector<Vec3> as_sites(const json& v, const std::string& path) {
  if (!v.is_array()) throw SchemaError("field '" + path + "' must be a list of 3-vectors");
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_vec3(v[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

FieldSetting as_field(const json& j, const std::string& path) {
  const double mag = as_number(require(j, "magnitude_gauss", path), join(path, "magnitude_gauss"));
  try {
    if (auto it = j.find("direction"); it != j.end()) return FieldSetting(mag, as_vec3(*it, join(path, "direction")));
    if (j.contains("polar_deg")) {
      const double az = j.contains("azimuth_deg") ? as_number(j["azimuth_deg"], join(path, "azimuth_deg")) : 0.0;
      return FieldSetting::from_angles(mag, as_number(j["polar_deg"], join(path, "polar_deg")), az);
    }
    return FieldSetting(mag, Vec3::UnitZ());
  } catch (const DomainError& e) {
    throw SchemaError("field '" + path + "': " + e.what());
  }
}

json field_json(const FieldSetting& f) { return {{"magnitude_gauss", f.magnitude()}, {"direction", vec_json(f.direction())}}; }

SpinSystem as_scene(const json& j, const std::string& path) {
  SpinSystem s;
  optional_field(j, "nv_position_nm", path, s.nv_position, as_vec3);
  if (auto it = j.find("nv_axis"); it != j.end()) {
    if (it->is_string() && it->get<std::string>() == "111") s.nv_axis = nv_axis_111();
    else s.nv_axis = as_vec3(*it, join(path, "nv_axis")).normalized();
  }
  optional_field(j, "surface_z_nm", path, s.surface_z, as_number);
  optional_field(j, "surface_tolerance_nm", path, s.surface_tolerance, as_number);
  optional_field(j, "reporters_nm", path, s.reporter_sites, as_sites);
  optional_field(j, "protons_nm", path, s.proton_sites, as_sites);
  s.field = as_field(require(j, "field", path), join(path, "field"));
  return s;
}

json scene_json(const SpinSystem& s) {
  json j;
  j["nv_position_nm"] = vec_json(s.nv_position);
  j["nv_axis"] = vec_json(s.nv_axis);
  j["surface_z_nm"] = s.surface_z;
  j["surface_tolerance_nm"] = s.surface_tolerance;
  j["reporters_nm"] = json::array();
  for (const auto& v : s.reporter_sites) j["reporters_nm"].push_back(vec_json(v));
  j["protons_nm"] = json::array();
  for (const auto& v : s.proton_sites) j["protons_nm"].push_back(vec_json(v));
  j["field"] = field_json(s.field);
  return j;
}

DecoherenceParams as_decoherence(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError("field '" + path + "' must be an object");
  DecoherenceParams d;
  optional_field(j, "t2_nv", path, d.t2_nv, as_number);
  optional_field(j, "t2_s", path, d.t2_s, as_number);
  optional_field(j, "t1_s", path, d.t1_s, as_number);
  optional_field(j, "rabi_decay", path, d.rabi_decay, as_number);
  optional_field(j, "stretch", path, d.stretch_exponent, as_number);
  try {
    d.validate();
  } catch (const DomainError& e) {
    throw SchemaError("field '" + path + "': " + e.what());
  }
  return d;
}

json decoherence_json(const DecoherenceParams& d) {
  return {{"t2_nv", number_json(d.t2_nv)},         {"t2_s", number_json(d.t2_s)},
          {"t1_s", number_json(d.t1_s)},           {"rabi_decay", number_json(d.rabi_decay)},
          {"stretch", number_json(d.stretch_exponent)}};
}

NoiseModel as_noise(const json& j, const std::string& path) {
  NoiseModel n;
  optional_field(j, "repetitions", path, n.repetitions, as_number);
  optional_field(j, "contrast", path, n.contrast, as_number);
  optional_field(j, "photons_per_readout", path, n.photons_per_readout, as_number);
  try {
    n.validate();
  } catch (const DomainError& e) {
    throw SchemaError("field '" + path + "': " + e.what());
  }
  return n;
}

OracleSpec as_oracle(const json& j, const std::string& path) {
  OracleSpec o;
  optional_field(j, "sequence", path, o.sequence, as_string);
  if (o.sequence != "echo" && o.sequence != "deer" && o.sequence != "rabi" && o.sequence != "empty") {
    throw SchemaError("field '" + join(path, "sequence") + "' must be echo, deer, rabi or empty");
  }
  optional_field(j, "include_nv", path, o.include_nv, as_bool);
  optional_field(j, "flip_prob", path, o.flip_prob, as_number);
  if (auto it = j.find("flip_model"); it != j.end()) {
    const auto s = as_string(*it, join(path, "flip_model"));
    if (s == "rotation") o.flip_model = FlipModel::rotation;
    else if (s == "mixture") o.flip_model = FlipModel::mixture;
    else throw SchemaError("field '" + join(path, "flip_model") + "' must be rotation or mixture");
  }
  if (auto it = j.find("frame"); it != j.end()) {
    const auto s = as_string(*it, join(path, "frame"));
    if (s == "rotating") o.frame = Frame::rotating;
    else if (s == "lab") o.frame = Frame::lab;
    else throw SchemaError("field '" + join(path, "frame") + "' must be rotating or lab");
  }
  if (auto it = j.find("electron"); it != j.end() && !it->is_null()) o.electron = as_count(*it, join(path, "electron"));
  optional_field(j, "rabi_freq", path, o.rabi_freq, as_number);
  optional_field(j, "drop_reporter_couplings", path, o.drop_reporter_couplings, as_bool);
  if (auto it = j.find("couplings"); it != j.end()) {
    if (!it->is_array()) throw SchemaError("field '" + join(path, "couplings") + "' must be a list");
    for (std::size_t k = 0; k < it->size(); ++k) {
      const auto& c = (*it)[k];
      const auto p = join(path, "couplings[" + std::to_string(k) + "]");
      PairCoupling pc;
      pc.i = as_count(require(c, "i", p), join(p, "i"));
      pc.j = as_count(require(c, "j", p), join(p, "j"));
      optional_field(c, "zz", p, pc.zz, as_number);
      optional_field(c, "zx", p, pc.zx, as_number);
      optional_field(c, "flip_flop", p, pc.flip_flop, as_bool);
      o.couplings.push_back(pc);
    }
  }
  return o;
}

json oracle_json(const OracleSpec& o) {
  json j{{"sequence", o.sequence},
         {"include_nv", o.include_nv},
         {"flip_prob", o.flip_prob},
         {"flip_model", o.flip_model == FlipModel::rotation ? "rotation" : "mixture"},
         {"frame", o.frame == Frame::rotating ? "rotating" : "lab"},
         {"rabi_freq", o.rabi_freq},
         {"drop_reporter_couplings", o.drop_reporter_couplings},
         {"couplings", json::array()}};
  j["electron"] = o.electron ? json(*o.electron) : json(nullptr);
  for (const auto& c : o.couplings) {
    j["couplings"].push_back({{"i", c.i}, {"j", c.j}, {"zz", c.zz}, {"zx", c.zx}, {"flip_flop", c.flip_flop}});
  }
  return j;
}

FitSpec as_fit(const json& j, const std::string& path) {
  FitSpec f;
  optional_field(j, "init", path, f.init, as_param_map);
  optional_field(j, "fixed", path, f.fixed, as_param_map);
  if (auto it = j.find("bounds"); it != j.end()) {
    if (!it->is_object()) throw SchemaError("field '" + join(path, "bounds") + "' must be an object");
    for (auto b = it->begin(); b != it->end(); ++b) f.bounds[b.key()] = as_interval(b.value(), join(path, "bounds." + b.key()));
  }
  optional_field(j, "lattice_points", path, f.lattice_points, as_count);
  optional_field(j, "random_starts", path, f.random_starts, as_count);
  return f;
}

json fit_spec_json(const FitSpec& f) {
  json b = json::object();
  for (const auto& [k, v] : f.bounds) b[k] = json::array({number_json(v.lo), number_json(v.hi)});
  return {{"init", param_json(f.init)},
          {"fixed", param_json(f.fixed)},
          {"bounds", b},
          {"lattice_points", f.lattice_points},
          {"random_starts", f.random_starts}};
}

ReporterLocalizationConfig as_localize(const json& j, const std::string& path) {
  ReporterLocalizationConfig l;
  optional_field(j, "x", path, l.x, as_axis);
  optional_field(j, "y", path, l.y, as_axis);
  optional_field(j, "nv_depth", path, l.nv_depth, as_number);
  if (auto it = j.find("depth_range"); it != j.end() && !it->is_null()) l.depth_range = as_interval(*it, join(path, "depth_range"));
  optional_field(j, "n_spins", path, l.n_spins, as_count);
  optional_field(j, "flip_prob", path, l.flip_prob, as_number);
  optional_field(j, "starts_per_spin", path, l.starts_per_spin, as_count);
  optional_field(j, "jitter_nm", path, l.jitter_nm, as_number);
  optional_field(j, "max_evaluations", path, l.max_evaluations, as_count);
  optional_field(j, "threads", path, l.threads, as_count);
  return l;
}

json localize_json(const ReporterLocalizationConfig& l) {
  json j{{"x", axis_json(l.x)},
         {"y", axis_json(l.y)},
         {"nv_depth", l.nv_depth},
         {"n_spins", l.n_spins},
         {"flip_prob", l.flip_prob},
         {"starts_per_spin", l.starts_per_spin},
         {"jitter_nm", l.jitter_nm},
         {"max_evaluations", l.max_evaluations},
         {"threads", l.threads}};
  j["depth_range"] = l.depth_range ? json::array({l.depth_range->lo, l.depth_range->hi}) : json(nullptr);
  return j;
}

ProtonSpec as_protons(const json& j, const std::string& path) {
  ProtonSpec p;
  p.hyperfine.a = as_number(require(j, "a", path), join(path, "a"));
  p.hyperfine.b = as_number(require(j, "b", path), join(path, "b"));
  optional_field(j, "sigma_a", path, p.sigma_a, as_number);
  optional_field(j, "sigma_b", path, p.sigma_b, as_number);
  optional_field(j, "correlation", path, p.correlation, as_number);
  optional_field(j, "a0_range", path, p.a0_range, as_interval);
  optional_field(j, "samples", path, p.samples, as_count);
  if (p.sigma_a < 0 || p.sigma_b < 0 || std::abs(p.correlation) > 1.0) {
    throw SchemaError("field '" + path + "': sigmas must be non-negative and |correlation| <= 1");
  }
  return p;
}

json protons_json(const ProtonSpec& p) {
  return {{"a", p.hyperfine.a},         {"b", p.hyperfine.b},
          {"sigma_a", p.sigma_a},       {"sigma_b", p.sigma_b},
          {"correlation", p.correlation}, {"a0_range", json::array({p.a0_range.lo, p.a0_range.hi})},
          {"samples", p.samples}};
}

ExperimentConfig config_from_json(const json& root) {
  if (!root.is_object()) throw SchemaError("config root must be an object");
  if (root.contains("resolved_config")) return config_from_json(root["resolved_config"]);

  ExperimentConfig c;
  const auto& ver = require(root, "version", "");
  if (!ver.is_number_integer()) throw SchemaError("field 'version' must be an integer");
  c.version = ver.get<int>();
  if (c.version != kConfigVersion) {
    throw SchemaError("config version " + std::to_string(c.version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  if (auto it = root.find("seed"); it != root.end()) c.seed = as_count(*it, "seed");
  if (auto it = root.find("scene"); it != root.end()) c.scene = as_scene(*it, "scene");
  if (auto it = root.find("model"); it != root.end()) {
    c.model.id = as_string(require(*it, "id", "model"), "model.id");
    optional_field(*it, "params", "model", c.model.params, as_param_map);
  }
  if (auto it = root.find("decoherence"); it != root.end()) c.decoherence = as_decoherence(*it, "decoherence");
  if (auto it = root.find("grid"); it != root.end()) {
    c.grid.start = as_number(require(*it, "start", "grid"), "grid.start");
    c.grid.stop = as_number(require(*it, "stop", "grid"), "grid.stop");
    c.grid.points = as_count(require(*it, "points", "grid"), "grid.points");
    if (c.grid.points < 2 || !(c.grid.stop > c.grid.start)) throw SchemaError("field 'grid' needs stop > start and points >= 2");
  }
  if (auto it = root.find("noise"); it != root.end() && !it->is_null()) c.noise = as_noise(*it, "noise");
  if (auto it = root.find("oracle"); it != root.end()) c.oracle = as_oracle(*it, "oracle");
  if (auto it = root.find("angles"); it != root.end()) {
    if (!it->is_array()) throw SchemaError("field 'angles' must be a list");
    for (std::size_t k = 0; k < it->size(); ++k) {
      const auto p = "angles[" + std::to_string(k) + "]";
      AngleSpec a;
      a.polar_deg = as_number(require((*it)[k], "polar_deg", p), p + ".polar_deg");
      optional_field((*it)[k], "azimuth_deg", p, a.azimuth_deg, as_number);
      c.angles.push_back(a);
    }
  }
  if (auto it = root.find("scan"); it != root.end()) {
    const auto& f = require(*it, "fields_gauss", "scan");
    if (!f.is_array()) throw SchemaError("field 'scan.fields_gauss' must be a list");
    for (std::size_t k = 0; k < f.size(); ++k) c.scan.fields_gauss.push_back(as_number(f[k], "scan.fields_gauss"));
    optional_field(*it, "relative_noise", "scan", c.scan.relative_noise, as_number);
  }
  if (auto it = root.find("fit"); it != root.end()) c.fit = as_fit(*it, "fit");
  if (auto it = root.find("localize"); it != root.end()) c.localize = as_localize(*it, "localize");
  if (auto it = root.find("protons"); it != root.end()) c.protons = as_protons(*it, "protons");
  c.localize.decoherence = c.decoherence;
  c.localize.seed = c.seed;
  return c;
}

json config_json(const ExperimentConfig& c) {
  json j{{"version", c.version},
         {"seed", c.seed},
         {"scene", scene_json(c.scene)},
         {"model", {{"id", c.model.id}, {"params", param_json(c.model.params)}}},
         {"decoherence", decoherence_json(c.decoherence)},
         {"grid", {{"start", c.grid.start}, {"stop", c.grid.stop}, {"points", c.grid.points}}},
         {"oracle", oracle_json(c.oracle)},
         {"angles", json::array()},
         {"scan", {{"fields_gauss", c.scan.fields_gauss}, {"relative_noise", c.scan.relative_noise}}},
         {"fit", fit_spec_json(c.fit)},
         {"localize", localize_json(c.localize)}};
  if (c.noise) {
    j["noise"] = {{"repetitions", c.noise->repetitions},
                  {"contrast", c.noise->contrast},
                  {"photons_per_readout", c.noise->photons_per_readout}};
  }
  for (const auto& a : c.angles) j["angles"].push_back({{"polar_deg", a.polar_deg}, {"azimuth_deg", a.azimuth_deg}});
  if (c.protons) j["protons"] = protons_json(*c.protons);
  return j;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Reads "# key=value" header lines; the first header token names the kind.
std::map<std::string, std::string> read_header(std::istream& in, const std::string& kind, const std::string& source,
                                               std::size_t& line_no, std::string& first_data) {
  std::map<std::string, std::string> meta;
  std::string line;
  bool tagged = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (line[0] != '#') {
      first_data = line;
      break;
    }
    std::istringstream tokens(line.substr(1));
    std::string tok;
    while (tokens >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) {
        if (tok == kind) tagged = true;
        continue;
      }
      meta[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  const std::string where = source + ": line " + std::to_string(line_no);
  if (!tagged) throw SchemaError(source + ": not a " + kind + " file");
  auto v = meta.find("version");
  if (v == meta.end()) throw SchemaError(source + ": missing required field 'version'");
  if (v->second != std::to_string(kFileVersion)) {
    throw SchemaError(source + ": " + kind + " version " + v->second + " is not supported");
  }
  if (first_data.empty()) throw SchemaError(where + ": missing column header");
  return meta;
}

}  // namespace

// Noise -----------------------------------------------------------------------

double NoiseModel::sigma() const {
  validate();
  return 1.0 / (contrast * std::sqrt(repetitions * photons_per_readout));
}

void NoiseModel::validate() const {
  if (!(repetitions > 0.0) || !(contrast > 0.0 && contrast <= 1.0) || !(photons_per_readout > 0.0)) {
    throw DomainError("noise model needs repetitions > 0, contrast in (0, 1], photons_per_readout > 0");
  }
}

SignalTrace synthesize_trace(const SignalTrace& model, const NoiseModel& noise, std::uint64_t seed) {
  const double s = noise.sigma();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SignalTrace out = model;
  out.sigma.assign(model.size(), s);
  for (auto& v : out.signal) v += s * gauss(rng);
  return out;
}

std::vector<double> GridSpec::values() const { return linspace(start, stop, points); }

// Config ------------------------------------------------------------------------

ExperimentConfig parse_config(const std::string& text) { return config_from_json(parse_json(text, "config")); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return config_from_json(parse_json(text, path.string()));
  } catch (const SchemaError& e) {
    const std::string what = e.what();
    if (what.rfind(path.string(), 0) == 0) throw;
    throw SchemaError(path.string() + ": " + what);
  }
}

std::string config_to_json(const ExperimentConfig& config) { return config_json(config).dump(2) + "\n"; }

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  write_file(path, config_to_json(config));
}

// Traces ----------------------------------------------------------------------------

void save_trace(const std::filesystem::path& path, const SignalTrace& trace,
                const std::map<std::string, std::string>& metadata) {
  const auto units = metadata.find("signal_units");
  trace.validate(units == metadata.end() || units->second == "normalized");
  std::ostringstream out;
  out << "# qreporter-trace version=" << kFileVersion << "\n";
  std::map<std::string, std::string> meta = metadata;
  meta.try_emplace("abscissa_units", "us");
  meta.try_emplace("signal_units", "normalized");
  for (const auto& [k, v] : meta) {
    if (k == "version") continue;
    if (k.find_first_of(" =\n") != std::string::npos || v.find_first_of(" \n") != std::string::npos) {
      throw SchemaError("trace metadata '" + k + "' must not contain spaces");
    }
    out << "# " << k << "=" << v << "\n";
  }
  out << (trace.has_sigma() ? "abscissa,signal,sigma\n" : "abscissa,signal\n");
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << fmt(trace.abscissa[i]) << "," << fmt(trace.signal[i]);
    if (trace.has_sigma()) out << "," << fmt(trace.sigma[i]);
    out << "\n";
  }
  write_file(path, out.str());
}

TraceFile load_trace(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const auto source = path.string();
  std::size_t line_no = 0;
  std::string header;
  TraceFile tf;
  tf.metadata = read_header(in, "qreporter-trace", source, line_no, header);
  tf.metadata.try_emplace("abscissa_units", "us");
  tf.metadata.try_emplace("signal_units", "normalized");
  const auto cols = split(header, ',');
  const bool with_sigma = cols.size() == 3 && trim(cols[2]) == "sigma";
  if (cols.size() < 2 || trim(cols[0]) != "abscissa" || trim(cols[1]) != "signal" || (cols.size() == 3 && !with_sigma) ||
      cols.size() > 3) {
    throw SchemaError(source + ": line " + std::to_string(line_no) + ": expected columns abscissa,signal[,sigma]");
  }
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto f = split(line, ',');
    const std::string where = source + ": line " + std::to_string(line_no);
    if (f.size() != cols.size()) throw SchemaError(where + ": expected " + std::to_string(cols.size()) + " columns");
    tf.trace.abscissa.push_back(parse_double(trim(f[0]), where));
    tf.trace.signal.push_back(parse_double(trim(f[1]), where));
    if (with_sigma) tf.trace.sigma.push_back(parse_double(trim(f[2]), where));
  }
  try {
    tf.trace.validate(tf.metadata.at("signal_units") == "normalized");
  } catch (const Error& e) {
    throw SchemaError(source + ": " + e.what());
  }
  return tf;
}

// Fits ------------------------------------------------------------------------------

std::string fit_to_json(const FitResult& fit) {
  json j{{"format", "qreporter-fit"},
         {"version", kFileVersion},
         {"model", fit.model},
         {"names", fit.names},
         {"values", json::array()},
         {"errors", json::array()},
         {"covariance", json::array()},
         {"fixed", param_json(fit.fixed)},
         {"chi2", number_json(fit.chi2)},
         {"reduced_chi2", number_json(fit.reduced_chi2)},
         {"dof", fit.dof},
         {"converged", fit.converged},
         {"singular_jacobian", fit.singular_jacobian}};
  for (Eigen::Index i = 0; i < fit.values.size(); ++i) {
    j["values"].push_back(number_json(fit.values(i)));
    j["errors"].push_back(number_json(std::sqrt(fit.covariance(i, i))));
    json row = json::array();
    for (Eigen::Index k = 0; k < fit.covariance.cols(); ++k) row.push_back(number_json(fit.covariance(i, k)));
    j["covariance"].push_back(row);
  }
  return j.dump(2) + "\n";
}

FitResult fit_from_json(const std::string& text) {
  const json j = parse_json(text, "fit");
  if (!j.is_object() || j.value("format", "") != "qreporter-fit") throw SchemaError("not a qreporter-fit document");
  const auto& ver = require(j, "version", "");
  if (!ver.is_number_integer() || ver.get<int>() != kFileVersion) throw SchemaError("fit version is not supported");
  FitResult f;
  f.model = as_string(require(j, "model", ""), "model");
  const auto& names = require(j, "names", "");
  const auto& values = require(j, "values", "");
  const auto& cov = require(j, "covariance", "");
  if (!names.is_array() || !values.is_array() || !cov.is_array() || values.size() != names.size() ||
      cov.size() != names.size()) {
    throw SchemaError("fields 'names', 'values', 'covariance' must be lists of equal length");
  }
  const auto n = static_cast<Eigen::Index>(names.size());
  f.values.resize(n);
  f.covariance.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    f.names.push_back(as_string(names[static_cast<std::size_t>(i)], "names"));
    f.values(i) = as_number(values[static_cast<std::size_t>(i)], "values");
    const auto& row = cov[static_cast<std::size_t>(i)];
    if (!row.is_array() || row.size() != names.size()) throw SchemaError("field 'covariance' must be square");
    for (Eigen::Index k = 0; k < n; ++k) f.covariance(i, k) = as_number(row[static_cast<std::size_t>(k)], "covariance");
  }
  optional_field(j, "fixed", "", f.fixed, as_param_map);
  f.chi2 = as_number(require(j, "chi2", ""), "chi2");
  f.reduced_chi2 = as_number(require(j, "reduced_chi2", ""), "reduced_chi2");
  f.dof = as_count(require(j, "dof", ""), "dof");
  f.converged = as_bool(require(j, "converged", ""), "converged");
  optional_field(j, "singular_jacobian", "", f.singular_jacobian, as_bool);
  return f;
}

void save_fit(const std::filesystem::path& path, const FitResult& fit) { write_file(path, fit_to_json(fit)); }

FitResult load_fit(const std::filesystem::path& path) {
  try {
    return fit_from_json(read_file(path));
  } catch (const SchemaError& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

// Maps ------------------------------------------------------------------------------

void save_map(const std::filesystem::path& path, const ProbabilityMap& map) {
  if (map.density.size() != map.x.n * map.y.n) throw DimensionError("map density does not match its grid");
  std::ostringstream out;
  out << "# qreporter-map version=" << kFileVersion << "\n";
  out << "# x_label=" << map.x_label << " y_label=" << map.y_label << " units=" << map.units << "\n";
  out << "# x_lo=" << fmt(map.x.lo) << " x_hi=" << fmt(map.x.hi) << " x_n=" << map.x.n << "\n";
  out << "# y_lo=" << fmt(map.y.lo) << " y_hi=" << fmt(map.y.hi) << " y_n=" << map.y.n << "\n";
  out << "x,y,density\n";
  for (std::size_t iy = 0; iy < map.y.n; ++iy) {
    for (std::size_t ix = 0; ix < map.x.n; ++ix) {
      out << fmt(map.x.center(ix)) << "," << fmt(map.y.center(iy)) << "," << fmt(map.at(ix, iy)) << "\n";
    }
  }
  write_file(path, out.str());
}

ProbabilityMap load_map(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const auto source = path.string();
  std::size_t line_no = 0;
  std::string header;
  const auto meta = read_header(in, "qreporter-map", source, line_no, header);
  auto get = [&](const std::string& k) {
    auto it = meta.find(k);
    if (it == meta.end()) throw SchemaError(source + ": missing required field '" + k + "'");
    return it->second;
  };
  auto count = [&](const std::string& k) {
    const double v = parse_double(get(k), source + ": " + k);
    if (!(v >= 1.0) || v != std::floor(v)) throw SchemaError(source + ": field '" + k + "' must be a positive integer");
    return static_cast<std::size_t>(v);
  };
  GridAxis x{parse_double(get("x_lo"), source), parse_double(get("x_hi"), source), count("x_n")};
  GridAxis y{parse_double(get("y_lo"), source), parse_double(get("y_hi"), source), count("y_n")};
  ProbabilityMap m(x, y);
  m.x_label = get("x_label");
  m.y_label = get("y_label");
  m.units = get("units");
  if (trim(header) != "x,y,density") throw SchemaError(source + ": line " + std::to_string(line_no) + ": expected x,y,density");
  std::size_t k = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const std::string where = source + ": line " + std::to_string(line_no);
    const auto f = split(line, ',');
    if (f.size() != 3) throw SchemaError(where + ": expected 3 columns");
    if (k >= m.density.size()) throw SchemaError(where + ": more rows than the grid holds");
    const double px = parse_double(trim(f[0]), where), py = parse_double(trim(f[1]), where);
    const std::size_t ix = k % x.n, iy = k / x.n;
    if (std::abs(px - x.center(ix)) > 1e-9 * std::max(1.0, std::abs(px)) ||
        std::abs(py - y.center(iy)) > 1e-9 * std::max(1.0, std::abs(py))) {
      throw SchemaError(where + ": row is out of grid order");
    }
    m.density[k++] = parse_double(trim(f[2]), where);
  }
  if (k != m.density.size()) throw SchemaError(source + ": map has " + std::to_string(k) + " rows, grid needs " +
                                               std::to_string(m.density.size()));
  return m;
}

// Datasets ----------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& manifest, const MultiAngleDataset& data,
                  const std::map<std::string, std::string>& metadata) {
  const auto dir = manifest.parent_path();
  const auto stem = manifest.stem().string();
  json j{{"format", "qreporter-dataset"}, {"version", kFileVersion}, {"traces", json::array()}};
  for (std::size_t i = 0; i < data.traces.size(); ++i) {
    const std::string file = stem + ".angle" + std::to_string(i) + ".csv";
    auto meta = metadata;
    meta["field_gauss"] = fmt(data.traces[i].field.magnitude());
    const auto& d = data.traces[i].field.direction();
    meta["field_direction"] = fmt(d.x()) + "," + fmt(d.y()) + "," + fmt(d.z());
    save_trace(dir / file, data.traces[i].trace, meta);
    j["traces"].push_back({{"file", file}, {"field", field_json(data.traces[i].field)}});
  }
  write_file(manifest, j.dump(2) + "\n");
}

MultiAngleDataset load_dataset(const std::filesystem::path& manifest) {
  const json j = parse_json(read_file(manifest), manifest.string());
  if (!j.is_object() || j.value("format", "") != "qreporter-dataset") {
    throw SchemaError(manifest.string() + ": not a qreporter-dataset manifest");
  }
  const auto& ver = require(j, "version", "");
  if (!ver.is_number_integer() || ver.get<int>() != kFileVersion) throw SchemaError("dataset version is not supported");
  const auto& traces = require(j, "traces", "");
  if (!traces.is_array()) throw SchemaError("field 'traces' must be a list");
  MultiAngleDataset out;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto p = "traces[" + std::to_string(i) + "]";
    const auto file = as_string(require(traces[i], "file", p), p + ".file");
    AngleTrace at{as_field(require(traces[i], "field", p), p + ".field"),
                  load_trace(manifest.parent_path() / file).trace};
    out.traces.push_back(std::move(at));
  }
  return out;
}

void save_manifest(const std::filesystem::path& path, const RunManifest& m) {
  json j{{"format", "qreporter-run"},
         {"command", m.command},
         {"seed", m.seed},
         {"constants_version", m.constants_version},
         {"outputs", m.outputs},
         {"wall_time_s", m.wall_time_s},
         {"resolved_config", config_json(m.config)}};
  write_file(path, j.dump(2) + "\n");
}

}  // namespace qreporter
