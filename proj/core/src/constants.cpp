#include "qreporter/constants.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

// rad/(s T) per rad/(us G): 1 G = 1e-4 T, 1 us = 1e-6 s.
constexpr double kGammaToSI = 1e6 * 1e4;
// m^3/s -> nm^3/us
constexpr double kVolumeRateToInternal = 1e27 / 1e6;

double dipolar_prefactor(double gamma1, double gamma2) {
  return kMu0Over4PiSI * kHbarSI * (gamma1 * kGammaToSI) * (gamma2 * kGammaToSI) *
         kVolumeRateToInternal;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

PhysicalConstants PhysicalConstants::from_frequencies(double delta_nv_mhz, double gamma_e_mhz_per_g,
                                                      double gamma_p_khz_per_g,
                                                      std::string version) {
  if (!(delta_nv_mhz > 0) || !(gamma_e_mhz_per_g > 0) || !(gamma_p_khz_per_g > 0)) {
    throw DomainError("constants must be positive");
  }
  PhysicalConstants c;
  c.version = std::move(version);
  c.delta_nv = kTwoPi * delta_nv_mhz;
  c.gamma_e = kTwoPi * gamma_e_mhz_per_g;
  c.gamma_p = kTwoPi * gamma_p_khz_per_g * 1e-3;
  c.k_ee = dipolar_prefactor(c.gamma_e, c.gamma_e);
  c.k_ep = dipolar_prefactor(c.gamma_e, c.gamma_p);
  return c;
}

const PhysicalConstants& default_constants() {
  static const PhysicalConstants c = PhysicalConstants::from_frequencies(2870.0, 2.8, 4.26, "1");
  return c;
}

PhysicalConstants PhysicalConstants::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open constants file " + path.string());

  std::map<std::string, double> values;
  std::string version;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "version") {
      version = val;
      continue;
    }
    try {
      std::size_t used = 0;
      values[key] = std::stod(val, &used);
      if (used != val.size()) throw std::invalid_argument(val);
    } catch (const std::exception&) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": field '" + key +
                        "' is not a number");
    }
  }

  if (version.empty()) throw SchemaError(path.string() + ": missing required field 'version'");
  if (version != "1") {
    throw SchemaError(path.string() + ": unsupported constants version '" + version + "'");
  }
  for (const char* key : {"delta_nv_mhz", "gamma_e_mhz_per_g", "gamma_p_khz_per_g"}) {
    if (!values.count(key)) {
      throw SchemaError(path.string() + ": missing required field '" + std::string(key) + "'");
    }
  }

  auto c = from_frequencies(values["delta_nv_mhz"], values["gamma_e_mhz_per_g"],
                            values["gamma_p_khz_per_g"], version);
  for (auto [key, derived] : {std::pair{"k_ee", c.k_ee}, std::pair{"k_ep", c.k_ep}}) {
    if (auto it = values.find(key); it != values.end()) {
      if (std::abs(it->second - derived) > 1e-9 * std::abs(derived)) {
        std::ostringstream msg;
        msg << path.string() << ": stored " << key << " = " << it->second
            << " disagrees with derived value " << std::setprecision(15) << derived;
        throw SchemaError(msg.str());
      }
    }
  }
  return c;
}

void PhysicalConstants::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write constants file " + path.string());
  out << std::setprecision(17);
  out << "# qreporter physical constants (internal units: rad/us, G, nm)\n";
  out << "version = " << version << "\n";
  out << "delta_nv_mhz = " << delta_nv / kTwoPi << "\n";
  out << "gamma_e_mhz_per_g = " << gamma_e / kTwoPi << "\n";
  out << "gamma_p_khz_per_g = " << gamma_p / kTwoPi * 1e3 << "\n";
  out << "k_ee = " << k_ee << "\n";
  out << "k_ep = " << k_ep << "\n";
}

PhysicalConstants constants_from_environment() {
  if (const char* env = std::getenv("QREPORTER_CONSTANTS"); env && *env) {
    return PhysicalConstants::load(env);
  }
  return default_constants();
}

}  // namespace qreporter
