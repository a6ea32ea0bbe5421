#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qreporter/fit.hpp"
#include "qreporter/localize.hpp"
#include "qreporter/oracle.hpp"
#include "qreporter/signals.hpp"

namespace qreporter {

inline constexpr int kConfigVersion = 1;
inline constexpr int kFileVersion = 1;

/// Photon shot noise per point: sigma = 1 / (contrast sqrt(repetitions photons_per_readout)).
/// The defaults are calibration knobs, not measured values.
struct NoiseModel {
  double repetitions = 5e6;
  double contrast = 0.03;
  double photons_per_readout = 0.02;

  double sigma() const;
  void validate() const;
};

/// Adds independent Gaussian noise and fills `sigma`. Same seed, same bytes.
SignalTrace synthesize_trace(const SignalTrace& model, const NoiseModel& noise, std::uint64_t seed);

// Configuration -------------------------------------------------------------

struct GridSpec {
  double start = 0.0;
  double stop = 1.0;
  std::size_t points = 200;
  std::vector<double> values() const;
};

struct ModelSpec {
  std::string id;  // a trace model id or "deer"
  std::map<std::string, double> params;
};

struct OracleSpec {
  std::string sequence = "echo";  // echo | deer | rabi | empty
  bool include_nv = true;
  double flip_prob = 1.0;
  FlipModel flip_model = FlipModel::rotation;
  Frame frame = Frame::rotating;
  std::optional<std::size_t> electron;  // echo/rabi target among oracle spins; first electron if unset
  double rabi_freq = 1.0;
  bool drop_reporter_couplings = false;
  std::vector<PairCoupling> couplings;  // applied after derivation
};

struct FitSpec {
  std::map<std::string, double> init;
  std::map<std::string, Interval> bounds;
  std::map<std::string, double> fixed;
  std::size_t lattice_points = 1;
  std::size_t random_starts = 0;
};

struct ScanSpec {
  std::vector<double> fields_gauss;
  double relative_noise = 0.03;
};

struct ProtonSpec {
  HyperfineParams hyperfine;
  double sigma_a = 0.0;
  double sigma_b = 0.0;
  double correlation = 0.0;
  Interval a0_range{0.0, 0.0};
  std::size_t samples = 20000;
};

struct AngleSpec {
  double polar_deg = 0.0;
  double azimuth_deg = 0.0;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 1;
  SpinSystem scene;
  ModelSpec model;
  DecoherenceParams decoherence;
  GridSpec grid;
  std::optional<NoiseModel> noise;
  OracleSpec oracle;
  std::vector<AngleSpec> angles;
  ScanSpec scan;
  FitSpec fit;
  ReporterLocalizationConfig localize;
  std::optional<ProtonSpec> protons;
};

/// Throws SchemaError naming the offending field, or the line for malformed
/// text, and on version mismatch. A run manifest is accepted in place of a
/// config; its resolved config is used.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);
std::string config_to_json(const ExperimentConfig& config);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

// Traces --------------------------------------------------------------------

struct TraceFile {
  SignalTrace trace;
  std::map<std::string, std::string> metadata;  // key=value header entries
};

/// Header lines "# key=value", then columns abscissa,signal[,sigma].
void save_trace(const std::filesystem::path& path, const SignalTrace& trace,
                const std::map<std::string, std::string>& metadata = {});
TraceFile load_trace(const std::filesystem::path& path);

// Fits and maps -------------------------------------------------------------

std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);
void save_fit(const std::filesystem::path& path, const FitResult& fit);
FitResult load_fit(const std::filesystem::path& path);

void save_map(const std::filesystem::path& path, const ProbabilityMap& map);
ProbabilityMap load_map(const std::filesystem::path& path);

// Multi-angle datasets --------------------------------------------------------

/// Writes one trace per angle next to `manifest` plus a JSON index.
void save_dataset(const std::filesystem::path& manifest, const MultiAngleDataset& data,
                  const std::map<std::string, std::string>& metadata = {});
MultiAngleDataset load_dataset(const std::filesystem::path& manifest);

// Run manifest ----------------------------------------------------------------

struct RunManifest {
  std::string command;
  ExperimentConfig config;
  std::uint64_t seed = 0;
  std::string constants_version;
  std::vector<std::string> outputs;
  double wall_time_s = 0.0;
};

void save_manifest(const std::filesystem::path& path, const RunManifest& manifest);

}  // namespace qreporter
