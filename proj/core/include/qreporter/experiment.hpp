#pragma once

#include "qreporter/io.hpp"

namespace qreporter {

/// Model parameters resolved against the scene: omega_n defaults to the
/// proton Larmor frequency, a/b to the couplings of the first reporter and
/// proton sites when the scene has them.
std::map<std::string, double> resolve_model_params(const ExperimentConfig& config,
                                                   const PhysicalConstants& c = default_constants());

/// Noiseless analytic trace of `config.model` over `config.grid`.
SignalTrace simulate_model(const ExperimentConfig& config, const PhysicalConstants& c = default_constants());

/// Density-matrix trace of the configured oracle sequence.
SignalTrace simulate_oracle(const ExperimentConfig& config, const PhysicalConstants& c = default_constants());

/// Analytic counterpart of the oracle sequence, for side-by-side comparison.
SignalTrace simulate_oracle_reference(const ExperimentConfig& config,
                                      const PhysicalConstants& c = default_constants());

/// Noisy DEER traces, one per configured field angle, magnitude from the scene.
MultiAngleDataset synthesize_angles(const ExperimentConfig& config, const PhysicalConstants& c = default_constants());

/// Synthetic proton Larmor measurements at the scan fields.
std::vector<FieldPoint> synthesize_field_scan(const ExperimentConfig& config,
                                              const PhysicalConstants& c = default_constants());

}  // namespace qreporter
