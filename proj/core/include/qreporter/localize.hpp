#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qreporter/errors.hpp"
#include "qreporter/signals.hpp"

namespace qreporter {

/// Uniform cell-centred axis: `n` cells spanning [lo, hi].
struct GridAxis {
  double lo = 0.0;
  double hi = 1.0;
  std::size_t n = 1;

  static GridAxis with_step(double lo, double hi, double step);
  double step() const noexcept { return (hi - lo) / static_cast<double>(n); }
  double center(std::size_t i) const noexcept { return lo + (static_cast<double>(i) + 0.5) * step(); }
  /// Cell containing x, or nullopt outside the axis.
  std::optional<std::size_t> cell_of(double x) const noexcept;
};

/// Normalized probability mass per grid cell (row-major, x fastest).
struct ProbabilityMap {
  GridAxis x;
  GridAxis y;
  std::string x_label = "x";
  std::string y_label = "y";
  std::string units = "nm";
  std::vector<double> density;

  ProbabilityMap() = default;
  ProbabilityMap(GridAxis x_axis, GridAxis y_axis);

  double& at(std::size_t ix, std::size_t iy) { return density[iy * x.n + ix]; }
  double at(std::size_t ix, std::size_t iy) const { return density[iy * x.n + ix]; }

  double total() const;
  void normalize();
  std::pair<std::size_t, std::size_t> argmax() const;
  Eigen::Vector2d argmax_position() const;

  /// Highest-density region holding at least `mass` of the probability.
  std::vector<bool> credible_mask(double mass) const;
  bool in_credible_region(double px, double py, double mass) const;
  /// Area (units^2) of the highest-density region.
  double credible_area(double mass) const;

  /// density_i proportional to exp(log_weight_i), computed stably.
  static ProbabilityMap from_log_weights(GridAxis x_axis, GridAxis y_axis, const std::vector<double>& log_weight);
};

// Reporter localization from multi-angle DEER --------------------------------

struct AngleTrace {
  FieldSetting field;
  SignalTrace trace;
};

struct MultiAngleDataset {
  std::vector<AngleTrace> traces;
  /// At least two distinct field directions, sigma present everywhere.
  void validate() const;
};

struct ReporterLocalizationConfig {
  GridAxis x = GridAxis::with_step(-8.0, 8.0, 0.5);
  GridAxis y = GridAxis::with_step(-8.0, 8.0, 0.5);
  double nv_depth = 3.0;                  // nm below the surface plane
  std::optional<Interval> depth_range;    // profile the depth over this interval
  std::size_t n_spins = 1;
  double flip_prob = 1.0;
  DecoherenceParams decoherence;
  std::size_t starts_per_spin = 5;        // jittered restarts per nuisance spin
  double jitter_nm = 1.0;
  std::size_t max_evaluations = 0;        // 0: unlimited
  std::uint64_t seed = 1;
  std::size_t threads = 0;                // 0: hardware concurrency
};

struct ReporterLocalization {
  std::vector<ProbabilityMap> spin_maps;  // one profile map per scanned spin
  ProbabilityMap combined;                // superposition, normalized
  std::vector<Vec3> sites;                // best-fit positions (NV at origin)
  double depth = 0.0;
  double chi2_min = 0.0;
  std::size_t dof = 0;
  std::size_t evaluations = 0;
  bool partial = false;                   // budget ran out; unvisited cells are zero
};

/// Thrown when the evaluation budget runs out; carries the partial result.
class LocalizationBudgetError : public ConvergenceError {
 public:
  LocalizationBudgetError(const std::string& what, ReporterLocalization partial)
      : ConvergenceError(what), partial_(std::move(partial)) {}
  const ReporterLocalization& partial() const noexcept { return partial_; }

 private:
  ReporterLocalization partial_;
};

/// Chi-squared of a reporter configuration against every trace in the set.
double deer_dataset_chi2(const MultiAngleDataset& data, const std::vector<Vec3>& sites, double flip_prob,
                         const DecoherenceParams& dec, const PhysicalConstants& c = default_constants());

/// Profile-likelihood maps: for each cell, one reporter is pinned there and
/// the others (plus the depth, when profiled) are optimized; the density is
/// exp(-chi2/2) normalized over the grid. Repeated per spin and superposed.
ReporterLocalization localize_reporters(const MultiAngleDataset& data, const ReporterLocalizationConfig& config,
                                        const PhysicalConstants& c = default_constants());

// Proton localization from hyperfine parameters -------------------------------

struct ProtonLocalizationConfig {
  Eigen::Matrix2d covariance = Eigen::Matrix2d::Zero();  // of (a, b)
  Interval a0_range{0.0, 0.0};
  std::size_t samples = 20000;
  GridAxis x = GridAxis::with_step(0.0, 0.5, 0.005);  // r sin(theta), nm
  GridAxis z = GridAxis::with_step(0.0, 0.5, 0.005);  // r cos(theta), nm
  std::uint64_t seed = 1;
};

/// 16th, 50th and 84th percentiles.
struct CredibleInterval {
  double lo = 0.0;
  double median = 0.0;
  double hi = 0.0;
  bool overlaps(double centre, double half_width) const noexcept {
    return hi >= centre - half_width && lo <= centre + half_width;
  }
};

struct ProtonBranchMap {
  int a_sign = 0;
  ProbabilityMap map;
  CredibleInterval r_nm;
  CredibleInterval theta_deg;
  std::size_t accepted = 0;
};

struct ProtonLocalization {
  ProtonBranchMap positive_a;
  ProtonBranchMap negative_a;
  const ProtonBranchMap& branch(int sign) const noexcept { return sign >= 0 ? positive_a : negative_a; }
};

/// Propagates Gaussian (a, b) uncertainty and a uniform a0 interval through
/// the hyperfine inversion by sampling; one map per sign hypothesis of a.
ProtonLocalization localize_protons(const HyperfineParams& params, const ProtonLocalizationConfig& config,
                                    const PhysicalConstants& c = default_constants());

}  // namespace qreporter
