#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "qreporter/signals.hpp"

namespace qreporter {

// Damped Gauss-Newton (Levenberg-Marquardt) ---------------------------------

/// Residual vector and, when `jacobian` is non-null, its Jacobian. A problem
/// that cannot supply a Jacobian sets `analytic_jacobian = false` and gets
/// central differences.
struct LeastSquaresProblem {
  std::size_t residuals = 0;
  std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jacobian)> evaluate;
  bool analytic_jacobian = false;
  Eigen::VectorXd lower;  // box constraints; empty means unbounded
  Eigen::VectorXd upper;
};

struct LmOptions {
  int max_iterations = 200;
  double ftol = 1e-12;  // relative cost decrease
  double xtol = 1e-12;  // relative step
};

struct LmResult {
  Eigen::VectorXd x;
  double cost = 0.0;  // sum of squared residuals
  Eigen::MatrixXd jacobian;
  int iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
};

LmResult levenberg_marquardt(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                             const LmOptions& options = {});

// Trace models ---------------------------------------------------------------

/// A signal model with named parameters. Parameters not being fitted take
/// their fixed or default value.
class TraceModel {
 public:
  using Function = std::function<double(double t, std::span<const double> params)>;

  TraceModel(std::string id, std::vector<std::string> names, std::vector<double> defaults, Function fn);

  const std::string& id() const noexcept { return id_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  const std::vector<double>& defaults() const noexcept { return defaults_; }
  std::size_t index_of(const std::string& name) const;

  double operator()(double t, std::span<const double> params) const { return fn_(t, params); }

  /// Full parameter vector from defaults overridden by `values`.
  std::vector<double> resolve(const std::map<std::string, double>& values) const;

  SignalTrace simulate(std::span<const double> grid, const std::map<std::string, double>& values) const;

 private:
  std::string id_;
  std::vector<std::string> names_;
  std::vector<double> defaults_;
  Function fn_;
};

/// Registry of analytic models usable by fitting and the CLI:
///   nv_echo, reporter_t1, reporter_rabi, eseem, eseem2, bath, echo1, echo2.
TraceModel make_trace_model(const std::string& id, const PhysicalConstants& c = default_constants());
std::vector<std::string> trace_model_ids();

/// DEER model over a fixed scene; parameters flip_prob, t2_nv, stretch.
TraceModel make_deer_model(const SpinSystem& scene, const PhysicalConstants& c = default_constants());

// Fitting ----------------------------------------------------------------------

struct FitOptions {
  LmOptions lm;
  std::size_t lattice_points = 1;  // per free parameter, across its bounds
  std::size_t random_starts = 0;   // uniform within bounds
  std::uint64_t seed = 1;
};

struct FitResult {
  std::string model;
  std::vector<std::string> names;  // free parameters
  Eigen::VectorXd values;
  Eigen::MatrixXd covariance;
  std::map<std::string, double> fixed;
  double chi2 = 0.0;
  double reduced_chi2 = 0.0;
  std::size_t dof = 0;
  bool converged = false;
  bool singular_jacobian = false;

  double value(const std::string& name) const;
  double error(const std::string& name) const;
  /// Free and fixed parameters together.
  std::map<std::string, double> all_parameters() const;
};

/// Weighted least squares of `model` to `data` (which must carry sigma),
/// multi-started from `init` plus the configured lattice and random starts.
/// Free parameters are the keys of `init`. Throws ConvergenceError when no
/// start converges.
FitResult fit_trace(const TraceModel& model, const SignalTrace& data, const std::map<std::string, double>& init,
                    const std::map<std::string, Interval>& bounds = {},
                    const std::map<std::string, double>& fixed = {}, const FitOptions& options = {});

/// sum ((y - m) / sigma)^2 / (N - n_params).
double reduced_chi2(const SignalTrace& data, std::span<const double> model, std::size_t n_params);

struct FieldPoint {
  double field_gauss = 0.0;
  double omega_n = 0.0;
  double sigma = 0.0;
};

struct GyromagneticFit {
  double slope = 0.0;        // rad/(us G)
  double slope_sigma = 0.0;
  double reduced_chi2 = 0.0;
  std::size_t dof = 0;
  bool low_dof = false;      // fewer than two points
};

/// Weighted line through the origin, omega_n = slope * B.
GyromagneticFit fit_gyromagnetic(std::span<const FieldPoint> points);

}  // namespace qreporter
