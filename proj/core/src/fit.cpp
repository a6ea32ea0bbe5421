#include "qreporter/fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "qreporter/errors.hpp"

namespace qreporter {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd project(const LeastSquaresProblem& p, Eigen::VectorXd x) {
  if (p.lower.size() == x.size()) x = x.cwiseMax(p.lower);
  if (p.upper.size() == x.size()) x = x.cwiseMin(p.upper);
  return x;
}

void numeric_jacobian(const LeastSquaresProblem& p, const Eigen::VectorXd& x, const Eigen::VectorXd& r0,
                      Eigen::MatrixXd& jac, std::size_t& evals) {
  const auto n = x.size();
  jac.resize(static_cast<Eigen::Index>(p.residuals), n);
  Eigen::VectorXd rp, rm;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-6 * std::max(std::abs(x(k)), 1e-3);
    const double lo = p.lower.size() == n ? p.lower(k) : -kInf;
    const double hi = p.upper.size() == n ? p.upper(k) : kInf;
    Eigen::VectorXd xp = x, xm = x;
    const bool can_up = x(k) + h <= hi;
    const bool can_down = x(k) - h >= lo;
    if (can_up && can_down) {
      xp(k) += h;
      xm(k) -= h;
      p.evaluate(xp, rp, nullptr);
      p.evaluate(xm, rm, nullptr);
      jac.col(k) = (rp - rm) / (2.0 * h);
      evals += 2;
    } else if (can_up) {
      xp(k) += h;
      p.evaluate(xp, rp, nullptr);
      jac.col(k) = (rp - r0) / h;
      ++evals;
    } else {
      xm(k) -= h;
      p.evaluate(xm, rm, nullptr);
      jac.col(k) = (r0 - rm) / h;
      ++evals;
    }
  }
}

void evaluate_with_jacobian(const LeastSquaresProblem& p, const Eigen::VectorXd& x, Eigen::VectorXd& r,
                            Eigen::MatrixXd& jac, std::size_t& evals) {
  if (p.analytic_jacobian) {
    p.evaluate(x, r, &jac);
    ++evals;
  } else {
    p.evaluate(x, r, nullptr);
    ++evals;
    numeric_jacobian(p, x, r, jac, evals);
  }
}

}  // namespace

LmResult levenberg_marquardt(const LeastSquaresProblem& problem, const Eigen::VectorXd& x0,
                             const LmOptions& options) {
  LmResult res;
  res.x = project(problem, x0);
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  evaluate_with_jacobian(problem, res.x, r, jac, res.evaluations);
  res.cost = r.squaredNorm();
  if (!std::isfinite(res.cost)) {
    res.jacobian = jac;
    return res;
  }

  const auto n = res.x.size();
  Eigen::MatrixXd jtj = jac.transpose() * jac;
  Eigen::VectorXd grad = jac.transpose() * r;
  double lambda = 1e-3 * std::max(jtj.diagonal().maxCoeff(), 1e-12);
  Eigen::VectorXd trial_r;
  Eigen::MatrixXd trial_jac;

  for (res.iterations = 0; res.iterations < options.max_iterations; ++res.iterations) {
    if (n == 0) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd scale = jtj.diagonal().cwiseMax(1e-12 * std::max(jtj.diagonal().maxCoeff(), 1e-300));
    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = jtj;
      a.diagonal() += lambda * scale;
      const Eigen::VectorXd step = a.ldlt().solve(-grad);
      const Eigen::VectorXd trial = project(problem, res.x + step);
      const Eigen::VectorXd actual_step = trial - res.x;
      if (actual_step.norm() <= options.xtol * (res.x.norm() + options.xtol)) {
        res.converged = true;
        break;
      }
      // An analytic Jacobian is cheap enough to compute with every trial.
      problem.evaluate(trial, trial_r, problem.analytic_jacobian ? &trial_jac : nullptr);
      ++res.evaluations;
      const double trial_cost = trial_r.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < res.cost) {
        const double decrease = res.cost - trial_cost;
        res.x = trial;
        lambda = std::max(lambda / 3.0, 1e-15);
        if (problem.analytic_jacobian) {
          r.swap(trial_r);
          jac.swap(trial_jac);
        } else {
          evaluate_with_jacobian(problem, res.x, r, jac, res.evaluations);
        }
        res.cost = r.squaredNorm();
        jtj = jac.transpose() * jac;
        grad = jac.transpose() * r;
        accepted = true;
        if (decrease <= options.ftol * (res.cost + options.ftol)) res.converged = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          // No descent direction left: a (possibly constrained) minimum.
          res.converged = true;
          break;
        }
      }
    }
    if (res.converged) break;
  }
  res.jacobian = std::move(jac);
  return res;
}

// Models -------------------------------------------------------------------

TraceModel::TraceModel(std::string id, std::vector<std::string> names, std::vector<double> defaults, Function fn)
    : id_(std::move(id)), names_(std::move(names)), defaults_(std::move(defaults)), fn_(std::move(fn)) {}

std::size_t TraceModel::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw DomainError("model '" + id_ + "' has no parameter '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<double> TraceModel::resolve(const std::map<std::string, double>& values) const {
  std::vector<double> p = defaults_;
  for (const auto& [name, v] : values) p[index_of(name)] = v;
  return p;
}

SignalTrace TraceModel::simulate(std::span<const double> grid, const std::map<std::string, double>& values) const {
  const auto p = resolve(values);
  return tabulate(grid, [&](double t) { return fn_(t, p); });
}

TraceModel make_trace_model(const std::string& id, const PhysicalConstants& c) {
  constexpr double inf = kInf;
  auto dec_echo = [](double t2, double n) {
    DecoherenceParams d = DecoherenceParams::none();
    d.t2_s = t2;
    d.stretch_exponent = n;
    return d;
  };

  if (id == "nv_echo") {
    return {id, {"t2_nv", "stretch"}, {5.0, 1.0}, [](double t, std::span<const double> p) {
              DecoherenceParams d;
              d.t2_nv = p[0];
              d.stretch_exponent = p[1];
              return nv_echo(t, d);
            }};
  }
  if (id == "reporter_t1") {
    return {id, {"t1_s", "amplitude"}, {29.4, 1.0}, [](double t, std::span<const double> p) {
              DecoherenceParams d;
              d.t1_s = p[0];
              return p[1] * reporter_t1(t, d);
            }};
  }
  if (id == "reporter_rabi") {
    return {id, {"rabi_freq", "rabi_decay", "amplitude"}, {kTwoPi, 1.0, 1.0},
            [](double t, std::span<const double> p) {
              DecoherenceParams d;
              d.rabi_decay = p[1];
              return p[2] * reporter_rabi(t, p[0], d);
            }};
  }
  if (id == "eseem") {
    return {id, {"a", "b", "omega_n"}, {0.0, 0.0, 0.0}, [](double t, std::span<const double> p) {
              return eseem_single(t, {p[0], p[1], 0.0}, p[2]);
            }};
  }
  if (id == "eseem2") {
    return {id, {"a1", "b1", "a2", "b2", "omega_n"}, {0.0, 0.0, 0.0, 0.0, 0.0},
            [](double t, std::span<const double> p) {
              const ProtonCoupling protons[] = {{{p[0], p[1], 0.0}, p[4]}, {{p[2], p[3], 0.0}, p[4]}};
              return eseem_multi(t, protons);
            }};
  }
  if (id == "bath") {
    return {id, {"b_rms", "omega_n", "t2_s", "stretch"}, {0.0, 0.0, inf, 1.0},
            [c, dec_echo](double t, std::span<const double> p) {
              return bath_echo(t, {p[0], p[1]}, dec_echo(p[2], p[3]), c);
            }};
  }
  if (id == "echo1") {
    return {id, {"a", "b", "b_rms", "omega_n", "t2_s", "stretch"}, {0.0, 0.0, 0.0, 0.0, inf, 1.0},
            [c, dec_echo](double t, std::span<const double> p) {
              const ProtonCoupling protons[] = {{{p[0], p[1], 0.0}, p[3]}};
              return reporter_echo_combined(t, protons, {p[2], p[3]}, dec_echo(p[4], p[5]), c);
            }};
  }
  if (id == "echo2") {
    return {id,
            {"a1", "b1", "a2", "b2", "b_rms", "omega_n", "t2_s", "stretch"},
            {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, inf, 1.0},
            [c, dec_echo](double t, std::span<const double> p) {
              const ProtonCoupling protons[] = {{{p[0], p[1], 0.0}, p[5]}, {{p[2], p[3], 0.0}, p[5]}};
              return reporter_echo_combined(t, protons, {p[4], p[5]}, dec_echo(p[6], p[7]), c);
            }};
  }
  throw DomainError("unknown model id '" + id + "'");
}

std::vector<std::string> trace_model_ids() {
  return {"nv_echo", "reporter_t1", "reporter_rabi", "eseem", "eseem2", "bath", "echo1", "echo2"};
}

TraceModel make_deer_model(const SpinSystem& scene, const PhysicalConstants& c) {
  std::vector<double> d;
  for (const auto& site : scene.reporter_sites) d.push_back(dipolar_coupling_ee(scene.nv_position, site, scene.field, c));
  return {"deer", {"flip_prob", "t2_nv", "stretch"}, {1.0, 5.0, 1.0}, [d](double t, std::span<const double> p) {
            DecoherenceParams dec;
            dec.t2_nv = p[1];
            dec.stretch_exponent = p[2];
            return deer_signal(t, d, std::clamp(p[0], 0.0, 1.0), dec);
          }};
}

// Fitting ------------------------------------------------------------------

double FitResult::value(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return values(static_cast<Eigen::Index>(i));
  }
  if (auto it = fixed.find(name); it != fixed.end()) return it->second;
  throw DomainError("fit result has no parameter '" + name + "'");
}

double FitResult::error(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    if (names[i] == name) return std::sqrt(std::max(covariance(k, k), 0.0));
  }
  return 0.0;
}

std::map<std::string, double> FitResult::all_parameters() const {
  auto out = fixed;
  for (std::size_t i = 0; i < names.size(); ++i) out[names[i]] = values(static_cast<Eigen::Index>(i));
  return out;
}

FitResult fit_trace(const TraceModel& model, const SignalTrace& data, const std::map<std::string, double>& init,
                    const std::map<std::string, Interval>& bounds, const std::map<std::string, double>& fixed,
                    const FitOptions& options) {
  if (!data.has_sigma() || data.sigma.size() != data.size()) throw DomainError("fit data must carry sigma");
  for (double s : data.sigma) {
    if (!(s > 0.0)) throw DomainError("fit data sigma must be positive");
  }
  if (init.empty()) throw DomainError("fit needs at least one free parameter");

  // Free parameters in model order.
  std::vector<std::size_t> free_idx;
  std::vector<std::string> free_names;
  for (std::size_t i = 0; i < model.parameter_names().size(); ++i) {
    const auto& nm = model.parameter_names()[i];
    if (init.count(nm)) {
      if (fixed.count(nm)) throw DomainError("parameter '" + nm + "' is both free and fixed");
      free_idx.push_back(i);
      free_names.push_back(nm);
    }
  }
  for (const auto& [nm, v] : init) model.index_of(nm);  // reject unknown names

  const std::size_t n = free_idx.size();
  const std::size_t npts = data.size();
  if (npts <= n) throw DomainError("fit has no degrees of freedom");

  const auto base = model.resolve(fixed);
  const auto nfree = static_cast<Eigen::Index>(n);
  Eigen::VectorXd lower = Eigen::VectorXd::Constant(nfree, -kInf);
  Eigen::VectorXd upper = Eigen::VectorXd::Constant(nfree, kInf);
  Eigen::VectorXd x0(nfree);
  for (std::size_t k = 0; k < n; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    x0(kk) = init.at(free_names[k]);
    if (auto it = bounds.find(free_names[k]); it != bounds.end()) {
      lower(kk) = it->second.lo;
      upper(kk) = it->second.hi;
      if (!it->second.contains(x0(kk))) {
        throw DomainError("initial value of '" + free_names[k] + "' lies outside its bounds");
      }
    }
  }

  LeastSquaresProblem prob;
  prob.residuals = npts;
  prob.lower = lower;
  prob.upper = upper;
  prob.evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd*) {
    std::vector<double> p = base;
    for (std::size_t k = 0; k < n; ++k) p[free_idx[k]] = x(static_cast<Eigen::Index>(k));
    r.resize(static_cast<Eigen::Index>(npts));
    for (std::size_t i = 0; i < npts; ++i) {
      r(static_cast<Eigen::Index>(i)) = (data.signal[i] - model(data.abscissa[i], p)) / data.sigma[i];
    }
  };

  // Start set: init, lattice over finite bounds, random points within bounds.
  std::vector<Eigen::VectorXd> starts{x0};
  if (options.lattice_points > 1) {
    std::vector<std::vector<double>> axes(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (std::isfinite(lower(kk)) && std::isfinite(upper(kk))) {
        for (std::size_t q = 0; q < options.lattice_points; ++q) {
          axes[k].push_back(lower(kk) + (upper(kk) - lower(kk)) * (static_cast<double>(q) + 0.5) /
                                            static_cast<double>(options.lattice_points));
        }
      } else {
        axes[k].push_back(x0(kk));
      }
    }
    std::size_t total = 1;
    for (const auto& ax : axes) total *= ax.size();
    if (total > 4096) throw DomainError("fit start lattice exceeds 4096 points");
    for (std::size_t idx = 0; idx < total; ++idx) {
      Eigen::VectorXd s(nfree);
      std::size_t rem = idx;
      for (std::size_t k = 0; k < n; ++k) {
        s(static_cast<Eigen::Index>(k)) = axes[k][rem % axes[k].size()];
        rem /= axes[k].size();
      }
      starts.push_back(s);
    }
  }
  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t q = 0; q < options.random_starts; ++q) {
    Eigen::VectorXd s = x0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      if (std::isfinite(lower(kk)) && std::isfinite(upper(kk))) s(kk) = lower(kk) + (upper(kk) - lower(kk)) * unit(rng);
    }
    starts.push_back(s);
  }

  LmResult best;
  best.cost = kInf;
  bool any_converged = false;
  for (const auto& s : starts) {
    auto r = levenberg_marquardt(prob, s, options.lm);
    if (!std::isfinite(r.cost)) continue;
    any_converged = any_converged || r.converged;
    if (r.converged && (!best.converged || r.cost < best.cost)) best = std::move(r);
    else if (!best.converged && r.cost < best.cost) best = std::move(r);
  }
  if (!any_converged) {
    std::ostringstream msg;
    msg << "fit of model '" << model.id() << "' did not converge from " << starts.size() << " starts";
    throw ConvergenceError(msg.str());
  }

  FitResult out;
  out.model = model.id();
  out.names = free_names;
  out.values = best.x;
  out.fixed = fixed;
  for (std::size_t i = 0; i < model.parameter_names().size(); ++i) {
    const auto& nm = model.parameter_names()[i];
    if (!init.count(nm) && !fixed.count(nm)) out.fixed[nm] = model.defaults()[i];
  }
  out.chi2 = best.cost;
  out.dof = npts - n;
  out.reduced_chi2 = out.chi2 / static_cast<double>(out.dof);
  out.converged = best.converged;

  const Eigen::MatrixXd jtj = best.jacobian.transpose() * best.jacobian;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(jtj);
  cod.setThreshold(1e-12);
  out.singular_jacobian = cod.rank() < nfree;
  out.covariance = cod.pseudoInverse();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

double reduced_chi2(const SignalTrace& data, std::span<const double> model, std::size_t n_params) {
  if (model.size() != data.size()) throw DomainError("model and data lengths differ");
  if (data.sigma.size() != data.size()) throw DomainError("reduced chi-squared needs sigma");
  if (data.size() <= n_params) throw DomainError("reduced chi-squared has zero degrees of freedom");
  double chi2 = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(data.sigma[i] > 0.0)) throw DomainError("sigma must be positive");
    const double z = (data.signal[i] - model[i]) / data.sigma[i];
    chi2 += z * z;
  }
  return chi2 / static_cast<double>(data.size() - n_params);
}

GyromagneticFit fit_gyromagnetic(std::span<const FieldPoint> points) {
  if (points.empty()) throw DomainError("gyromagnetic fit needs at least one point");
  double sbb = 0.0, sbw = 0.0;
  for (const auto& p : points) {
    if (!(p.sigma > 0.0)) throw DomainError("gyromagnetic fit needs positive sigma");
    const double w = 1.0 / (p.sigma * p.sigma);
    sbb += w * p.field_gauss * p.field_gauss;
    sbw += w * p.field_gauss * p.omega_n;
  }
  if (!(sbb > 0.0)) throw DomainError("gyromagnetic fit has a degenerate abscissa (all fields zero)");
  GyromagneticFit out;
  out.slope = sbw / sbb;
  out.slope_sigma = 1.0 / std::sqrt(sbb);
  out.dof = points.size() - 1;
  out.low_dof = points.size() < 2;
  if (out.dof > 0) {
    double chi2 = 0.0;
    for (const auto& p : points) {
      const double z = (p.omega_n - out.slope * p.field_gauss) / p.sigma;
      chi2 += z * z;
    }
    out.reduced_chi2 = chi2 / static_cast<double>(out.dof);
  }
  return out;
}

}  // namespace qreporter
