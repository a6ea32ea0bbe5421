#include "qreporter/localize.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "qreporter/fit.hpp"

namespace qreporter {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t v : {a, b}) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 31;
  }
  return h;
}

/// Multi-angle DEER residuals for a set of reporters on the plane z = depth.
/// Some spins are pinned; the free coordinates are (x, y) of every unpinned
/// spin followed by the depth when it is profiled.
class DeerObjective {
 public:
  DeerObjective(const MultiAngleDataset& data, double flip_prob, const DecoherenceParams& dec,
                const PhysicalConstants& c)
      : flip_prob_(flip_prob), k_ee_(c.k_ee) {
    for (const auto& at : data.traces) {
      Block b;
      b.direction = at.field.direction();
      b.t = at.trace.abscissa;
      b.y = at.trace.signal;
      for (std::size_t i = 0; i < b.t.size(); ++i) {
        b.inv_sigma.push_back(1.0 / at.trace.sigma[i]);
        b.envelope.push_back(nv_echo(b.t[i], dec));
      }
      b.uniform = b.t.size() > 2;
      if (b.uniform) {
        b.step = (b.t.back() - b.t.front()) / static_cast<double>(b.t.size() - 1);
        for (std::size_t i = 0; i < b.t.size(); ++i) {
          const double expect = b.t.front() + static_cast<double>(i) * b.step;
          b.uniform = b.uniform && std::abs(b.t[i] - expect) <= 1e-12 * std::max(1.0, std::abs(b.t.back()));
        }
      }
      points_ += b.t.size();
      blocks_.push_back(std::move(b));
    }
  }

  std::size_t points() const noexcept { return points_; }

  /// Residuals and optional Jacobian for the configuration described by
  /// `xy` (2 per spin), `free_spin` flags, and `depth`.
  void evaluate(const std::vector<double>& xy, const std::vector<bool>& free_spin, double depth,
                bool depth_free, Eigen::VectorXd& r, Eigen::MatrixXd* jac) const {
    const std::size_t n = xy.size() / 2;
    std::vector<Eigen::Index> col(n, -1);
    Eigen::Index ncols = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (free_spin[i]) {
        col[i] = ncols;
        ncols += 2;
      }
    }
    const Eigen::Index depth_col = ncols;
    if (depth_free) ++ncols;

    r.resize(static_cast<Eigen::Index>(points_));
    if (jac) jac->setZero(static_cast<Eigen::Index>(points_), ncols);

    std::vector<double> d(n);
    std::vector<Vec3> dd(n);  // gradient of d_i wrt the site position
    std::vector<double> f(n), g(n), prefix(n + 1), suffix(n + 1);
    std::vector<double> c(n), sn(n), step_c(n), step_s(n);
    Eigen::Index row = 0;
    for (const auto& b : blocks_) {
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 v(xy[2 * i], xy[2 * i + 1], depth);
        const double r2 = v.squaredNorm();
        const double rr = std::sqrt(r2);
        const double u = v.dot(b.direction);
        const double r5 = r2 * r2 * rr;
        d[i] = k_ee_ * (r2 - 3.0 * u * u) / r5;
        if (jac) dd[i] = k_ee_ * ((2.0 * v - 6.0 * u * b.direction) / r5 - 5.0 * (r2 - 3.0 * u * u) * v / (r5 * r2));
        if (b.uniform) {
          step_c[i] = std::cos(0.5 * d[i] * b.step);
          step_s[i] = std::sin(0.5 * d[i] * b.step);
        }
      }
      for (std::size_t p = 0; p < b.t.size(); ++p, ++row) {
        const double t = b.t[p];
        for (std::size_t i = 0; i < n; ++i) {
          // Phase rotation on uniform grids, re-anchored periodically.
          if (!b.uniform || p % 32 == 0) {
            c[i] = std::cos(0.5 * d[i] * t);
            sn[i] = std::sin(0.5 * d[i] * t);
          } else {
            const double cn = c[i] * step_c[i] - sn[i] * step_s[i];
            sn[i] = sn[i] * step_c[i] + c[i] * step_s[i];
            c[i] = cn;
          }
          f[i] = 1.0 - flip_prob_ + flip_prob_ * c[i];
          g[i] = -flip_prob_ * sn[i] * 0.5 * t;
        }
        prefix[0] = b.envelope[p];
        for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] * f[i];
        r(row) = (b.y[p] - prefix[n]) * b.inv_sigma[p];
        if (!jac) continue;
        suffix[n] = 1.0;
        for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] * f[i];
        for (std::size_t i = 0; i < n; ++i) {
          if (!free_spin[i] && !depth_free) continue;
          const double scale = -b.inv_sigma[p] * prefix[i] * suffix[i + 1] * g[i];
          if (free_spin[i]) {
            (*jac)(row, col[i]) += scale * dd[i].x();
            (*jac)(row, col[i] + 1) += scale * dd[i].y();
          }
          if (depth_free) (*jac)(row, depth_col) += scale * dd[i].z();
        }
      }
    }
  }

  double chi2(const std::vector<double>& xy, double depth) const {
    Eigen::VectorXd r;
    evaluate(xy, std::vector<bool>(xy.size() / 2, false), depth, false, r, nullptr);
    return r.squaredNorm();
  }

 private:
  struct Block {
    Vec3 direction;
    std::vector<double> t, y, inv_sigma, envelope;
    bool uniform = false;
    double step = 0.0;
  };
  std::vector<Block> blocks_;
  std::size_t points_ = 0;
  double flip_prob_;
  double k_ee_;
};

struct Candidate {
  std::vector<double> xy;
  double depth = 0.0;
  double cost = kInf;
  std::size_t evaluations = 0;
};

/// Optimize the free spins (and the depth) of `start` with LM.
Candidate optimize(const DeerObjective& obj, const ReporterLocalizationConfig& cfg, const std::vector<bool>& free_spin,
                   const std::vector<double>& start_xy, double start_depth) {
  const bool depth_free = cfg.depth_range.has_value();
  const std::size_t n = start_xy.size() / 2;
  std::vector<std::size_t> free_idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (free_spin[i]) free_idx.push_back(i);
  }
  const auto nx = static_cast<Eigen::Index>(2 * free_idx.size() + (depth_free ? 1 : 0));
  Candidate out;
  if (nx == 0) {
    out.xy = start_xy;
    out.depth = start_depth;
    out.cost = obj.chi2(start_xy, start_depth);
    out.evaluations = 1;
    return out;
  }

  auto unpack = [&](const Eigen::VectorXd& x, std::vector<double>& xy, double& depth) {
    xy = start_xy;
    for (std::size_t k = 0; k < free_idx.size(); ++k) {
      xy[2 * free_idx[k]] = x(static_cast<Eigen::Index>(2 * k));
      xy[2 * free_idx[k] + 1] = x(static_cast<Eigen::Index>(2 * k + 1));
    }
    depth = depth_free ? x(nx - 1) : start_depth;
  };

  LeastSquaresProblem prob;
  prob.residuals = obj.points();
  prob.analytic_jacobian = true;
  prob.lower.resize(nx);
  prob.upper.resize(nx);
  Eigen::VectorXd x0(nx);
  for (std::size_t k = 0; k < free_idx.size(); ++k) {
    const auto kk = static_cast<Eigen::Index>(2 * k);
    prob.lower(kk) = cfg.x.lo;
    prob.upper(kk) = cfg.x.hi;
    prob.lower(kk + 1) = cfg.y.lo;
    prob.upper(kk + 1) = cfg.y.hi;
    x0(kk) = start_xy[2 * free_idx[k]];
    x0(kk + 1) = start_xy[2 * free_idx[k] + 1];
  }
  if (depth_free) {
    prob.lower(nx - 1) = cfg.depth_range->lo;
    prob.upper(nx - 1) = cfg.depth_range->hi;
    x0(nx - 1) = start_depth;
  }
  prob.evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    std::vector<double> xy;
    double depth = 0.0;
    unpack(x, xy, depth);
    obj.evaluate(xy, free_spin, depth, depth_free, r, jac);
  };

  LmOptions lm;
  lm.max_iterations = 60;
  lm.ftol = 1e-9;
  lm.xtol = 1e-9;
  const auto res = levenberg_marquardt(prob, x0, lm);
  unpack(res.x, out.xy, out.depth);
  out.cost = res.cost;
  out.evaluations = res.evaluations;
  return out;
}

std::vector<double> jittered(const std::vector<double>& xy, const std::vector<bool>& free_spin, double sigma,
                             const ReporterLocalizationConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  auto out = xy;
  for (std::size_t i = 0; i < free_spin.size(); ++i) {
    if (!free_spin[i]) continue;
    out[2 * i] = std::clamp(out[2 * i] + noise(rng), cfg.x.lo, cfg.x.hi);
    out[2 * i + 1] = std::clamp(out[2 * i + 1] + noise(rng), cfg.y.lo, cfg.y.hi);
  }
  return out;
}

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

// Grid and map ----------------------------------------------------------------

GridAxis GridAxis::with_step(double lo, double hi, double step) {
  if (!(hi > lo) || !(step > 0.0)) throw DomainError("grid axis needs hi > lo and a positive step");
  const auto n = static_cast<std::size_t>(std::llround((hi - lo) / step));
  if (n == 0 || std::abs(static_cast<double>(n) * step - (hi - lo)) > 1e-9 * (hi - lo)) {
    throw DomainError("grid extent is not a whole number of steps");
  }
  return {lo, hi, n};
}

std::optional<std::size_t> GridAxis::cell_of(double v) const noexcept {
  if (!(v >= lo && v <= hi)) return std::nullopt;
  const auto i = static_cast<std::size_t>(std::floor((v - lo) / step()));
  return std::min(i, n - 1);
}

ProbabilityMap::ProbabilityMap(GridAxis x_axis, GridAxis y_axis)
    : x(x_axis), y(y_axis), density(x_axis.n * y_axis.n, 0.0) {}

double ProbabilityMap::total() const {
  // Compensated summation keeps the normalization check at 1e-9 for large grids.
  double s = 0.0, comp = 0.0;
  for (double v : density) {
    const double yv = v - comp;
    const double t = s + yv;
    comp = (t - s) - yv;
    s = t;
  }
  return s;
}

void ProbabilityMap::normalize() {
  const double s = total();
  if (!(s > 0.0) || !std::isfinite(s)) throw NoSolutionError("probability map has no mass to normalize");
  for (double& v : density) v /= s;
}

std::pair<std::size_t, std::size_t> ProbabilityMap::argmax() const {
  const auto it = std::max_element(density.begin(), density.end());
  const auto idx = static_cast<std::size_t>(it - density.begin());
  return {idx % x.n, idx / x.n};
}

Eigen::Vector2d ProbabilityMap::argmax_position() const {
  const auto [ix, iy] = argmax();
  return {x.center(ix), y.center(iy)};
}

std::vector<bool> ProbabilityMap::credible_mask(double mass) const {
  std::vector<std::size_t> order(density.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return density[a] > density[b]; });
  std::vector<bool> mask(density.size(), false);
  const double target = mass * total();
  double acc = 0.0;
  for (auto idx : order) {
    if (acc >= target) break;
    mask[idx] = true;
    acc += density[idx];
  }
  return mask;
}

bool ProbabilityMap::in_credible_region(double px, double py, double mass) const {
  const auto ix = x.cell_of(px);
  const auto iy = y.cell_of(py);
  if (!ix || !iy) return false;
  return credible_mask(mass)[*iy * x.n + *ix];
}

double ProbabilityMap::credible_area(double mass) const {
  const auto mask = credible_mask(mass);
  return static_cast<double>(std::count(mask.begin(), mask.end(), true)) * x.step() * y.step();
}

ProbabilityMap ProbabilityMap::from_log_weights(GridAxis x_axis, GridAxis y_axis,
                                                const std::vector<double>& log_weight) {
  ProbabilityMap m(x_axis, y_axis);
  if (log_weight.size() != m.density.size()) throw DomainError("log-weight count does not match the grid");
  double top = -kInf;
  for (double w : log_weight) {
    if (std::isfinite(w)) top = std::max(top, w);
  }
  if (!std::isfinite(top)) throw NoSolutionError("probability map has no finite weight");
  for (std::size_t i = 0; i < log_weight.size(); ++i) {
    m.density[i] = std::isfinite(log_weight[i]) ? std::exp(log_weight[i] - top) : 0.0;
  }
  m.normalize();
  return m;
}

// Reporters ---------------------------------------------------------------------

void MultiAngleDataset::validate() const {
  std::vector<Vec3> dirs;
  for (const auto& at : traces) {
    at.trace.validate();
    if (!at.trace.has_sigma()) throw DomainError("multi-angle traces must carry sigma");
    for (double s : at.trace.sigma) {
      if (!(s > 0.0)) throw DomainError("multi-angle traces need positive sigma");
    }
    bool seen = false;
    for (const auto& d : dirs) seen = seen || (d - at.field.direction()).norm() < 1e-9;
    if (!seen) dirs.push_back(at.field.direction());
  }
  if (dirs.size() < 2) throw DomainError("multi-angle dataset needs at least two distinct field directions");
}

double deer_dataset_chi2(const MultiAngleDataset& data, const std::vector<Vec3>& sites, double flip_prob,
                         const DecoherenceParams& dec, const PhysicalConstants& c) {
  double chi2 = 0.0;
  for (const auto& at : data.traces) {
    SpinSystem scene;
    scene.field = at.field;
    scene.reporter_sites = sites;
    for (std::size_t i = 0; i < at.trace.size(); ++i) {
      const double z = (at.trace.signal[i] - deer_signal(at.trace.abscissa[i], scene, flip_prob, dec, c)) /
                       at.trace.sigma[i];
      chi2 += z * z;
    }
  }
  return chi2;
}

ReporterLocalization localize_reporters(const MultiAngleDataset& data, const ReporterLocalizationConfig& cfg,
                                        const PhysicalConstants& c) {
  data.validate();
  cfg.decoherence.validate();
  if (cfg.n_spins == 0) throw DomainError("localization needs at least one reporter");
  if (!(cfg.flip_prob > 0.0 && cfg.flip_prob <= 1.0)) throw DomainError("flip probability must lie in (0, 1]");
  if (!(cfg.nv_depth > 0.0)) throw DomainError("NV depth must be positive");
  if (cfg.depth_range && !(cfg.depth_range->lo > 0.0 && cfg.depth_range->hi >= cfg.depth_range->lo)) {
    throw DomainError("depth interval must be positive and ordered");
  }

  const DeerObjective obj(data, cfg.flip_prob, cfg.decoherence, c);
  const std::size_t n = cfg.n_spins;
  const std::size_t cells = cfg.x.n * cfg.y.n;
  std::atomic<std::size_t> evaluations{0};
  std::mt19937_64 rng(cfg.seed);

  auto cell_xy = [&](std::size_t cell) { return std::pair{cfg.x.center(cell % cfg.x.n), cfg.y.center(cell / cfg.x.n)}; };
  const double start_depth =
      cfg.depth_range ? std::clamp(cfg.nv_depth, cfg.depth_range->lo, cfg.depth_range->hi) : cfg.nv_depth;

  // Greedy build-up: place each new spin at the best cell given the spins
  // already placed, refine jointly, keep the best of a few candidate cells.
  Candidate best;
  best.depth = start_depth;
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::pair<double, std::size_t>> scores(cells);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      auto xy = best.xy;
      const auto [px, py] = cell_xy(cell);
      xy.push_back(px);
      xy.push_back(py);
      scores[cell] = {obj.chi2(xy, best.depth), cell};
    }
    evaluations += cells;
    std::partial_sort(scores.begin(), scores.begin() + std::min<std::size_t>(4, cells), scores.end());
    Candidate round;
    for (std::size_t q = 0; q < std::min<std::size_t>(4, cells); ++q) {
      auto xy = best.xy;
      const auto [px, py] = cell_xy(scores[q].second);
      xy.push_back(px);
      xy.push_back(py);
      auto cand = optimize(obj, cfg, std::vector<bool>(k + 1, true), xy, best.depth);
      evaluations += cand.evaluations;
      if (cand.cost < round.cost) round = std::move(cand);
    }
    best = std::move(round);
  }
  // Coordinate-wise rescans: move one spin across the whole grid with the
  // others held, refine the best candidates jointly. Escapes the wrong
  // assignments the greedy pass makes when spins overlap in signal.
  for (std::size_t round = 0; n > 1 && round < 2 * n; ++round) {
    bool improved = false;
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<std::pair<double, std::size_t>> scores(cells);
      for (std::size_t cell = 0; cell < cells; ++cell) {
        auto xy = best.xy;
        const auto [px, py] = cell_xy(cell);
        xy[2 * k] = px;
        xy[2 * k + 1] = py;
        scores[cell] = {obj.chi2(xy, best.depth), cell};
      }
      evaluations += cells;
      std::partial_sort(scores.begin(), scores.begin() + std::min<std::size_t>(4, cells), scores.end());
      for (std::size_t q = 0; q < std::min<std::size_t>(4, cells); ++q) {
        auto xy = best.xy;
        const auto [px, py] = cell_xy(scores[q].second);
        xy[2 * k] = px;
        xy[2 * k + 1] = py;
        auto cand = optimize(obj, cfg, std::vector<bool>(n, true), xy, best.depth);
        evaluations += cand.evaluations;
        if (cand.cost < best.cost - 1e-6) {
          best = std::move(cand);
          improved = true;
        }
      }
    }
    if (!improved) break;
  }

  // Jittered polish of the full configuration.
  for (std::size_t q = 0; q < cfg.starts_per_spin * n; ++q) {
    const std::vector<bool> all(n, true);
    auto cand = optimize(obj, cfg, all, jittered(best.xy, all, cfg.jitter_nm, cfg, rng), best.depth);
    evaluations += cand.evaluations;
    if (cand.cost < best.cost) best = std::move(cand);
  }

  ReporterLocalization out;
  out.depth = best.depth;
  out.chi2_min = best.cost;
  const std::size_t nparams = 2 * n + (cfg.depth_range ? 1 : 0);
  out.dof = obj.points() > nparams ? obj.points() - nparams : 0;
  for (std::size_t i = 0; i < n; ++i) out.sites.emplace_back(best.xy[2 * i], best.xy[2 * i + 1], best.depth);

  // Profile maps.
  std::atomic<bool> exhausted{false};
  for (std::size_t spin = 0; spin < n; ++spin) {
    std::vector<double> logw(cells, -kInf);
    std::vector<bool> free_spin(n, true);
    free_spin[spin] = false;
    const bool has_nuisance = n > 1 || cfg.depth_range.has_value();

    parallel_for(cells, cfg.threads, [&](std::size_t cell) {
      if (exhausted.load()) return;
      if (cfg.max_evaluations && evaluations.load() > cfg.max_evaluations) {
        exhausted = true;
        return;
      }
      auto xy = best.xy;
      const auto [px, py] = cell_xy(cell);
      xy[2 * spin] = px;
      xy[2 * spin + 1] = py;
      auto local = optimize(obj, cfg, free_spin, xy, best.depth);
      std::size_t used = local.evaluations;
      if (has_nuisance && n > 1) {
        std::mt19937_64 cell_rng(mix_seed(cfg.seed, spin, cell));
        for (std::size_t q = 0; q < cfg.starts_per_spin * (n - 1); ++q) {
          auto cand = optimize(obj, cfg, free_spin, jittered(xy, free_spin, cfg.jitter_nm, cfg, cell_rng), best.depth);
          used += cand.evaluations;
          if (cand.cost < local.cost) local = std::move(cand);
        }
      }
      evaluations += used;
      logw[cell] = -0.5 * (local.cost - best.cost);
    });

    bool any = false;
    for (double w : logw) any = any || std::isfinite(w);
    if (!any) {
      out.partial = true;
      break;
    }
    auto map = ProbabilityMap::from_log_weights(cfg.x, cfg.y, logw);
    map.x_label = "x";
    map.y_label = "y";
    out.spin_maps.push_back(std::move(map));
    if (exhausted) break;
  }
  out.partial = out.partial || exhausted.load() || out.spin_maps.size() < n;
  out.evaluations = evaluations.load();

  if (!out.spin_maps.empty()) {
    out.combined = ProbabilityMap(cfg.x, cfg.y);
    for (const auto& m : out.spin_maps) {
      for (std::size_t i = 0; i < cells; ++i) out.combined.density[i] += m.density[i];
    }
    out.combined.normalize();
  }
  if (out.partial) {
    std::ostringstream msg;
    msg << "localization budget of " << cfg.max_evaluations << " evaluations exceeded after " << out.spin_maps.size()
        << " of " << n << " maps";
    throw LocalizationBudgetError(msg.str(), std::move(out));
  }
  return out;
}

// Protons -------------------------------------------------------------------------

ProtonLocalization localize_protons(const HyperfineParams& params, const ProtonLocalizationConfig& cfg,
                                    const PhysicalConstants& c) {
  const Eigen::Matrix2d cov = 0.5 * (cfg.covariance + cfg.covariance.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  if (es.eigenvalues().minCoeff() < -1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())) {
    throw DomainError("hyperfine covariance is not positive semidefinite");
  }
  if (cfg.a0_range.hi < cfg.a0_range.lo) throw DomainError("a0 interval is reversed");
  if (cfg.samples == 0) throw DomainError("proton localization needs samples");
  const Eigen::Matrix2d root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ProtonLocalization out;
  struct Accumulator {
    ProbabilityMap map;
    std::vector<double> r, theta;
  };
  Accumulator acc[2] = {{ProbabilityMap(cfg.x, cfg.z), {}, {}}, {ProbabilityMap(cfg.x, cfg.z), {}, {}}};

  for (std::size_t s = 0; s < cfg.samples; ++s) {
    const Eigen::Vector2d z(gauss(rng), gauss(rng));
    const Eigen::Vector2d ab = Eigen::Vector2d(params.a, params.b) + root * z;
    const double a0 = cfg.a0_range.lo + cfg.a0_range.width() * unit(rng);
    if (!(ab.y() > 0.0)) continue;
    for (int br = 0; br < 2; ++br) {
      const int sign = br == 0 ? +1 : -1;
      const auto g = solve_proton_geometry(sign * std::abs(ab.x()) - a0, ab.y(), c);
      const double th = g.theta_deg * std::numbers::pi / 180.0;
      const auto ix = cfg.x.cell_of(g.r_nm * std::sin(th));
      const auto iz = cfg.z.cell_of(g.r_nm * std::cos(th));
      acc[br].r.push_back(g.r_nm);
      acc[br].theta.push_back(g.theta_deg);
      if (ix && iz) acc[br].map.at(*ix, *iz) += 1.0;
    }
  }

  for (int br = 0; br < 2; ++br) {
    auto& dst = br == 0 ? out.positive_a : out.negative_a;
    dst.a_sign = br == 0 ? +1 : -1;
    if (acc[br].r.empty()) throw NoSolutionError("no hyperfine sample could be inverted (b <= 0 throughout)");
    dst.accepted = acc[br].r.size();
    dst.map = std::move(acc[br].map);
    dst.map.x_label = "r_sin_theta";
    dst.map.y_label = "r_cos_theta";
    if (dst.map.total() > 0.0) dst.map.normalize();
    else throw NoSolutionError("all inverted proton positions fall outside the map grid");
    dst.r_nm = {percentile(acc[br].r, 0.16), percentile(acc[br].r, 0.5), percentile(acc[br].r, 0.84)};
    dst.theta_deg = {percentile(acc[br].theta, 0.16), percentile(acc[br].theta, 0.5),
                     percentile(acc[br].theta, 0.84)};
  }
  return out;
}

}  // namespace qreporter
