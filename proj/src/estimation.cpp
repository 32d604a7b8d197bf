#include "ndha/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>

#include "ndha/errors.hpp"
#include "ndha/sensitivity.hpp"

namespace ndha {

namespace {

bool in_scope(const CalibrationProblem& problem, Observable o) {
  return problem.series.empty() ||
         std::find(problem.series.begin(), problem.series.end(), o) != problem.series.end();
}

std::vector<double> to_box(const CalibrationProblem& p, const std::vector<double>& values) {
  std::vector<double> u(values.size());
  for (std::size_t k = 0; k < values.size(); ++k)
    u[k] = (values[k] - p.bounds[k].lower) / (p.bounds[k].upper - p.bounds[k].lower);
  return u;
}

std::vector<double> from_box(const CalibrationProblem& p, const std::vector<double>& u) {
  std::vector<double> v(u.size());
  for (std::size_t k = 0; k < u.size(); ++k)
    v[k] = p.bounds[k].lower + std::clamp(u[k], 0.0, 1.0) * (p.bounds[k].upper - p.bounds[k].lower);
  return v;
}

}  // namespace

CalibrationProblem CalibrationProblem::with_default_bounds(std::vector<Experiment> experiments, ParameterSet base,
                                                           std::vector<std::string> candidates, double factor) {
  if (!(factor > 1.0)) throw ValidationError("bound factor must be > 1");
  CalibrationProblem p;
  p.experiments = std::move(experiments);
  p.base = std::move(base);
  p.candidates = std::move(candidates);
  for (const auto& name : p.candidates) {
    const Parameter& par = p.base.at(name);
    Bound b{par.value / factor, par.value * factor};
    if (par.kind == ParameterKind::Factor || par.kind == ParameterKind::Composition) b.upper = std::min(b.upper, 1.0);
    p.bounds.push_back(b);
  }
  p.validate();
  return p;
}

CalibrationProblem CalibrationProblem::restricted(const std::vector<std::string>& names) const {
  CalibrationProblem p = *this;
  p.candidates = names;
  p.bounds.clear();
  for (const auto& n : names) p.bounds.push_back(bound(n));
  return p;
}

Bound CalibrationProblem::bound(const std::string& name) const {
  const auto it = std::find(candidates.begin(), candidates.end(), name);
  if (it == candidates.end()) throw ValidationError("'" + name + "' is not a calibration candidate");
  return bounds[static_cast<std::size_t>(it - candidates.begin())];
}

void CalibrationProblem::validate() const {
  if (experiments.empty()) throw ValidationError("calibration problem has no experiments");
  if (bounds.size() != candidates.size()) throw ValidationError("one bound per candidate required");
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (!base.contains(candidates[k])) throw ValidationError("unknown parameter '" + candidates[k] + "'");
    if (std::count(candidates.begin(), candidates.end(), candidates[k]) > 1)
      throw ValidationError("duplicate candidate '" + candidates[k] + "'");
    if (!(bounds[k].lower > 0.0 && bounds[k].upper > bounds[k].lower))
      throw ValidationError("bounds of '" + candidates[k] + "' must satisfy 0 < lower < upper");
  }
  std::size_t points = 0;
  for (const auto& e : experiments) {
    e.validate();
    for (const auto& m : e.measured)
      if (in_scope(*this, m.observable)) points += m.values.size();
  }
  if (points == 0) throw ValidationError("calibration problem has no measured points in scope");
}

Objective::Objective(const CalibrationProblem& problem) : problem_(problem) {
  problem_.validate();
  for (auto& e : problem_.experiments) e = resolve_initial_state(e, problem_.solver);
  std::vector<double> obs, sig, w;
  for (const auto& e : problem_.experiments) {
    std::size_t n = 0;
    for (const auto& m : e.measured)
      if (in_scope(problem_, m.observable)) n += m.values.size();
    for (const auto& m : e.measured) {
      if (!in_scope(problem_, m.observable)) continue;
      for (double v : m.values) {
        obs.push_back(v);
        sig.push_back(m.sigma);
        w.push_back(1.0 / static_cast<double>(n));
      }
    }
  }
  observed_ = Eigen::Map<Eigen::VectorXd>(obs.data(), static_cast<Eigen::Index>(obs.size()));
  sigma_ = Eigen::Map<Eigen::VectorXd>(sig.data(), static_cast<Eigen::Index>(sig.size()));
  weight_ = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
}

ParameterSet Objective::assign(const std::vector<double>& values) const {
  if (values.size() != problem_.candidates.size()) throw ValidationError("one value per candidate required");
  ParameterSet p = problem_.base;
  for (std::size_t k = 0; k < values.size(); ++k) p.set(problem_.candidates[k], values[k]);
  return p;
}

Eigen::VectorXd Objective::simulated(const ParameterSet& params, const SolverOptions& solver) const {
  Eigen::VectorXd out(observed_.size());
  Eigen::Index at = 0;
  for (const auto& e : problem_.experiments) {
    std::vector<double> times;
    for (const auto& m : e.measured)
      if (in_scope(problem_, m.observable)) times.insert(times.end(), m.times_min.begin(), m.times_min.end());
    if (times.empty()) continue;
    const Trajectory traj = simulate_at(e, params, times, solver);
    for (const auto& m : e.measured) {
      if (!in_scope(problem_, m.observable)) continue;
      const auto y = observables(traj, m.observable, m.times_min);
      for (double v : y) out(at++) = v;
    }
  }
  return out;
}

Eigen::VectorXd Objective::weighted_residuals(const ParameterSet& params) const {
  return (simulated(params, problem_.solver) - observed_).cwiseQuotient(sigma_);
}

double Objective::evaluate(const ParameterSet& params, bool* failed) const {
  if (failed) *failed = false;
  try {
    const Eigen::VectorXd r = weighted_residuals(params);
    const double j = (r.array().square() * weight_.array()).sum();
    if (std::isfinite(j)) return j;
  } catch (const IntegrationError&) {
  } catch (const NumericalError&) {
  }
  if (failed) *failed = true;
  return kFailurePenalty;
}

double Objective::operator()(const std::vector<double>& values, bool* failed) const {
  return evaluate(assign(values), failed);
}

double FitResult::value(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError("'" + name + "' is not part of the fit");
  return values[static_cast<std::size_t>(it - names.begin())];
}

double FitResult::max_abs_correlation() const {
  double m = 0.0;
  for (Eigen::Index i = 0; i < correlation.rows(); ++i)
    for (Eigen::Index j = 0; j < i; ++j) m = std::max(m, std::abs(correlation(i, j)));
  return m;
}

PatternSearchResult pattern_search(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x, double mesh, double tolerance,
                                   std::size_t max_evaluations) {
  PatternSearchResult res;
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
  double fx = f(x);
  res.evaluations = 1;
  const std::size_t p = x.size();
  while (mesh >= tolerance && res.evaluations < max_evaluations) {
    bool improved = false;
    for (std::size_t k = 0; k < p && res.evaluations < max_evaluations; ++k) {
      for (double sign : {1.0, -1.0}) {
        std::vector<double> y = x;
        y[k] = std::clamp(x[k] + sign * mesh, 0.0, 1.0);
        if (y[k] == x[k]) continue;
        double fy = f(y);
        ++res.evaluations;
        if (fy < fx) {
          // Keep stepping along the successful direction with growing steps.
          double step = mesh;
          while (res.evaluations < max_evaluations) {
            step *= 2.0;
            std::vector<double> z = y;
            z[k] = std::clamp(x[k] + sign * step, 0.0, 1.0);
            if (z[k] == y[k]) break;
            const double fz = f(z);
            ++res.evaluations;
            if (!(fz < fy)) break;
            y = std::move(z);
            fy = fz;
          }
          x = std::move(y);
          fx = fy;
          improved = true;
          break;
        }
      }
    }
    if (!improved) mesh *= 0.5;
  }
  res.x = std::move(x);
  res.f = fx;
  return res;
}

FimResult fim(const Objective& objective, const std::vector<double>& theta, double rel_step,
              const SolverOptions& solver, bool throw_if_singular) {
  if (!(rel_step > 0.0)) throw ValidationError("finite-difference step must be > 0");
  const auto p = static_cast<Eigen::Index>(theta.size());
  const auto n = static_cast<Eigen::Index>(objective.points());
  FimResult out;
  out.sensitivities.resize(n, p);
  for (Eigen::Index k = 0; k < p; ++k) {
    const double h = rel_step * std::max(std::abs(theta[static_cast<std::size_t>(k)]), 1e-12);
    std::vector<double> up = theta, down = theta;
    up[static_cast<std::size_t>(k)] += h;
    down[static_cast<std::size_t>(k)] -= h;
    const Eigen::VectorXd yu = objective.simulated(objective.assign(up), solver);
    const Eigen::VectorXd yd = objective.simulated(objective.assign(down), solver);
    out.sensitivities.col(k) = ((yu - yd) / (2.0 * h)).cwiseQuotient(objective.sigmas());
  }
  out.fim = out.sensitivities.transpose() * out.sensitivities;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.fim);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  out.condition_number = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  out.singular = !(lmin > 0.0) || out.condition_number > 1e14;
  if (out.singular) {
    if (throw_if_singular) {
      std::ostringstream msg;
      msg << "Fisher information matrix is singular (condition number " << out.condition_number << ")";
      throw NumericalError(msg.str());
    }
    return out;
  }
  out.covariance = out.fim.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

double collinearity_index(const Eigen::MatrixXd& s) {
  Eigen::MatrixXd u = s;
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const double norm = u.col(k).norm();
    if (!(norm > 0.0)) return std::numeric_limits<double>::infinity();
    u.col(k) /= norm;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(u.transpose() * u);
  const double lmin = eig.eigenvalues().minCoeff();
  if (!(lmin > 1e-300)) return std::numeric_limits<double>::infinity();
  return 1.0 / std::sqrt(lmin);
}

double beale_jcrit(double j_opt, std::size_t p, std::size_t n_data, double alpha) {
  if (p == 0 || n_data <= p) throw ValidationError("Beale region needs 0 < p < N_data");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const boost::math::fisher_f_distribution<double> f(static_cast<double>(p), static_cast<double>(n_data - p));
  const double q = boost::math::quantile(f, 1.0 - alpha);
  return j_opt * (1.0 + static_cast<double>(p) / static_cast<double>(n_data - p) * q);
}

double aic(double sse, std::size_t n, std::size_t p) {
  if (n == 0) throw ValidationError("AIC needs at least one point");
  const double nn = static_cast<double>(n);
  return nn * std::log(std::max(sse, 1e-300) / nn) + 2.0 * static_cast<double>(p);
}

void identifiability(const Objective& objective, FitResult& r, const FitOptions& options, double alpha) {
  const auto p = static_cast<Eigen::Index>(r.values.size());
  const ParameterSet best = objective.assign(r.values);
  const Eigen::VectorXd res = objective.weighted_residuals(best);
  r.sse = res.squaredNorm();
  r.points = objective.points();
  r.aic = aic(r.sse, r.points, r.values.size());
  if (r.points > r.values.size()) r.j_crit = beale_jcrit(r.j_opt, r.values.size(), r.points, alpha);

  // RMSE per measured series in raw units.
  r.rmse_per_series.clear();
  r.series_labels.clear();
  const auto& prob = objective.problem();
  Eigen::Index at = 0;
  for (const auto& e : prob.experiments)
    for (const auto& m : e.measured) {
      if (!prob.series.empty() && std::find(prob.series.begin(), prob.series.end(), m.observable) == prob.series.end())
        continue;
      const auto n = static_cast<Eigen::Index>(m.values.size());
      const Eigen::VectorXd raw = res.segment(at, n).cwiseProduct(objective.sigmas().segment(at, n));
      r.rmse_per_series.push_back(std::sqrt(raw.squaredNorm() / static_cast<double>(n)));
      r.series_labels.push_back(e.label + ":" + std::string(observable_name(m.observable)));
      at += n;
    }

  const FimResult f = fim(objective, r.values, options.fd_relative_step, options.fim_solver, false);
  r.fim = f.fim;
  r.fim_condition = f.condition_number;
  r.fim_singular = f.singular;
  r.gamma = collinearity_index(f.sensitivities);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(f.fim);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  r.inv_mod_e = lmax > 0.0 ? std::max(lmin, 0.0) / lmax : 0.0;
  const double det = f.fim.determinant();
  r.log_rde = det > 0.0 && r.j_opt > 0.0
                  ? std::log(std::pow(det, 1.0 / (2.0 * static_cast<double>(p))) / r.j_opt)
                  : -std::numeric_limits<double>::infinity();
  r.cv_percent.assign(r.values.size(), std::numeric_limits<double>::infinity());
  r.correlation = Eigen::MatrixXd::Constant(p, p, std::numeric_limits<double>::quiet_NaN());
  if (!f.singular) {
    r.covariance = f.covariance;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double sd = std::sqrt(std::max(f.covariance(i, i), 0.0));
      r.cv_percent[static_cast<std::size_t>(i)] = sd / std::abs(r.values[static_cast<std::size_t>(i)]) * 100.0;
      for (Eigen::Index j = 0; j < p; ++j)
        r.correlation(i, j) = f.covariance(i, j) / std::sqrt(f.covariance(i, i) * f.covariance(j, j));
    }
  } else {
    r.covariance.resize(0, 0);
  }
}

FitResult fit(const CalibrationProblem& problem, const FitOptions& options) {
  if (problem.candidates.empty()) throw ValidationError("calibration problem has no candidate parameters");
  const Objective objective(problem);
  const Objective& obj = objective;
  const auto& prob = obj.problem();
  const std::size_t p = prob.candidates.size();

  std::size_t evaluations = 0, failures = 0;
  auto f_box = [&](const std::vector<double>& u) {
    bool failed = false;
    const double j = obj(from_box(prob, u), &failed);
    ++evaluations;
    if (failed) ++failures;
    return j;
  };

  // Global stage: stratified starts over the full box.
  std::vector<double> best_u(p, 0.5);
  double best_j = std::numeric_limits<double>::infinity();
  if (options.global_starts > 0) {
    SamplePlan plan;
    plan.samples = std::max<std::size_t>(options.global_starts, 2);
    plan.seed = options.seed;
    for (const auto& n : prob.candidates) plan.ranges.push_back({n, 0.0, 1.0});
    const Eigen::MatrixXd starts = lhs_sample(plan);
    for (Eigen::Index i = 0; i < starts.rows(); ++i) {
      std::vector<double> u(p);
      for (std::size_t k = 0; k < p; ++k) u[k] = starts(i, static_cast<Eigen::Index>(k));
      const double j = f_box(u);
      if (j < best_j) {
        best_j = j;
        best_u = u;
      }
    }
  } else {
    best_u = to_box(prob, [&] {
      std::vector<double> v;
      for (const auto& n : prob.candidates) v.push_back(prob.base.value(n));
      return v;
    }());
    best_j = f_box(best_u);
  }
  if (!(best_j < Objective::kFailurePenalty)) throw NumericalError("no start of the global search could be simulated");

  // Local stage.
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const std::size_t searches = std::max<std::size_t>(options.local_searches, 1);
  for (std::size_t s = 0; s < searches; ++s) {
    std::vector<double> start = best_u;
    double mesh = options.initial_mesh;
    if (s > 0) {
      for (double& v : start) v = std::clamp(v + options.local_box * unit(rng), 0.0, 1.0);
      mesh = options.polish_mesh;
    }
    const auto r = pattern_search(f_box, start, mesh, options.mesh_tolerance, options.max_evaluations);
    if (r.f < best_j) {
      best_j = r.f;
      best_u = r.x;
    }
  }

  FitResult result;
  result.names = prob.candidates;
  result.values = from_box(prob, best_u);
  result.j_opt = best_j;
  result.evaluations = evaluations;
  result.failed_evaluations = failures;
  identifiability(obj, result, options);
  return result;
}

std::vector<std::pair<double, double>> BealeGrid::inside() const {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t k = 0; k < y.size(); ++k)
      if (j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) <= j_crit) out.emplace_back(x[i], y[k]);
  return out;
}

BealeGrid beale_grid(const Objective& objective, const FitResult& fit, std::size_t points, double half_width) {
  if (fit.values.size() != 2) throw ValidationError("Beale grid needs a two-parameter fit");
  if (fit.covariance.size() != 4) throw NumericalError("Beale grid needs a non-singular covariance");
  if (points < 2) throw ValidationError("Beale grid needs at least 2 points per axis");
  BealeGrid g;
  g.j_crit = fit.j_crit;
  auto axis = [&](std::size_t k) {
    const double sd = std::sqrt(fit.covariance(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
    std::vector<double> a;
    for (std::size_t i = 0; i < points; ++i) {
      const double v = fit.values[k] + half_width * sd * (2.0 * static_cast<double>(i) / (points - 1.0) - 1.0);
      a.push_back(std::max(v, 1e-12));
    }
    return a;
  };
  g.x = axis(0);
  g.y = axis(1);
  g.j.resize(static_cast<Eigen::Index>(points), static_cast<Eigen::Index>(points));
  const ParameterSet& base = objective.problem().base;
  for (std::size_t i = 0; i < points; ++i)
    for (std::size_t k = 0; k < points; ++k) {
      ParameterSet ps = base;
      ps.set(fit.names[0], g.x[i]);
      ps.set(fit.names[1], g.y[k]);
      g.j(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = objective.evaluate(ps);
    }
  return g;
}

SubsetTable subset_search(const CalibrationProblem& problem, std::size_t max_size, const FitOptions& options) {
  problem.validate();
  const std::size_t m = problem.candidates.size();
  if (m == 0) throw ValidationError("subset search needs candidate parameters");
  if (max_size == 0) throw ValidationError("max subset size must be >= 1");
  max_size = std::min(max_size, m);
  SubsetTable table;
  double previous_best = std::numeric_limits<double>::infinity();
  std::optional<std::size_t> previous_pick;
  for (std::size_t size = 1; size <= max_size; ++size) {
    std::vector<SubsetRow> rows;
    std::vector<bool> pick(m, false);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(size), true);
    do {
      SubsetRow row;
      for (std::size_t k = 0; k < m; ++k)
        if (pick[k]) row.subset.push_back(problem.candidates[k]);
      try {
        row.fit = fit(problem.restricted(row.subset), options);
      } catch (const std::exception& e) {
        row.error = e.what();
        row.fit.names = row.subset;
      }
      rows.push_back(std::move(row));
    } while (std::prev_permutation(pick.begin(), pick.end()));
    std::stable_sort(rows.begin(), rows.end(), [](const SubsetRow& a, const SubsetRow& b) {
      if (a.fit.aic != b.fit.aic) return a.fit.aic < b.fit.aic;
      return a.subset < b.subset;
    });
    const std::size_t offset = table.rows.size();
    std::optional<std::size_t> pick_here;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].identifiable()) {
        pick_here = offset + i;
        break;
      }
    table.rows.insert(table.rows.end(), std::make_move_iterator(rows.begin()), std::make_move_iterator(rows.end()));
    table.last_size = size;
    if (!pick_here || !(table.rows[*pick_here].fit.aic < previous_best)) break;
    previous_best = table.rows[*pick_here].fit.aic;
    previous_pick = pick_here;
  }
  table.selected = previous_pick;
  return table;
}

}  // namespace ndha
