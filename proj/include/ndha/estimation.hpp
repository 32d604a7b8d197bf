#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndha/parameters.hpp"
#include "ndha/simulation.hpp"

namespace ndha {

struct Bound {
  double lower = 0.0;
  double upper = 0.0;
};

// A group of experiments fitted together, the parameters that may move, and
// everything else held at `base`. An empty candidate list is valid for
// evaluating the objective; fitting needs at least one.
struct CalibrationProblem {
  std::vector<Experiment> experiments;
  std::vector<std::string> candidates;
  std::vector<Bound> bounds;  // one per candidate
  ParameterSet base = ParameterSet::defaults();
  // Measured series taken into the objective; empty means all of them.
  std::vector<Observable> series;
  SolverOptions solver{};

  // Bounds of value/factor .. value*factor around the base values, capped at
  // 1 for reduction factors.
  static CalibrationProblem with_default_bounds(std::vector<Experiment> experiments, ParameterSet base,
                                                std::vector<std::string> candidates, double factor = 5.0);

  // A copy restricted to `names` (a subset of the candidates).
  CalibrationProblem restricted(const std::vector<std::string>& names) const;
  Bound bound(const std::string& name) const;
  void validate() const;
};

// Sum over experiments of (1/n_j) * sum_i ((y_sim - y_obs) / sigma)^2.
// Experiments are preconditioned once at construction.
class Objective {
public:
  static constexpr double kFailurePenalty = 1e12;

  explicit Objective(const CalibrationProblem& problem);

  // `values` follow problem.candidates. A simulation failure returns
  // kFailurePenalty and sets *failed when given.
  double operator()(const std::vector<double>& values, bool* failed = nullptr) const;
  double evaluate(const ParameterSet& params, bool* failed = nullptr) const;

  // (y_sim - y_obs) / sigma for every point in scope, in experiment/series
  // order. Throws IntegrationError.
  Eigen::VectorXd weighted_residuals(const ParameterSet& params) const;
  // Raw simulated values aligned with weighted_residuals.
  Eigen::VectorXd simulated(const ParameterSet& params, const SolverOptions& solver) const;
  const Eigen::VectorXd& sigmas() const { return sigma_; }
  const Eigen::VectorXd& observed() const { return observed_; }
  // 1/n_j for the experiment each point belongs to.
  const Eigen::VectorXd& weights() const { return weight_; }
  std::size_t points() const { return static_cast<std::size_t>(observed_.size()); }

  ParameterSet assign(const std::vector<double>& values) const;
  const CalibrationProblem& problem() const { return problem_; }

private:
  CalibrationProblem problem_;
  Eigen::VectorXd observed_, sigma_, weight_;
};

struct FitOptions {
  std::size_t global_starts = 200;
  std::size_t local_searches = 10;
  double initial_mesh = 0.1;         // fraction of each bound range
  double polish_mesh = 0.02;         // for searches after the first
  double local_box = 0.1;            // perturbation half-width, fraction of range
  double mesh_tolerance = 1e-6;
  std::size_t max_evaluations = 20000;  // per local search
  std::uint64_t seed = 1;
  double fd_relative_step = 1e-4;
  SolverOptions fim_solver{1e-9, 1e-12, 0.5, 2'000'000};
};

struct FimResult {
  Eigen::MatrixXd sensitivities;  // points x p, d y / d theta divided by sigma
  Eigen::MatrixXd fim;
  Eigen::MatrixXd covariance;     // empty when singular
  double condition_number = 0.0;
  bool singular = false;
};

// Central finite differences with step h = rel_step * |theta|. Throws
// NumericalError naming the condition number when the FIM is singular and
// `throw_if_singular` is set.
FimResult fim(const Objective& objective, const std::vector<double>& best_fit, double rel_step = 1e-4,
              const SolverOptions& solver = {1e-9, 1e-12, 0.5, 2'000'000}, bool throw_if_singular = true);

// 1/sqrt(lambda_min) of the Gram matrix of unit-norm sensitivity columns.
// Infinity for a zero column or a singular Gram matrix.
double collinearity_index(const Eigen::MatrixXd& sensitivities);

inline constexpr double kIdentifiableGamma = 15.0;

struct FitResult {
  std::vector<std::string> names;
  std::vector<double> values;
  double j_opt = std::numeric_limits<double>::infinity();
  double sse = 0.0;         // unaveraged sigma-weighted sum of squares
  std::size_t points = 0;
  std::size_t evaluations = 0;
  std::size_t failed_evaluations = 0;
  Eigen::MatrixXd fim;
  Eigen::MatrixXd covariance;
  std::vector<double> cv_percent;
  Eigen::MatrixXd correlation;
  double gamma = std::numeric_limits<double>::infinity();
  double aic = std::numeric_limits<double>::infinity();
  double log_rde = -std::numeric_limits<double>::infinity();
  double inv_mod_e = 0.0;
  double j_crit = std::numeric_limits<double>::infinity();
  double fim_condition = 0.0;
  bool fim_singular = false;
  std::vector<double> rmse_per_series;  // raw units, problem series order
  std::vector<std::string> series_labels;

  double value(const std::string& name) const;
  // Largest |off-diagonal correlation|; 0 for a single parameter.
  double max_abs_correlation() const;
};

// Pattern search on the box [0,1]^p: polls +/- each coordinate, extends a
// successful direction, halves the mesh when no poll improves. Returns the
// minimizer in box coordinates.
struct PatternSearchResult {
  std::vector<double> x;
  double f = 0.0;
  std::size_t evaluations = 0;
};
PatternSearchResult pattern_search(const std::function<double(const std::vector<double>&)>& f,
                                   std::vector<double> x0, double mesh, double tolerance,
                                   std::size_t max_evaluations);

// Two-stage search: LHS-seeded global scatter over the bounds, then local
// pattern searches from the best start and from random perturbations of the
// incumbent. Throws NumericalError when no start simulates.
FitResult fit(const CalibrationProblem& problem, const FitOptions& options = {});

// Fills the identifiability block of `result` at its values.
void identifiability(const Objective& objective, FitResult& result, const FitOptions& options, double alpha = 0.05);

// J_opt * (1 + p/(N-p) * F_{1-alpha}(p, N-p)).
double beale_jcrit(double j_opt, std::size_t p, std::size_t n_data, double alpha = 0.05);

struct BealeGrid {
  std::vector<double> x, y;  // grid axes
  Eigen::MatrixXd j;         // x.size() x y.size()
  double j_crit = 0.0;
  // Grid points with J <= J_crit.
  std::vector<std::pair<double, double>> inside() const;
};

// Objective on a regular grid spanning +/- `half_width` standard deviations
// around a two-parameter best fit.
BealeGrid beale_grid(const Objective& objective, const FitResult& fit, std::size_t points = 21,
                     double half_width = 4.0);

// AIC = n ln(SSE/n) + 2p.
double aic(double sse, std::size_t n, std::size_t p);

struct SubsetRow {
  std::vector<std::string> subset;
  FitResult fit;
  std::string error;  // non-empty when the fit failed
  bool identifiable() const { return error.empty() && fit.gamma < kIdentifiableGamma; }
};

struct SubsetTable {
  std::vector<SubsetRow> rows;  // by size, then AIC
  std::optional<std::size_t> selected;  // index into rows
  std::size_t last_size = 0;            // largest size evaluated
};

// Fits every subset of sizes 1..max_size. A size is accepted when its best
// identifiable subset lowers the AIC of the previous size; the search stops at
// the first size that does not. The selected subset is the best identifiable
// one of the last accepted size.
SubsetTable subset_search(const CalibrationProblem& problem, std::size_t max_size, const FitOptions& options = {});

}  // namespace ndha
