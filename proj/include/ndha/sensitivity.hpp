#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndha/parameters.hpp"
#include "ndha/simulation.hpp"

namespace ndha {

struct ParameterRange {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
};

struct SamplePlan {
  std::vector<ParameterRange> ranges;
  std::size_t samples = 500;
  std::uint64_t seed = 1;

  // Uniform ranges of +/-10, 25 or 50 % around each value by uncertainty
  // class. An empty `names` list takes every parameter that is not fixed by
  // convention.
  static SamplePlan from_classes(const ParameterSet& params, std::vector<std::string> names, std::size_t samples,
                                 std::uint64_t seed);

  std::vector<std::string> names() const;
  void validate() const;
};

// samples x parameters. Each column holds one draw per stratum in a random
// order; the position inside a stratum is uniform.
Eigen::MatrixXd lhs_sample(const SamplePlan& plan);

// Applies one sample row to a parameter set.
ParameterSet apply_sample(const ParameterSet& base, const std::vector<std::string>& names,
                          const Eigen::Ref<const Eigen::RowVectorXd>& row);

inline constexpr double kSrcValidityR2 = 0.7;
inline constexpr double kSrcDisplayBeta2 = 0.02;

struct SrcResult {
  std::vector<std::string> names;
  std::vector<double> times_min;
  Eigen::MatrixXd beta;  // times x parameters
  std::vector<double> r2;
  std::vector<bool> valid;

  // beta^2 stacked over parameters in `order` (times x order.size()), the
  // layering of a dynamic cumulative sensitivity plot.
  Eigen::MatrixXd cumulative_beta2(const std::vector<std::string>& order) const;
  // Parameters whose beta^2 exceeds the display threshold somewhere valid.
  std::vector<std::string> displayed() const;
};

// Ordinary least squares of the standardized outputs on the standardized
// inputs, one regression per output column (time point). Standardization uses
// the population standard deviation. Output columns with zero variance give
// beta = 0, R^2 = 0. Throws NumericalError if the design is rank deficient.
SrcResult src_coefficients(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& outputs,
                           std::vector<std::string> names, std::vector<double> times_min);

struct RankEntry {
  std::string name;
  double score = 0.0;  // time-integrated beta^2 over valid points
};

// Orders parameters by beta^2 integrated with the trapezoid rule over the
// valid points inside [t0, t1] (a single valid point counts with unit weight).
// Fixed-by-convention parameters are dropped. Ties break alphabetically.
// Throws ValidationError when no valid point lies in the window.
std::vector<RankEntry> rank_parameters(const SrcResult& src, double t0_min, double t1_min);

struct SensitivityStudy {
  Eigen::MatrixXd samples;
  std::vector<SrcResult> results;  // one per requested observable
  std::size_t failed = 0;          // simulations that did not complete
};

// Runs the Monte-Carlo simulations of `plan` on one experiment and computes
// SRC per observable on a uniform grid of `interval_min`.
SensitivityStudy sensitivity_study(const Experiment& experiment, const ParameterSet& params, const SamplePlan& plan,
                                   const std::vector<Observable>& outputs, double interval_min = 1.0,
                                   const SolverOptions& options = {});

// CSV: time_min, R2, valid, one beta column per parameter.
std::string src_csv(const SrcResult& src);
// CSV: rank, parameter, score.
std::string ranking_csv(const std::vector<RankEntry>& ranking);

}  // namespace ndha
