#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ndha/estimation.hpp"

namespace ndha {

struct ResidualSeries {
  std::string label;
  std::vector<double> times_min;
  std::vector<double> residuals;  // y_sim - y_obs
  double sigma = 1.0;

  void validate() const;
};

// Residual series of every measured series in scope at the given parameters.
std::vector<ResidualSeries> residual_series(const Objective& objective, const ParameterSet& params);

struct QqSummary {
  double correlation = 0.0;      // ordered residuals vs normal scores
  double max_deviation = 0.0;    // largest |standardized residual - normal score|
  double lower_tail = 0.0;       // mean deviation over the lowest 5 %
  double upper_tail = 0.0;       // mean deviation over the highest 5 %
};

struct KsResult {
  double statistic = 0.0;
  double critical = 0.0;
  double p_value = 1.0;
  bool reject = false;
  std::size_t n = 0;
  QqSummary qq;
};

// Lilliefors test: sup |F_n - Phi((x - mean)/s)| with mean and s estimated.
// The critical value and p-value come from `replicates` seeded standard
// normal samples of the same size.
KsResult ks_normality(const std::vector<double>& residuals, double alpha = 0.05, std::size_t replicates = 10000,
                      std::uint64_t seed = 1);
double lilliefors_statistic(std::vector<double> x);

struct AcfResult {
  std::vector<double> values;  // lag 0 .. max_lag
  double band = 0.0;           // 1.96 / sqrt(n)
  std::size_t outside_band = 0;  // lags >= 1 beyond the band
};

// Biased estimator: c_k / c_0 with c_k = (1/n) sum (x_t - m)(x_{t+k} - m).
AcfResult acf(const std::vector<double>& x, std::size_t max_lag);

struct FTestResult {
  double statistic = 0.0;
  double critical = 0.0;
  double intercept = 0.0;
  double slope = 1.0;
  bool pass = false;  // fails to reject intercept 0, slope 1

  // "1 (2.9/3.0)": pass flag, then statistic over critical value.
  std::string format() const;
};

// Joint F-test of (intercept, slope) = (0, 1) for obs = a + b sim.
FTestResult f_test_unit_line(const std::vector<double>& obs, const std::vector<double>& sim, double alpha = 0.05);

struct MsepResult {
  double msep = 0.0;
  double me = 0.0;  // mean bias fraction
  double se = 0.0;  // slope fraction
  double nc = 0.0;  // random remainder
  bool defined = true;  // false when MSEP = 0
};

MsepResult msep_decomposition(const std::vector<double>& obs, const std::vector<double>& sim);

double rmse(const std::vector<double>& residuals);
// 1 - SS_res / SS_tot.
double r_squared(const std::vector<double>& obs, const std::vector<double>& sim);
// sqrt(MSE_validation / MSE_calibration).
double janus(const std::vector<double>& calibration_residuals, const std::vector<double>& validation_residuals);

struct SeriesDiagnostics {
  std::string label;
  std::size_t n = 0;
  double r2 = 0.0;
  MsepResult msep;
  double rmse = 0.0;
  FTestResult f_test;
  KsResult ks;
  AcfResult acf;
};

// Per-series diagnostics plus a pooled "combined" row when there is more
// than one series.
std::vector<SeriesDiagnostics> diagnose(const Objective& objective, const ParameterSet& params,
                                        std::size_t max_lag = 20, std::uint64_t seed = 1);
std::string diagnostics_table(const std::vector<SeriesDiagnostics>& rows);

// Keeps every k-th point of each measured series, k = round(interval / native
// spacing). Throws ValidationError when a series keeps fewer than 10 points.
Experiment decimate(const Experiment& experiment, double interval_min);

struct SubsampleRow {
  double interval_min = 0.0;
  std::size_t points = 0;
  FitResult fit;
  double acf_lag1 = 0.0;  // pooled residual ACF at lag 1
  std::size_t acf_outside = 0;
  FTestResult f_test;
};

// Refits the problem on decimated copies of its experiments, one row per
// interval.
std::vector<SubsampleRow> subsample_study(const CalibrationProblem& problem, const std::vector<double>& intervals_min,
                                          const FitOptions& options = {});
std::string subsample_table(const std::vector<SubsampleRow>& rows);

}  // namespace ndha
