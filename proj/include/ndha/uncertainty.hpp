#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndha/estimation.hpp"
#include "ndha/sensitivity.hpp"

namespace ndha {

enum class DistributionSource { Class, Calibrated };

struct ParameterDistribution {
  DistributionSource source = DistributionSource::Class;
  std::vector<ParameterRange> ranges;
  // Calibrated case only: best-fit means and covariance for correlated
  // sampling. Empty covariance means independent uniforms.
  std::vector<double> means;
  Eigen::MatrixXd covariance;
  bool correlated = false;

  // Class ranges of +/-10/25/50 % around the values in `params`.
  static ParameterDistribution from_classes(const ParameterSet& params, const std::vector<std::string>& names);
  // mean * (1 +/- z * CV) for each fitted parameter.
  static ParameterDistribution from_calibration(const std::vector<std::string>& names,
                                                const std::vector<double>& means, const std::vector<double>& cv_percent,
                                                double z = 1.96);
  static ParameterDistribution from_fit(const FitResult& fit, double z = 1.96, bool correlated = false);

  std::vector<std::string> names() const;
  void validate() const;
  // n x p samples. Independent mode is a plain LHS over the ranges.
  // Correlated mode maps LHS strata through the normal quantile, applies the
  // Cholesky factor of the covariance and clips to the ranges.
  Eigen::MatrixXd sample(std::size_t n, std::uint64_t seed) const;
};

struct PredictionBand {
  Observable observable = Observable::DO;
  std::vector<double> times_min;
  std::vector<double> lower, median, upper;
  std::vector<std::size_t> n_effective;
};

struct PropagationResult {
  std::vector<PredictionBand> bands;  // one per observable
  std::size_t samples = 0;
  std::size_t failed = 0;
  Eigen::MatrixXd parameter_samples;
  // outputs[k](i, t): observable k, successful sample i, time t.
  std::vector<Eigen::MatrixXd> outputs;
};

inline constexpr double kMaxFailureFraction = 0.10;

// Linear-interpolation quantile of a sorted sample (q in [0, 1]).
double quantile_sorted(const std::vector<double>& sorted, double q);

// Simulates `n_samples` parameter draws and takes pointwise 2.5/50/97.5 %
// quantiles on a uniform grid of `interval_min`. Failed simulations are
// excluded and counted; more than 10 % failures throws NumericalError.
PropagationResult propagate(const ParameterDistribution& dist, const Experiment& experiment,
                            const ParameterSet& base, std::size_t n_samples, std::uint64_t seed,
                            const std::vector<Observable>& observables, double interval_min = 1.0,
                            const SolverOptions& options = {});

struct ArilResult {
  double value = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // |data| below 1 % of the series maximum
};

// Mean of (upper - lower)/|data| with the band interpolated to the data times.
ArilResult aril(const PredictionBand& band, const std::vector<double>& times_min, const std::vector<double>& data);

struct CoverageResult {
  double pci = 0.0;
  double aril = 0.0;
  double puci = 0.0;  // PCI / ARIL
};

CoverageResult pci_puci(const PredictionBand& band, const std::vector<double>& times_min,
                        const std::vector<double>& data);

// CSV: time_min, lower, median, upper, n_effective.
std::string band_csv(const PredictionBand& band);

}  // namespace ndha
