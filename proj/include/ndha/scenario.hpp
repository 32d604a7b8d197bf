#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ndha/simulation.hpp"
#include "ndha/uncertainty.hpp"

namespace ndha {

struct ScenarioSpec {
  double do_mg_l = 1.0;       // clamped
  double tno2_mg_n_l = 0.0;   // clamped
  double tan_mg_n_l = 70.0;   // held by an ideal feed
  double ph = 7.5;
  double temperature_c = 25.0;
  // Particulate pools (X_AOB, X_NOB, X_HB, X_S, X_I) are held at these values;
  // the other components start from them.
  StateVector biomass = default_biomass();
  double horizon_days = 10.0;
  double steadiness_tolerance = 1e-4;

  static StateVector default_biomass();
  void validate() const;
};

enum class ScenarioStatus { Steady, NotSteady, NoRemoval };
std::string_view scenario_status_name(ScenarioStatus s);

struct ScenarioResult {
  ScenarioStatus status = ScenarioStatus::Steady;
  double factor_n2o = 0.0;  // % of ammonia-oxidation N emitted as N2O-N
  double factor_no = 0.0;
  double share_nn = 0.0, share_nd = 0.0, share_hd = 0.0;
  double steadiness = 0.0;  // relative change of factor_n2o over the trailing 10 %
  double ammonia_oxidation = 0.0;  // mgN/L/d
  double n2o_production = 0.0;     // mgN/L/d, NN + ND + net HD
  // Fluxes needed to hold the clamps (mg/L/d).
  double do_supply = 0.0, tno2_supply = 0.0, tan_feed = 0.0;
  // Trailing 10 % of the run (times in minutes), the window the shares
  // are integrated over.
  Trajectory tail;
};

// Integrates with DO, TNO2, TAN and the particulate pools held fixed. The
// aeration rate is whatever holds the DO clamp; N2O and NO are stripped with
// K_La values proportional to the K_La(O2) that rate implies, so every flux
// scales with biomass. The N2O factor is the pathway production (NN + ND +
// HD) over the TAN consumed by ammonia oxidation at the end of the horizon.
// Throws ValidationError when the DO clamp is not below Ssat_O2.
ScenarioResult run_scenario(const ScenarioSpec& spec, const ParameterSet& params, const SolverOptions& options = {});

struct ScenarioCell {
  ScenarioSpec spec;
  ScenarioResult result;
  std::string error;  // non-empty when the cell failed
};

std::vector<ScenarioCell> grid_scan(const std::vector<double>& do_levels, const std::vector<double>& tno2_levels,
                                    const std::vector<double>& tan_levels, const ParameterSet& params,
                                    const ScenarioSpec& base = {}, const SolverOptions& options = {});

// CSV: DO, TNO2, TAN, factor_N2O, factor_NO, share_NN, share_ND, share_HD,
// steadiness, status.
std::string grid_csv(const std::vector<ScenarioCell>& cells);

struct ScenarioUncertaintyCell {
  ScenarioSpec spec;
  std::vector<double> factors;  // successful samples only
  std::size_t excluded = 0;     // failed or no-removal samples
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;         // sd / sqrt(n)
  double relative = 0.0;   // sd / mean
  double r2 = 0.0;
  std::vector<double> variance_share;  // beta^2 per distribution parameter
};

struct ScenarioUncertainty {
  std::vector<std::string> names;
  Eigen::MatrixXd samples;
  std::vector<ScenarioUncertaintyCell> cells;

  double mean_relative() const;
};

// Monte-Carlo of the N2O factor on every cell with one shared LHS sample.
ScenarioUncertainty scenario_uncertainty(const std::vector<ScenarioSpec>& cells, const ParameterDistribution& dist,
                                         const ParameterSet& base, std::size_t n, std::uint64_t seed,
                                         const SolverOptions& options = {});

// CSV: DO, TNO2, TAN, mean, sd, se, relative, R2, one variance share per
// parameter.
std::string uncertainty_csv(const ScenarioUncertainty& u);

}  // namespace ndha
