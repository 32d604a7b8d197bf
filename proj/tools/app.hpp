#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndha/diagnostics.hpp"
#include "ndha/estimation.hpp"
#include "ndha/experiment_io.hpp"
#include "ndha/scenario.hpp"
#include "ndha/sensitivity.hpp"
#include "ndha/uncertainty.hpp"

namespace ndha::app {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kFailure = 1, kValidation = 2, kNumerical = 3 };

// Maps the exception hierarchy onto the exit-code contract.
int exit_code_for(const std::exception& e);

json to_json(const FitResult& fit);
FitResult fit_from_json(const json& j);
json to_json(const SubsetTable& table);
json to_json(const std::vector<SeriesDiagnostics>& rows);
json to_json(const SolverOptions& s);
json to_json(const FitOptions& o);

std::string dump(const json& j);

// Trajectory CSV: time_min, the 15 components, then the DO and N2O observables.
std::string trajectory_csv(const Trajectory& traj);

// Simulates a design at `interval_min`, adds Gaussian noise of
// `relative_sigma * max|y|` (AR(1) with coefficient `ar1` when nonzero) and
// attaches the noisy series as measurements.
struct SyntheticSeries {
  Observable observable = Observable::DO;
  double relative_sigma = 0.01;
};
Experiment synthesize(const Experiment& design, const ParameterSet& params, const std::vector<SyntheticSeries>& series,
                      double interval_min, double ar1, std::uint64_t seed, const SolverOptions& solver = {});

struct StageConfig {
  std::string id;
  std::vector<std::string> experiments;  // resolved paths
  std::vector<Observable> series;        // empty = all
  std::vector<std::string> candidates;
  // Explicit estimation set; when empty the subset search picks it.
  std::vector<std::string> estimate;
  std::vector<std::string> reopen;
  std::size_t max_subset = 2;
  std::map<std::string, Bound> bounds;
  bool sensitivity = true;
};

struct UncertaintyConfig {
  bool enabled = false;
  std::vector<std::string> experiments;
  std::vector<Observable> observables{Observable::DO, Observable::N2O};
  std::size_t samples = 100;
  double interval_min = 1.0;
};

struct ScenarioConfig {
  bool enabled = false;
  std::vector<double> do_levels, tno2_levels, tan_levels{70.0};
  double ph = 7.5;
  std::size_t uncertainty_samples = 0;  // 0 = grid only
};

struct PipelineConfig {
  std::string source;  // config file path, for messages
  std::string params_file;  // empty = model defaults
  std::string output_dir;
  std::uint64_t seed = 1;
  SolverOptions solver{};
  FitOptions fit{};
  std::size_t sensitivity_samples = 100;
  double sensitivity_interval_min = 2.0;
  std::vector<StageConfig> stages;
  UncertaintyConfig uncertainty;
  ScenarioConfig scenario;

  // Disjoint candidates unless re-opened, existing files, known names.
  void validate() const;
};

PipelineConfig parse_pipeline_config(const std::string& text, const std::string& base_dir = ".",
                                     const std::string& source = "<string>");
PipelineConfig load_pipeline_config(const std::string& path);

struct StageOutcome {
  std::string id;
  std::vector<std::string> estimated;
  FitResult fit;
  std::map<std::string, double> frozen_inputs;  // earlier estimates in force
};

// Runs every stage (sensitivity, subset search, fit, diagnostics), freezing
// estimates between stages, then the optional uncertainty and scenario steps.
// Writes artifacts under config.output_dir and a manifest.json. A checkpoint
// is written after each stage; with `resume` completed stages are reloaded
// instead of rerun.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, bool resume = false);

// Human-readable report of a pipeline output directory. Missing artifacts are
// named in a trailing section instead of failing.
std::string render_report(const std::string& dir);
// Per-stage estimates and criteria, coverage and scenario summary of a run
// directory, with a "missing" list like render_report.
json report_metrics(const std::string& dir);

// Parameter table (scenario, parameter, unit, best fit, CV, correlation, RMSE) for a list of stage fits.
std::string parameter_table(const std::vector<std::pair<std::string, FitResult>>& stages);
// Subset-selection table (AIC, log RDE, 1/modE, values, correlation, gamma).
std::string subset_table_text(const SubsetTable& table);

}  // namespace ndha::app
