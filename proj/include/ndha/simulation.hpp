#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ndha/integrator.hpp"
#include "ndha/model.hpp"

namespace ndha {

inline constexpr double kMinutesPerDay = 1440.0;

// Series that can be measured or requested from a trajectory.
enum class Observable { DO, N2O, TAN, TNO2, NH2OH };

std::string_view observable_name(Observable o);
std::optional<Observable> observable_from_name(std::string_view name);
Component observable_component(Observable o);

struct Pulse {
  double time_min = 0.0;
  Component species = Component::S_TAN;
  double delta = 0.0;  // mgN/L, or mgCOD/L for S_S
};

// Species that may be spiked into an assay.
bool is_pulse_species(Component c);

struct MeasuredSeries {
  Observable observable = Observable::DO;
  std::vector<double> times_min;
  std::vector<double> values;
  double sigma = 1.0;
  std::string source;  // file the values came from, if any
};

struct Experiment {
  std::string label;
  Environment environment;
  StateVector initial;
  std::vector<Pulse> pulses;
  double horizon_min = 0.0;
  std::vector<MeasuredSeries> measured;
  // Endogenous decay/hydrolysis run applied to `initial` before the assay
  // starts (0 = none). See resolve_initial_state.
  double precondition_min = 0.0;

  // Throws ValidationError on the first violated invariant.
  void validate() const;
};

struct SolverOptions {
  double rtol = 1e-6;
  double atol = 1e-9;
  double report_interval_min = 0.5;
  std::size_t max_steps = 2'000'000;
};

// Integrator settings for the model: S_IC is bookkeeping and may go negative.
IntegratorOptions integrator_options(const SolverOptions& options);

struct Trajectory {
  std::vector<double> times_min;
  std::vector<StateVector> states;
  std::vector<RateVector> rates;

  std::size_t size() const { return times_min.size(); }
};

// Integrates only lysis, hydrolysis and heterotrophic growth for `duration_min`
// under `env`, the state of washed biomass waiting for an assay.
StateVector precondition_biomass(const StateVector& initial, const ParameterSet& params, const Environment& env,
                                 double duration_min, const SolverOptions& options = {});

// Applies the experiment's preconditioning (with default parameters, aerated),
// keeps the particulate pools it produced and resets every soluble component
// to the experiment's initial value (washed biomass). Returns a copy with
// precondition_min = 0.
Experiment resolve_initial_state(const Experiment& experiment, const SolverOptions& options = {});

// Adaptive stiff integration between pulses. Pulses are instantaneous jumps;
// at a pulse time the stored state is the post-pulse one. The output grid is
// the union of the reporting grid, measurement times and pulse times.
Trajectory simulate(const Experiment& experiment, const ParameterSet& params, const SolverOptions& options = {});

// Same, sampled only at the requested times (sorted, within the horizon).
Trajectory simulate_at(const Experiment& experiment, const ParameterSet& params, std::vector<double> times_min,
                       const SolverOptions& options = {});

struct PathwayContribution {
  double nn = 0.0;  // mgN/L of N2O
  double nd = 0.0;
  double hd = 0.0;  // heterotrophic NO reduction; N2O reduction is a sink, not a pathway

  double total() const { return nn + nd + hd; }
  double share_nn() const { return total() > 0.0 ? nn / total() : 0.0; }
  double share_nd() const { return total() > 0.0 ? nd / total() : 0.0; }
  double share_hd() const { return total() > 0.0 ? hd / total() : 0.0; }
};

// Instantaneous N2O fluxes (mgN/L/d) attributed to each pathway. Autotrophic
// NO reduction is split between NN and ND in proportion to the NO produced by
// the NH2OH-to-NO route and by nitrite reduction.
PathwayContribution pathway_rates(const RateVector& rates, const ParameterSet& params);

// Cumulative contributions over the trajectory by trapezoidal integration of
// the stored process rates.
PathwayContribution pathway_fluxes(const Trajectory& trajectory, const ParameterSet& params);

// Linear interpolation of one observable onto the requested times. Times
// outside the trajectory raise ValidationError.
std::vector<double> observables(const Trajectory& trajectory, Observable series, const std::vector<double>& times_min);

}  // namespace ndha
