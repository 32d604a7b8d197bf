#include "ndha/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <sstream>

#include "ndha/errors.hpp"

namespace ndha {

namespace {

constexpr std::array<std::string_view, 5> kObservableNames = {"DO", "N2O", "TAN", "TNO2", "NH2OH"};

using Vec15 = Eigen::Matrix<double, kComponentCount, 1>;

Vec15 to_vec(const StateVector& s) { return Eigen::Map<const Vec15>(s.values.data()); }

StateVector to_state(const Vec15& v) {
  StateVector s;
  Eigen::Map<Vec15>(s.values.data()) = v;
  return s;
}

struct ModelRhs {
  const KineticModel* model;
  ProcessMask mask;
  Vec15 operator()(const Vec15& x) const { return to_vec(model->derivatives(to_state(x), mask)); }
};

std::vector<double> merge_times(std::vector<double> times) {
  std::sort(times.begin(), times.end());
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times)
    if (out.empty() || t - out.back() > 1e-9) out.push_back(t);
  return out;
}

// Integrates through the pulse schedule and records states at `grid` (sorted,
// minutes). Post-pulse states are stored at pulse times.
Trajectory run(const KineticModel& model, const ProcessMask& mask, const StateVector& initial,
               const std::vector<Pulse>& pulses_in, double horizon_min, const std::vector<double>& grid,
               const SolverOptions& options) {
  std::vector<Pulse> pulses = pulses_in;
  std::stable_sort(pulses.begin(), pulses.end(),
                   [](const Pulse& a, const Pulse& b) { return a.time_min < b.time_min; });

  const IntegratorOptions iopt = integrator_options(options);

  Trajectory traj;
  traj.times_min.reserve(grid.size());
  traj.states.reserve(grid.size());
  traj.rates.reserve(grid.size());
  auto record = [&](double t_min, const StateVector& s) {
    if (!traj.times_min.empty() && std::abs(traj.times_min.back() - t_min) < 1e-9) {
      traj.states.back() = s;
      traj.rates.back() = model.rates(s, mask);
      return;
    }
    traj.times_min.push_back(t_min);
    traj.states.push_back(s);
    traj.rates.push_back(model.rates(s, mask));
  };

  ModelRhs rhs{&model, mask};
  std::vector<double> grid_days(grid.size());
  std::transform(grid.begin(), grid.end(), grid_days.begin(), [](double t) { return t / kMinutesPerDay; });

  StateVector state = initial;
  double t_min = 0.0;
  std::size_t next_pulse = 0;
  auto apply_pulses_at = [&](double t) {
    while (next_pulse < pulses.size() && std::abs(pulses[next_pulse].time_min - t) < 1e-9) {
      state[pulses[next_pulse].species] += pulses[next_pulse].delta;
      ++next_pulse;
    }
  };

  apply_pulses_at(0.0);
  if (!grid.empty() && grid.front() <= 1e-9) record(0.0, state);

  while (t_min < horizon_min) {
    const double seg_end = next_pulse < pulses.size() ? std::min(pulses[next_pulse].time_min, horizon_min)
                                                      : horizon_min;
    Rosenbrock4<kComponentCount> solver(iopt);
    const auto sink = [&](double t_day, const Vec15& x) { record(t_day * kMinutesPerDay, to_state(x)); };
    try {
      Vec15 x = solver.integrate(rhs, to_vec(state), t_min / kMinutesPerDay, seg_end / kMinutesPerDay,
                                 std::span<const double>(grid_days), sink);
      state = to_state(x);
    } catch (const IntegrationError& e) {
      throw IntegrationError(std::string(e.what()) + " (days; segment starting at " + std::to_string(t_min) +
                                 " min)",
                             e.time_min() * kMinutesPerDay);
    } catch (const NumericalError& e) {
      throw IntegrationError(std::string(e.what()) + " in segment starting at " + std::to_string(t_min) + " min",
                             t_min);
    }
    t_min = seg_end;
    if (next_pulse < pulses.size() && std::abs(pulses[next_pulse].time_min - t_min) < 1e-9) {
      apply_pulses_at(t_min);
      if (std::binary_search(grid.begin(), grid.end(), t_min,
                             [](double a, double b) { return a < b - 1e-9; }))
        record(t_min, state);
    }
  }
  return traj;
}

}  // namespace

IntegratorOptions integrator_options(const SolverOptions& options) {
  IntegratorOptions iopt;
  iopt.rtol = options.rtol;
  iopt.atol = options.atol;
  iopt.max_steps = options.max_steps;
  iopt.sign_exempt = std::uint64_t{1} << index(Component::S_IC);
  return iopt;
}

std::string_view observable_name(Observable o) { return kObservableNames[static_cast<std::size_t>(o)]; }

std::optional<Observable> observable_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kObservableNames.size(); ++i)
    if (kObservableNames[i] == name) return static_cast<Observable>(i);
  return std::nullopt;
}

Component observable_component(Observable o) {
  switch (o) {
    case Observable::DO: return Component::S_O2;
    case Observable::N2O: return Component::S_N2O;
    case Observable::TAN: return Component::S_TAN;
    case Observable::TNO2: return Component::S_TNO2;
    case Observable::NH2OH: return Component::S_NH2OH;
  }
  return Component::S_O2;
}

bool is_pulse_species(Component c) {
  using C = Component;
  return c == C::S_TAN || c == C::S_NH2OH || c == C::S_TNO2 || c == C::S_NO3 || c == C::S_N2O || c == C::S_S;
}

void Experiment::validate() const {
  const std::string who = label.empty() ? "experiment" : "experiment '" + label + "'";
  environment.validate();
  if (!(horizon_min > 0.0)) throw ValidationError(who + ": horizon must be > 0");
  if (precondition_min < 0.0) throw ValidationError(who + ": precondition time must be >= 0");
  for (std::size_t i = 0; i < kComponentCount; ++i)
    if (!(initial.values[i] >= 0.0))
      throw ValidationError(who + ": initial " + std::string(component_name(static_cast<Component>(i))) +
                            " must be >= 0");
  for (const auto& p : pulses) {
    if (!is_pulse_species(p.species))
      throw ValidationError(who + ": " + std::string(component_name(p.species)) + " cannot be pulsed");
    if (!(p.delta > 0.0)) throw ValidationError(who + ": pulse delta must be > 0");
    if (p.time_min < 0.0 || p.time_min > horizon_min)
      throw ValidationError(who + ": pulse at " + std::to_string(p.time_min) + " min is outside the horizon");
  }
  for (const auto& m : measured) {
    if (!(m.sigma > 0.0))
      throw ValidationError(who + ": sigma of " + std::string(observable_name(m.observable)) + " must be > 0");
    if (m.times_min.size() != m.values.size())
      throw ValidationError(who + ": measured series length mismatch");
    for (std::size_t i = 0; i < m.times_min.size(); ++i) {
      if (m.times_min[i] < 0.0 || m.times_min[i] > horizon_min)
        throw ValidationError(who + ": measurement at " + std::to_string(m.times_min[i]) +
                              " min is outside the horizon");
      if (i > 0 && !(m.times_min[i] > m.times_min[i - 1]))
        throw ValidationError(who + ": measurement times must be strictly increasing");
      if (!std::isfinite(m.values[i])) throw ValidationError(who + ": measured value is not finite");
    }
  }
}

StateVector precondition_biomass(const StateVector& initial, const ParameterSet& params, const Environment& env,
                                 double duration_min, const SolverOptions& options) {
  if (duration_min < 0.0) throw ValidationError("preconditioning duration must be >= 0");
  if (duration_min == 0.0) return initial;
  ProcessMask mask;
  for (std::size_t j = index(Process::AerobicHBGrowth); j <= index(Process::HydrolysisAnaerobic); ++j) mask.set(j);
  for (Process p : {Process::Aeration, Process::StrippingN2O, Process::StrippingNO}) mask.set(index(p));
  const KineticModel model(params, env);
  const Trajectory traj = run(model, mask, initial, {}, duration_min, {duration_min}, options);
  return traj.states.back();
}

Experiment resolve_initial_state(const Experiment& experiment, const SolverOptions& options) {
  Experiment out = experiment;
  if (experiment.precondition_min <= 0.0) return out;
  Environment aerated = experiment.environment;
  aerated.aeration_enabled = true;
  out.initial = precondition_biomass(experiment.initial, ParameterSet::defaults(), aerated,
                                     experiment.precondition_min, options);
  // The biomass is washed before the assay: soluble pools return to the
  // document's values, only the particulates carry over.
  for (std::size_t i = 0; i < kComponentCount; ++i)
    if (component_name(static_cast<Component>(i)).starts_with("S_")) out.initial.values[i] = experiment.initial.values[i];
  out.precondition_min = 0.0;
  return out;
}

Trajectory simulate(const Experiment& experiment_in, const ParameterSet& params, const SolverOptions& options) {
  const Experiment experiment = resolve_initial_state(experiment_in, options);
  experiment.validate();
  std::vector<double> grid;
  const double step = options.report_interval_min;
  if (!(step > 0.0)) throw ValidationError("reporting interval must be > 0");
  const auto n = static_cast<std::size_t>(std::floor(experiment.horizon_min / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) grid.push_back(static_cast<double>(i) * step);
  grid.push_back(experiment.horizon_min);
  for (const auto& m : experiment.measured) grid.insert(grid.end(), m.times_min.begin(), m.times_min.end());
  for (const auto& p : experiment.pulses) grid.push_back(p.time_min);
  return simulate_at(experiment, params, merge_times(std::move(grid)), options);
}

Trajectory simulate_at(const Experiment& experiment_in, const ParameterSet& params, std::vector<double> times_min,
                       const SolverOptions& options) {
  const Experiment experiment = resolve_initial_state(experiment_in, options);
  experiment.validate();
  times_min = merge_times(std::move(times_min));
  if (!times_min.empty() && (times_min.front() < 0.0 || times_min.back() > experiment.horizon_min + 1e-9))
    throw ValidationError("requested output time outside the experiment horizon");
  const KineticModel model(params, experiment.environment);
  return run(model, all_processes(), experiment.initial, experiment.pulses, experiment.horizon_min, times_min,
             options);
}

PathwayContribution pathway_rates(const RateVector& r, const ParameterSet& params) {
  const double y_aob = params.value("Y_AOB");
  const double y_hb = params.value("Y_HB");
  const double one_electron = (1.0 - y_hb) / (0.57 * y_hb);
  const double no_nn = r[index(Process::AerobicHAONO)] / y_aob;
  const double no_nd = 4.0 * r[index(Process::AnoxicAOBNIR)];
  const double autotrophic = 3.0 * r[index(Process::AnoxicAOBNOR)];
  PathwayContribution out;
  if (no_nn + no_nd > 0.0) {
    out.nn = autotrophic * no_nn / (no_nn + no_nd);
    out.nd = autotrophic * no_nd / (no_nn + no_nd);
  } else {
    out.nn = autotrophic;
  }
  out.hd = one_electron * r[index(Process::AnoxicHBNOR)];
  return out;
}

PathwayContribution pathway_fluxes(const Trajectory& traj, const ParameterSet& params) {
  PathwayContribution total;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    const double dt_day = (traj.times_min[i] - traj.times_min[i - 1]) / kMinutesPerDay;
    const auto a = pathway_rates(traj.rates[i - 1], params);
    const auto b = pathway_rates(traj.rates[i], params);
    total.nn += 0.5 * dt_day * (a.nn + b.nn);
    total.nd += 0.5 * dt_day * (a.nd + b.nd);
    total.hd += 0.5 * dt_day * (a.hd + b.hd);
  }
  return total;
}

std::vector<double> observables(const Trajectory& traj, Observable series, const std::vector<double>& times_min) {
  if (traj.size() == 0) throw ValidationError("empty trajectory");
  const Component c = observable_component(series);
  std::vector<double> out;
  out.reserve(times_min.size());
  const auto& t = traj.times_min;
  for (double q : times_min) {
    if (q < t.front() - 1e-9 || q > t.back() + 1e-9) {
      std::ostringstream msg;
      msg << "time " << q << " min is outside the trajectory [" << t.front() << ", " << t.back() << "]";
      throw ValidationError(msg.str());
    }
    auto it = std::lower_bound(t.begin(), t.end(), q - 1e-9);
    const auto i = static_cast<std::size_t>(it - t.begin());
    if (i < t.size() && std::abs(t[i] - q) <= 1e-9) {
      out.push_back(traj.states[i][c]);
      continue;
    }
    const double w = (q - t[i - 1]) / (t[i] - t[i - 1]);
    out.push_back((1.0 - w) * traj.states[i - 1][c] + w * traj.states[i][c]);
  }
  return out;
}

}  // namespace ndha
