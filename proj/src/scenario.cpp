#include "ndha/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"
#include "ndha/sensitivity.hpp"

namespace ndha {

namespace {

using Vec15 = Eigen::Matrix<double, kComponentCount, 1>;

constexpr Component kHeld[] = {Component::S_O2,  Component::S_TNO2, Component::S_TAN, Component::X_AOB,
                               Component::X_NOB, Component::X_HB,   Component::X_S,   Component::X_I};

StateVector to_state(const Vec15& v) {
  StateVector s;
  Eigen::Map<Vec15>(s.values.data()) = v;
  return s;
}

struct GasExchange {
  double deficit_o2;
  double ratio_n2o, ratio_no;
  double sat_n2o, sat_no;

  RateVector apply(const KineticModel& model, const StateVector& st) const {
    RateVector r = model.rates(st);
    const double uptake = std::max(0.0, -model.derivatives_from_rates(r)[Component::S_O2]);
    const double kla = uptake / deficit_o2;
    r[index(Process::Aeration)] = uptake;
    r[index(Process::StrippingN2O)] = ratio_n2o * kla * (st[Component::S_N2O] - sat_n2o);
    r[index(Process::StrippingNO)] = ratio_no * kla * (st[Component::S_NO] - sat_no);
    return r;
  }
};

double n2o_factor(const RateVector& r, const ParameterSet& params) {
  const double amo = r[index(Process::AerobicAMO)];
  return amo > 0.0 ? 100.0 * pathway_rates(r, params).total() / amo : 0.0;
}

}  // namespace

StateVector ScenarioSpec::default_biomass() {
  // 0.3 gVSS/L at 1.42 gCOD/gVSS split 45/1.5/25/28.5 % over AOB/NOB/HB/inerts.
  StateVector s;
  const double cod = 0.3 * 1.42 * 1000.0;
  s[Component::X_AOB] = 0.45 * cod;
  s[Component::X_NOB] = 0.015 * cod;
  s[Component::X_HB] = 0.25 * cod;
  s[Component::X_I] = 0.285 * cod;
  s[Component::X_S] = 20.0;
  return s;
}

void ScenarioSpec::validate() const {
  if (!(do_mg_l >= 0.0)) throw ValidationError("clamped DO must be >= 0");
  if (!(tno2_mg_n_l >= 0.0)) throw ValidationError("clamped TNO2 must be >= 0");
  if (!(tan_mg_n_l >= 0.0)) throw ValidationError("working TAN must be >= 0");
  if (!(horizon_days > 0.0)) throw ValidationError("scenario run length must be > 0");
  if (!(steadiness_tolerance > 0.0)) throw ValidationError("steadiness tolerance must be > 0");
  Environment env;
  env.ph = ph;
  env.temperature_c = temperature_c;
  env.validate();
  for (double v : biomass.values)
    if (!(v >= 0.0)) throw ValidationError("scenario biomass must be >= 0");
}

std::string_view scenario_status_name(ScenarioStatus s) {
  switch (s) {
    case ScenarioStatus::Steady: return "steady";
    case ScenarioStatus::NotSteady: return "not-steady";
    case ScenarioStatus::NoRemoval: return "no-removal";
  }
  return "?";
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const ParameterSet& params, const SolverOptions& options) {
  spec.validate();
  Environment env;
  env.ph = spec.ph;
  env.temperature_c = spec.temperature_c;
  env.aeration_enabled = false;
  env.stripping_enabled = false;
  const KineticModel model(params, env);

  StateVector x0 = spec.biomass;
  x0[Component::S_O2] = spec.do_mg_l;
  x0[Component::S_TNO2] = spec.tno2_mg_n_l;
  x0[Component::S_TAN] = spec.tan_mg_n_l;

  // Gas exchange follows the aeration the DO clamp implies: K_La(O2) is the
  // oxygen uptake over the saturation deficit, and N2O/NO transfer scale with
  // it by the ratio of their default coefficients.
  const double sat_o2 = params.value("Ssat_O2");
  if (!(spec.do_mg_l < sat_o2)) throw ValidationError("clamped DO must stay below oxygen saturation");
  const double kla_o2_ref = params.value("K_La.O2");
  if (!(kla_o2_ref > 0.0)) throw ValidationError("K_La.O2 must be > 0 in a scenario");
  const GasExchange gas{sat_o2 - spec.do_mg_l, params.value("K_La.N2O") / kla_o2_ref,
                        params.value("K_La.NO") / kla_o2_ref, params.value("Ssat_N2O"), params.value("Ssat_NO")};
  auto rates = [&](const StateVector& st) { return gas.apply(model, st); };

  struct Rhs {
    const KineticModel* model;
    const GasExchange* gas;
    Vec15 operator()(const Vec15& x) const {
      StateVector d = model->derivatives_from_rates(gas->apply(*model, to_state(x)));
      for (Component c : kHeld) d[c] = 0.0;
      return Eigen::Map<const Vec15>(d.values.data());
    }
  } rhs{&model, &gas};

  const double horizon_min = spec.horizon_days * kMinutesPerDay;
  const double tail_start = 0.9 * horizon_min;
  constexpr int kTailPoints = 50;
  std::vector<double> grid_days;
  for (int i = 0; i <= kTailPoints; ++i)
    grid_days.push_back((tail_start + (horizon_min - tail_start) * i / kTailPoints) / kMinutesPerDay);

  Rosenbrock4<kComponentCount> solver(integrator_options(options));

  ScenarioResult res;
  auto sink = [&](double t_day, const Vec15& x) {
    const StateVector s = to_state(x);
    res.tail.times_min.push_back(t_day * kMinutesPerDay);
    res.tail.states.push_back(s);
    res.tail.rates.push_back(rates(s));
  };
  try {
    solver.integrate(rhs, Eigen::Map<const Vec15>(x0.values.data()), 0.0, spec.horizon_days,
                     std::span<const double>(grid_days), sink);
  } catch (const IntegrationError& e) {
    throw IntegrationError(e.what(), e.time_min() * kMinutesPerDay);
  } catch (const NumericalError& e) {
    throw IntegrationError(e.what(), 0.0);
  }

  const RateVector& r_end = res.tail.rates.back();
  const StateVector d_end = model.derivatives_from_rates(r_end);
  res.ammonia_oxidation = r_end[index(Process::AerobicAMO)];
  res.do_supply = r_end[index(Process::Aeration)];
  res.tno2_supply = -d_end[Component::S_TNO2];
  res.tan_feed = -d_end[Component::S_TAN];
  if (!(res.ammonia_oxidation > 0.0)) {
    res.status = ScenarioStatus::NoRemoval;
    return res;
  }
  const PathwayContribution now = pathway_rates(r_end, params);
  res.n2o_production = now.total();
  res.factor_n2o = 100.0 * res.n2o_production / res.ammonia_oxidation;
  res.factor_no = 100.0 * r_end[index(Process::StrippingNO)] / res.ammonia_oxidation;

  const PathwayContribution window = pathway_fluxes(res.tail, params);
  res.share_nn = window.share_nn();
  res.share_nd = window.share_nd();
  res.share_hd = window.share_hd();

  const double f0 = n2o_factor(res.tail.rates.front(), params);
  const double scale = std::max(std::abs(res.factor_n2o), 1e-300);
  res.steadiness = std::abs(res.factor_n2o - f0) / scale;
  res.status = res.steadiness < spec.steadiness_tolerance ? ScenarioStatus::Steady : ScenarioStatus::NotSteady;
  return res;
}

std::vector<ScenarioCell> grid_scan(const std::vector<double>& do_levels, const std::vector<double>& tno2_levels,
                                    const std::vector<double>& tan_levels, const ParameterSet& params,
                                    const ScenarioSpec& base, const SolverOptions& options) {
  if (do_levels.empty() || tno2_levels.empty() || tan_levels.empty())
    throw ValidationError("every scenario level list must be nonempty");
  std::vector<ScenarioCell> cells;
  for (double tan : tan_levels)
    for (double tno2 : tno2_levels)
      for (double dox : do_levels) {
        ScenarioCell cell;
        cell.spec = base;
        cell.spec.do_mg_l = dox;
        cell.spec.tno2_mg_n_l = tno2;
        cell.spec.tan_mg_n_l = tan;
        try {
          cell.result = run_scenario(cell.spec, params, options);
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
        cells.push_back(std::move(cell));
      }
  return cells;
}

std::string grid_csv(const std::vector<ScenarioCell>& cells) {
  std::ostringstream out;
  out << "DO,TNO2,TAN,factor_N2O,factor_NO,share_NN,share_ND,share_HD,steadiness,status\n";
  for (const auto& c : cells) {
    out << format_double(c.spec.do_mg_l) << "," << format_double(c.spec.tno2_mg_n_l) << ","
        << format_double(c.spec.tan_mg_n_l) << ",";
    if (!c.error.empty()) {
      out << ",,,,,,failed\n";
      continue;
    }
    const auto& r = c.result;
    out << format_double(r.factor_n2o) << "," << format_double(r.factor_no) << "," << format_double(r.share_nn)
        << "," << format_double(r.share_nd) << "," << format_double(r.share_hd) << ","
        << format_double(r.steadiness) << "," << scenario_status_name(r.status) << "\n";
  }
  return out.str();
}

double ScenarioUncertainty::mean_relative() const {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += c.relative;
  return s / static_cast<double>(cells.size());
}

ScenarioUncertainty scenario_uncertainty(const std::vector<ScenarioSpec>& specs, const ParameterDistribution& dist,
                                         const ParameterSet& base, std::size_t n, std::uint64_t seed,
                                         const SolverOptions& options) {
  if (n < 50) throw ValidationError("scenario uncertainty needs at least 50 samples");
  if (specs.empty()) throw ValidationError("no scenario cell given");
  ScenarioUncertainty out;
  out.names = dist.names();
  out.samples = dist.sample(n, seed);
  for (const auto& spec : specs) {
    ScenarioUncertaintyCell cell;
    cell.spec = spec;
    std::vector<Eigen::Index> ok;
    std::string first_error;
    for (Eigen::Index i = 0; i < out.samples.rows(); ++i) {
      try {
        const ScenarioResult r = run_scenario(spec, apply_sample(base, out.names, out.samples.row(i)), options);
        if (r.status == ScenarioStatus::NoRemoval) {
          ++cell.excluded;
          continue;
        }
        cell.factors.push_back(r.factor_n2o);
        ok.push_back(i);
      } catch (const IntegrationError& e) {
        if (first_error.empty()) first_error = e.what();
        ++cell.excluded;
      }
    }
    if (static_cast<double>(cell.excluded) > kMaxFailureFraction * static_cast<double>(n)) {
      std::ostringstream msg;
      msg << cell.excluded << " of " << n << " scenario samples failed at DO " << spec.do_mg_l << ", TNO2 "
          << spec.tno2_mg_n_l << (first_error.empty() ? "" : " (first: " + first_error + ")");
      throw NumericalError(msg.str());
    }
    const auto m = static_cast<double>(cell.factors.size());
    for (double f : cell.factors) cell.mean += f / m;
    double var = 0.0;
    for (double f : cell.factors) var += (f - cell.mean) * (f - cell.mean);
    cell.sd = cell.factors.size() > 1 ? std::sqrt(var / (m - 1.0)) : 0.0;
    cell.se = cell.sd / std::sqrt(m);
    cell.relative = cell.mean != 0.0 ? cell.sd / std::abs(cell.mean) : 0.0;
    cell.variance_share.assign(out.names.size(), 0.0);

    // Variance shares from SRC; skipped when the output or an input does not vary.
    if (cell.sd > 0.0 && ok.size() > out.names.size() + 1) {
      Eigen::MatrixXd x(static_cast<Eigen::Index>(ok.size()), out.samples.cols());
      Eigen::MatrixXd y(static_cast<Eigen::Index>(ok.size()), 1);
      for (std::size_t k = 0; k < ok.size(); ++k) {
        x.row(static_cast<Eigen::Index>(k)) = out.samples.row(ok[k]);
        y(static_cast<Eigen::Index>(k), 0) = cell.factors[k];
      }
      try {
        const SrcResult src = src_coefficients(x, y, out.names, {0.0});
        cell.r2 = src.r2[0];
        for (std::size_t j = 0; j < out.names.size(); ++j)
          cell.variance_share[j] = src.beta(0, static_cast<Eigen::Index>(j)) * src.beta(0, static_cast<Eigen::Index>(j));
      } catch (const NumericalError&) {
      }
    }
    out.cells.push_back(std::move(cell));
  }
  return out;
}

std::string uncertainty_csv(const ScenarioUncertainty& u) {
  std::ostringstream out;
  out << "DO,TNO2,TAN,mean,sd,se,relative,R2";
  for (const auto& n : u.names) out << "," << n;
  out << "\n";
  for (const auto& c : u.cells) {
    out << format_double(c.spec.do_mg_l) << "," << format_double(c.spec.tno2_mg_n_l) << ","
        << format_double(c.spec.tan_mg_n_l) << "," << format_double(c.mean) << "," << format_double(c.sd) << ","
        << format_double(c.se) << "," << format_double(c.relative) << "," << format_double(c.r2);
    for (double s : c.variance_share) out << "," << format_double(s);
    out << "\n";
  }
  return out.str();
}

}  // namespace ndha
