#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ndha/errors.hpp"
#include "ndha/experiment_io.hpp"
#include "ndha/simulation.hpp"

using namespace ndha;
namespace fs = std::filesystem;

namespace {

const std::string kData = std::string(NDHA_SOURCE_DIR) + "/data/";

ParameterSet reference_params() { return load_parameter_file(kData + "params/reference.params"); }

std::vector<Experiment> shipped_experiments() {
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(kData + "experiments")) paths.push_back(e.path().string());
  std::sort(paths.begin(), paths.end());
  std::vector<Experiment> out;
  for (const auto& p : paths) out.push_back(load_experiment(p));
  return out;
}

Experiment batch(double horizon_min) {
  Experiment e;
  e.label = "batch";
  e.horizon_min = horizon_min;
  e.initial[Component::S_O2] = 8.0;
  e.initial[Component::X_AOB] = 300;
  e.initial[Component::X_NOB] = 10;
  e.initial[Component::X_HB] = 100;
  e.initial[Component::X_S] = 20;
  e.initial[Component::X_I] = 300;
  return e;
}

// Classical RK4 on the preconditioning process subset, fixed step in minutes.
StateVector rk4_precondition(StateVector x, const ParameterSet& p, const Environment& env, double minutes,
                             double dt_min) {
  const KineticModel model(p, env);
  ProcessMask mask;
  for (Process q : {Process::AerobicHBGrowth, Process::AnoxicHBNAR, Process::AnoxicHBNIR, Process::AnoxicHBNOR,
                    Process::AnoxicHBNOS, Process::LysisAOB, Process::LysisNOB, Process::LysisHB,
                    Process::HydrolysisAerobic, Process::HydrolysisAnoxic, Process::HydrolysisAnaerobic,
                    Process::Aeration, Process::StrippingN2O, Process::StrippingNO})
    mask.set(index(q));
  const double h = dt_min / kMinutesPerDay;
  auto f = [&](const StateVector& s) { return model.derivatives(s, mask); };
  auto axpy = [](const StateVector& a, double k, const StateVector& b) {
    StateVector o;
    for (std::size_t i = 0; i < kComponentCount; ++i) o.values[i] = a.values[i] + k * b.values[i];
    return o;
  };
  const auto steps = static_cast<std::size_t>(std::llround(minutes / dt_min));
  for (std::size_t n = 0; n < steps; ++n) {
    const auto k1 = f(x);
    const auto k2 = f(axpy(x, h / 2, k1));
    const auto k3 = f(axpy(x, h / 2, k2));
    const auto k4 = f(axpy(x, h, k3));
    for (std::size_t i = 0; i < kComponentCount; ++i)
      x.values[i] += h / 6 * (k1.values[i] + 2 * k2.values[i] + 2 * k3.values[i] + k4.values[i]);
  }
  return x;
}

}  // namespace

TEST(Precondition, ZeroDurationIsIdentity) {
  const auto e = batch(10);
  EXPECT_EQ(precondition_biomass(e.initial, ParameterSet::defaults(), e.environment, 0.0), e.initial);
}

TEST(Precondition, MatchesFixedStepRk4) {
  Environment env;
  env.aeration_enabled = true;
  StateVector s = batch(1).initial;
  s[Component::S_S] = 10;
  s[Component::S_TAN] = 5;
  s[Component::S_NO3] = 2;
  s[Component::X_S] = 80;
  const auto& p = ParameterSet::defaults();
  const SolverOptions tight{1e-10, 1e-12, 0.5, 2'000'000};
  const auto got = precondition_biomass(s, p, env, 720.0, tight);
  const auto ref = rk4_precondition(s, p, env, 720.0, 0.001);
  for (std::size_t i = 0; i < kComponentCount; ++i)
    EXPECT_NEAR(got.values[i], ref.values[i], 1e-7 * std::max(1.0, std::abs(ref.values[i])))
        << component_name(static_cast<Component>(i));
}

TEST(Precondition, WashedBiomassResetsSolubles) {
  Experiment e = batch(10);
  e.initial[Component::S_TAN] = 2.0;
  e.precondition_min = 720;
  const auto r = resolve_initial_state(e);
  EXPECT_EQ(r.precondition_min, 0.0);
  EXPECT_EQ(r.initial[Component::S_TAN], 2.0);
  EXPECT_EQ(r.initial[Component::S_O2], 8.0);
  // no AOB growth in the preconditioning subset, only lysis
  EXPECT_LT(r.initial[Component::X_AOB], e.initial[Component::X_AOB]);
  EXPECT_GT(r.initial[Component::X_I], e.initial[Component::X_I]);
}

TEST(Simulate, ZeroBiomassNoPulsesIsConstant) {
  Experiment e;
  e.horizon_min = 30;
  e.initial[Component::S_TAN] = 5;
  e.initial[Component::S_O2] = 3;
  const auto t = simulate(e, ParameterSet::defaults());
  for (const auto& s : t.states) EXPECT_EQ(s, e.initial);
}

TEST(Simulate, HydrolysisFeedsGrowthAndCodDoesNotRise) {
  Experiment e;
  e.horizon_min = 4000;
  e.environment.aeration_enabled = true;
  e.initial[Component::S_O2] = 8;
  e.initial[Component::S_TAN] = 20;
  e.initial[Component::X_HB] = 20;
  e.initial[Component::X_S] = 60;
  const auto t = simulate(e, ParameterSet::defaults());
  auto cod = [](const StateVector& s) {
    return s[Component::S_S] + s[Component::X_AOB] + s[Component::X_NOB] + s[Component::X_HB] +
           s[Component::X_S] + s[Component::X_I];
  };
  std::size_t peak = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.states[i][Component::S_S] > t.states[peak][Component::S_S]) peak = i;
    if (i > 0) EXPECT_LE(cod(t.states[i]), cod(t.states[i - 1]) + 1e-7);
  }
  EXPECT_GT(peak, 0u);
  EXPECT_LT(t.states.back()[Component::S_S], t.states[peak][Component::S_S]);
}

TEST(Simulate, AnoxicN2oPulseDecaysMonotonically) {
  Experiment e = batch(120);
  e.initial[Component::S_O2] = 0;
  e.initial[Component::S_S] = 30;
  e.initial[Component::S_TAN] = 5;
  e.pulses.push_back({10, Component::S_N2O, 1.0});
  const auto t = simulate(e, reference_params());
  double last = 1e9;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t.times_min[i] < 10) continue;
    const double n2o = t.states[i][Component::S_N2O];
    EXPECT_LE(n2o, last + 1e-12);
    last = n2o;
  }
  EXPECT_LT(last, 0.9);
}

TEST(Simulate, AmmoniumPulseDrivesAnoxiaAndN2oRise) {
  Experiment e = batch(240);
  e.pulses.push_back({10, Component::S_TAN, 20.0});
  const auto t = simulate(e, reference_params());
  const auto do_series = observables(t, Observable::DO, t.times_min);
  const auto n2o = observables(t, Observable::N2O, t.times_min);
  std::size_t onset = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    if (do_series[i] < 0.05) {
      onset = i;
      break;
    }
  ASSERT_GT(onset, 0u) << "DO never reached anoxia";
  // N2O accumulation rate after onset exceeds the aerobic rate before it
  const std::size_t before = onset / 2;
  const double aerobic_rate = (n2o[onset] - n2o[before]) / (t.times_min[onset] - t.times_min[before]);
  const std::size_t after = std::min(t.size() - 1, onset + 20);
  const double anoxic_rate = (n2o[after] - n2o[onset]) / (t.times_min[after] - t.times_min[onset]);
  EXPECT_GT(anoxic_rate, 2.0 * aerobic_rate);
}

TEST(Simulate, PulseChangesOnlyThePulsedComponent) {
  Experiment a = batch(30);
  a.initial[Component::S_TAN] = 5;
  Experiment b = a;
  b.pulses.push_back({30, Component::S_TAN, 4.0});
  const auto ta = simulate(a, ParameterSet::defaults());
  const auto tb = simulate(b, ParameterSet::defaults());
  StateVector expected = ta.states.back();
  expected[Component::S_TAN] += 4.0;
  EXPECT_EQ(tb.states.back(), expected);
}

TEST(Simulate, BitIdenticalRepeats) {
  const auto e = load_experiment(kData + "experiments/amo_1.yaml");
  const auto a = simulate(e, reference_params());
  const auto b = simulate(e, reference_params());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.times_min[i], b.times_min[i]);
    EXPECT_EQ(a.states[i], b.states[i]);
  }
}

TEST(Simulate, ClosedVesselConservesNitrogen) {
  const auto p = reference_params();
  for (auto e : shipped_experiments()) {
    e.environment.aeration_enabled = false;
    e.environment.stripping_enabled = false;
    const auto t = simulate(e, p);
    const double n0 = total_nitrogen(t.states.front(), p);
    const double zero = total_nitrogen(StateVector{}, p);
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      // pulses add nitrogen; states at a pulse time are post-pulse
      double added = 0.0;
      for (const auto& pu : e.pulses) {
        if (pu.time_min <= 0.0 || pu.time_min > t.times_min[i]) continue;
        StateVector d{};
        d[pu.species] = pu.delta;
        added += total_nitrogen(d, p) - zero;
      }
      worst = std::max(worst, std::abs(total_nitrogen(t.states[i], p) - n0 - added) / (n0 + added));
    }
    EXPECT_LT(worst, 1e-6) << e.label;
  }
}

TEST(Simulate, HalvedToleranceMovesObservablesLessThanSigma) {
  const auto p = reference_params();
  const SolverOptions base{};
  const SolverOptions half{base.rtol / 2, base.atol / 2, base.report_interval_min, base.max_steps};
  for (const auto& e : shipped_experiments()) {
    const auto a = simulate(e, p, base);
    const auto b = simulate(e, p, half);
    for (const auto& m : e.measured) {
      const auto ya = observables(a, m.observable, m.times_min);
      const auto yb = observables(b, m.observable, m.times_min);
      double worst = 0.0;
      for (std::size_t i = 0; i < ya.size(); ++i) worst = std::max(worst, std::abs(ya[i] - yb[i]));
      EXPECT_LT(worst, m.sigma) << e.label << " " << observable_name(m.observable);
    }
  }
}

TEST(Observables, GridPointsExactMidpointsAveraged) {
  const auto e = load_experiment(kData + "experiments/nob_1.yaml");
  const auto t = simulate(e, reference_params());
  const std::vector<double> at = {t.times_min[3], t.times_min[40]};
  const auto y = observables(t, Observable::DO, at);
  EXPECT_EQ(y[0], t.states[3][Component::S_O2]);
  EXPECT_EQ(y[1], t.states[40][Component::S_O2]);
  const double mid = 0.5 * (t.times_min[10] + t.times_min[11]);
  const auto m = observables(t, Observable::DO, {mid});
  EXPECT_DOUBLE_EQ(m[0], 0.5 * (t.states[10][Component::S_O2] + t.states[11][Component::S_O2]));
  EXPECT_THROW(observables(t, Observable::DO, {e.horizon_min + 1}), ValidationError);
}

TEST(Observables, DenseRequeryMatchesFineIntegration) {
  const auto e = load_experiment(kData + "experiments/nob_1.yaml");
  const SolverOptions opt{};
  SolverOptions fine = opt;
  fine.report_interval_min = 0.05;
  const auto coarse = simulate(e, reference_params(), opt);
  const auto dense = simulate(e, reference_params(), fine);
  // a smooth stretch well away from the pulses
  std::vector<double> grid;
  for (double t = 60.0; t <= 100.0; t += 0.5) grid.push_back(t);
  const auto at_grid = observables(coarse, Observable::DO, grid);
  const auto ref_grid = observables(dense, Observable::DO, grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    EXPECT_LT(std::abs(at_grid[i] - ref_grid[i]), 2 * (opt.atol + opt.rtol * std::abs(ref_grid[i])));
}

TEST(Pathways, NoNitriteReductionMeansNoNd) {
  RateVector r{};
  r[index(Process::AerobicHAONO)] = 0.01;
  r[index(Process::AnoxicAOBNOR)] = 0.5;
  const auto c = pathway_rates(r, ParameterSet::defaults());
  EXPECT_EQ(c.nd, 0.0);
  EXPECT_DOUBLE_EQ(c.share_nn(), 1.0);
}

TEST(Pathways, NitriteRaisesNdShare) {
  Experiment e = batch(60);
  e.environment.aeration_enabled = true;
  e.initial[Component::S_TAN] = 20;
  const auto plain = pathway_fluxes(simulate(e, reference_params()), reference_params());
  e.initial[Component::S_TNO2] = 20;
  const auto nitrite = pathway_fluxes(simulate(e, reference_params()), reference_params());
  EXPECT_GT(plain.total(), 0.0);
  EXPECT_GT(nitrite.nd / (nitrite.nn + nitrite.nd), plain.nd / (plain.nn + plain.nd));
}

TEST(Pathways, TrapezoidOracle) {
  Experiment e = batch(200);
  e.initial[Component::S_S] = 20;
  e.pulses.push_back({5, Component::S_TAN, 15.0});
  e.pulses.push_back({5, Component::S_TNO2, 10.0});
  const auto p = reference_params();
  const auto t = simulate(e, p);
  const double y_aob = p.value("Y_AOB");
  const double y_hb = p.value("Y_HB");
  double nn = 0, nd = 0, hd = 0;
  auto parts = [&](const RateVector& r) {
    const double from_nh2oh = r[index(Process::AerobicHAONO)] / y_aob;
    const double from_no2 = 4 * r[index(Process::AnoxicAOBNIR)];
    const double n2o = 3 * r[index(Process::AnoxicAOBNOR)];
    const double w = from_nh2oh + from_no2 > 0 ? from_nh2oh / (from_nh2oh + from_no2) : 1.0;
    return std::array<double, 3>{n2o * w, n2o * (1 - w),
                                 (1 - y_hb) / (0.57 * y_hb) * r[index(Process::AnoxicHBNOR)]};
  };
  for (std::size_t i = 1; i < t.size(); ++i) {
    const double dt = (t.times_min[i] - t.times_min[i - 1]) / 1440.0;
    const auto a = parts(t.rates[i - 1]);
    const auto b = parts(t.rates[i]);
    nn += dt * (a[0] + b[0]) / 2;
    nd += dt * (a[1] + b[1]) / 2;
    hd += dt * (a[2] + b[2]) / 2;
  }
  const auto c = pathway_fluxes(t, p);
  EXPECT_NEAR(c.nn, nn, 1e-12 * nn);
  EXPECT_NEAR(c.nd, nd, 1e-12 * std::max(nd, 1e-300));
  EXPECT_NEAR(c.hd, hd, 1e-12 * std::max(hd, 1e-300));
  EXPECT_GT(c.nd, 0.0);
}

TEST(Experiment, RejectsBadInputs) {
  Experiment e = batch(10);
  e.pulses.push_back({20, Component::S_TAN, 1.0});
  EXPECT_THROW(e.validate(), ValidationError);
  e = batch(10);
  e.pulses.push_back({5, Component::X_AOB, 1.0});
  EXPECT_THROW(e.validate(), ValidationError);
  e = batch(10);
  e.measured.push_back({Observable::DO, {1, 1}, {2, 2}, 0.1, ""});
  EXPECT_THROW(e.validate(), ValidationError);
}
