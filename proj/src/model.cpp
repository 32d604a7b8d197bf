#include "ndha/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ndha/errors.hpp"

namespace ndha {

namespace {

constexpr std::array<std::string_view, kComponentCount> kComponentNames = {
    "S_S", "S_O2", "S_TAN", "S_NH2OH", "S_TNO2", "S_NO3", "S_NO", "S_N2O",
    "S_N2", "S_IC", "X_AOB", "X_NOB", "X_HB", "X_S", "X_I"};

constexpr std::array<std::string_view, kProcessCount> kProcessNames = {
    "Aerobic_AMO",     "Aerobic_HAO*",     "Aerobic_HAO",    "Anox_A_NIR",  "Anox_A_NOR",
    "Aer_NOB_growth",  "Aerobic_H_growth", "Anox_H_NAR",     "Anox_H_NIR",  "Anox_H_NOR",
    "Anox_H_NOS",      "Lysis_AOB",        "Lysis_NOB",      "Lysis_HB",    "Hydrolysis_aerobic",
    "Hydrolysis_anoxic", "Hydrolysis_anaerobic", "Aeration", "Stripping_N2O", "Stripping_NO"};

constexpr double kT25 = 298.15;

inline double monod(double s, double k) { return s / (s + k); }
inline double inhibition(double s, double k) { return k / (s + k); }
inline double haldane(double s, double k, double ki) { return s / (s + k + s * s / ki); }

}  // namespace

std::string_view component_name(Component c) { return kComponentNames[index(c)]; }

std::optional<Component> component_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kComponentCount; ++i)
    if (kComponentNames[i] == name) return static_cast<Component>(i);
  return std::nullopt;
}

std::string_view process_name(Process p) { return kProcessNames[index(p)]; }

double SpeciationConstants::pka_nh4(double temperature_c) const {
  if (!temperature_dependent) return pka_nh4_25;
  return pka_nh4_25 + enthalpy_nh4_k / std::log(10.0) * (1.0 / (temperature_c + 273.15) - 1.0 / kT25);
}

double SpeciationConstants::pka_hno2(double temperature_c) const {
  if (!temperature_dependent) return pka_hno2_25;
  return pka_hno2_25 + enthalpy_hno2_k / std::log(10.0) * (1.0 / (temperature_c + 273.15) - 1.0 / kT25);
}

void Environment::validate() const {
  if (!(ph >= 3.0 && ph <= 12.0)) throw ValidationError("pH must lie in [3, 12], got " + std::to_string(ph));
  if (!(temperature_c >= 0.0 && temperature_c <= 45.0))
    throw ValidationError("temperature must lie in [0, 45] C, got " + std::to_string(temperature_c));
}

FreeSpecies speciate(double total_ammonia, double total_nitrite, const Environment& env) {
  const double pka_nh4 = env.speciation.pka_nh4(env.temperature_c);
  const double pka_hno2 = env.speciation.pka_hno2(env.temperature_c);
  return {total_ammonia / (1.0 + std::pow(10.0, pka_nh4 - env.ph)),
          total_nitrite / (1.0 + std::pow(10.0, env.ph - pka_hno2))};
}

StoichiometricMatrix stoichiometric_matrix(const ParameterSet& params) {
  using C = Component;
  using P = Process;
  const double y_aob = params.value("Y_AOB");
  const double y_nob = params.value("Y_NOB");
  const double y_hb = params.value("Y_HB");
  const double i_nxb = params.value("i_NXB");
  const double i_nxi = params.value("i_NXI");
  const double i_nxs = params.value("i_NXS");
  const double f_xi = params.value("f_XI");

  StoichiometricMatrix m = StoichiometricMatrix::Zero();
  auto at = [&m](P p, C c) -> double& { return m(index(p), index(c)); };

  at(P::AerobicAMO, C::S_O2) = -1.14;
  at(P::AerobicAMO, C::S_TAN) = -1.0;
  at(P::AerobicAMO, C::S_NH2OH) = 1.0;
  at(P::AerobicAMO, C::S_IC) = -1.0 / 14.0;

  at(P::AerobicHAONO, C::S_TAN) = -i_nxb;
  at(P::AerobicHAONO, C::S_NH2OH) = -1.0 / y_aob;
  at(P::AerobicHAONO, C::S_NO) = 1.0 / y_aob;
  at(P::AerobicHAONO, C::S_IC) = -i_nxb / 14.0;
  at(P::AerobicHAONO, C::X_AOB) = 1.0;

  at(P::AerobicHAO, C::S_O2) = -(2.29 - y_aob) / y_aob;
  at(P::AerobicHAO, C::S_TAN) = -i_nxb;
  at(P::AerobicHAO, C::S_NH2OH) = -1.0 / y_aob;
  at(P::AerobicHAO, C::S_TNO2) = 1.0 / y_aob;
  at(P::AerobicHAO, C::S_IC) = -(i_nxb - 1.0 / y_aob) / 14.0;
  at(P::AerobicHAO, C::X_AOB) = 1.0;

  at(P::AnoxicAOBNIR, C::S_NH2OH) = -1.0;
  at(P::AnoxicAOBNIR, C::S_TNO2) = -3.0;
  at(P::AnoxicAOBNIR, C::S_NO) = 4.0;
  at(P::AnoxicAOBNIR, C::S_IC) = 3.0 / 14.0;

  at(P::AnoxicAOBNOR, C::S_NH2OH) = -1.0;
  at(P::AnoxicAOBNOR, C::S_NO) = -2.0;
  at(P::AnoxicAOBNOR, C::S_N2O) = 3.0;
  at(P::AnoxicAOBNOR, C::S_IC) = -1.0 / 14.0;

  at(P::AerobicNOBGrowth, C::S_O2) = -(1.14 - y_nob) / y_nob;
  at(P::AerobicNOBGrowth, C::S_TAN) = -i_nxb;
  at(P::AerobicNOBGrowth, C::S_TNO2) = -1.0 / y_nob;
  at(P::AerobicNOBGrowth, C::S_NO3) = 1.0 / y_nob;
  at(P::AerobicNOBGrowth, C::S_IC) = -i_nxb / 14.0;
  at(P::AerobicNOBGrowth, C::X_NOB) = 1.0;

  const double nar = (1.0 - y_hb) / (1.14 * y_hb);
  const double one_electron = (1.0 - y_hb) / (0.57 * y_hb);
  for (P p : {P::AerobicHBGrowth, P::AnoxicHBNAR, P::AnoxicHBNIR, P::AnoxicHBNOR, P::AnoxicHBNOS}) {
    at(p, C::S_S) = -1.0 / y_hb;
    at(p, C::S_TAN) = -i_nxb;
    at(p, C::S_IC) = -i_nxb / 14.0;
    at(p, C::X_HB) = 1.0;
  }
  at(P::AerobicHBGrowth, C::S_O2) = -(1.0 - y_hb) / y_hb;
  at(P::AnoxicHBNAR, C::S_TNO2) = nar;
  at(P::AnoxicHBNAR, C::S_NO3) = -nar;
  at(P::AnoxicHBNIR, C::S_TNO2) = -one_electron;
  at(P::AnoxicHBNIR, C::S_NO) = one_electron;
  at(P::AnoxicHBNOR, C::S_NO) = -one_electron;
  at(P::AnoxicHBNOR, C::S_N2O) = one_electron;
  at(P::AnoxicHBNOS, C::S_N2O) = -one_electron;
  at(P::AnoxicHBNOS, C::S_N2) = one_electron;

  const double lysis_n = i_nxb - f_xi * i_nxi - (1.0 - f_xi) * i_nxs;
  const std::pair<P, C> lysis[] = {
      {P::LysisAOB, C::X_AOB}, {P::LysisNOB, C::X_NOB}, {P::LysisHB, C::X_HB}};
  for (const auto& [p, biomass] : lysis) {
    at(p, C::S_TAN) = lysis_n;
    at(p, C::S_IC) = lysis_n / 14.0;
    at(p, biomass) = -1.0;
    at(p, C::X_S) = 1.0 - f_xi;
    at(p, C::X_I) = f_xi;
  }

  for (P p : {P::HydrolysisAerobic, P::HydrolysisAnoxic, P::HydrolysisAnaerobic}) {
    at(p, C::S_S) = 1.0;
    at(p, C::S_TAN) = i_nxs;
    at(p, C::S_IC) = i_nxs / 14.0;
    at(p, C::X_S) = -1.0;
  }

  at(P::Aeration, C::S_O2) = 1.0;
  at(P::StrippingN2O, C::S_N2O) = -1.0;
  at(P::StrippingNO, C::S_NO) = -1.0;
  return m;
}

KineticModel::KineticModel(const ParameterSet& params, const Environment& env)
    : stoich_(stoichiometric_matrix(params)), env_(env) {
  env.validate();
  const FreeSpecies unit = speciate(1.0, 1.0, env);
  nh3_fraction_ = unit.nh3;
  hno2_fraction_ = unit.hno2;

  auto v = [&params](const char* name) { return params.value(name); };
  c_ = Constants{
      v("mu_AOB.AMO"), v("mu_AOB.HAO"), v("eps_AOB"), v("eta_NIR"), v("eta_NOR"),
      v("K_AOB.NH2OH"), v("K_AOB.NH2OH.ND"), v("K_AOB.NH3"), v("K_AOB.NO.ND"), v("K_AOB.HNO2"),
      v("K_AOB.O2.AMO"), v("K_AOB.O2.HAO"), v("K_AOB.O2.i"), v("K_AOB.i.NH3"), v("K_AOB.i.HNO2"),
      v("mu_NOB"), v("K_NOB.HNO2"), v("K_NOB.O2"), v("K_NOB.i.NH3"), v("K_NOB.i.HNO2"),
      v("mu_HB"), v("mu_HB.NAR"), v("mu_HB.NIR"), v("mu_HB.NOR"), v("mu_HB.NOS"), v("eta_HD"),
      v("K_HB.NH4"), v("K_HB.NO3"), v("K_HB.NO2"), v("K_HB.NO"), v("K_HB.N2O"), v("K_HB.O2"),
      v("K_HB.S"), v("K_HB.S.NAR"), v("K_HB.S.NIR"), v("K_HB.S.NOR"), v("K_HB.S.NOS"),
      v("K_HB.O2.i.NAR"), v("K_HB.O2.i.NIR"), v("K_HB.O2.i.NOR"), v("K_HB.O2.i.NOS"),
      v("K_HB.NO.i.NIR"), v("K_HB.NO.i.NOR"), v("K_HB.NO.i.NOS"),
      v("b_AOB"), v("b_NOB"), v("b_HB"), v("eta_b"), v("K_O2.b"), v("K_NOx"),
      v("k_H"), v("K_X"), v("eta_anox"), v("eta_anaer"),
      v("K_La.O2"), v("K_La.N2O"), v("K_La.NO"), v("Ssat_O2"), v("Ssat_N2O"), v("Ssat_NO")};
}

RateVector KineticModel::rates(const StateVector& state, const ProcessMask& mask) const {
  using C = Component;
  using P = Process;
  auto conc = [&state](C c) { return std::max(state[c], 0.0); };
  const double s = conc(C::S_S);
  const double o2 = conc(C::S_O2);
  const double tan = conc(C::S_TAN);
  const double nh2oh = conc(C::S_NH2OH);
  const double tno2 = conc(C::S_TNO2);
  const double no3 = conc(C::S_NO3);
  const double no = conc(C::S_NO);
  const double n2o = conc(C::S_N2O);
  const double x_aob = conc(C::X_AOB);
  const double x_nob = conc(C::X_NOB);
  const double x_hb = conc(C::X_HB);
  const double x_s = conc(C::X_S);

  const double nh3 = tan * nh3_fraction_;
  const double nh4 = tan - nh3;
  const double hno2 = tno2 * hno2_fraction_;
  const double no2 = tno2 - hno2;
  const auto& c = c_;

  RateVector r{};
  r[index(P::AerobicAMO)] = c.mu_amo * monod(o2, c.k_aob_o2_amo) * haldane(nh3, c.k_aob_nh3, c.k_aob_i_nh3) *
                            inhibition(hno2, c.k_aob_i_hno2) * x_aob;
  const double hao_sat = monod(nh2oh, c.k_aob_nh2oh);
  r[index(P::AerobicHAONO)] = c.mu_hao * c.eps * hao_sat * x_aob;
  r[index(P::AerobicHAO)] = c.mu_hao * (1.0 - c.eps) * monod(o2, c.k_aob_o2_hao) * hao_sat * x_aob;
  const double nd_sat = monod(nh2oh, c.k_aob_nh2oh_nd);
  r[index(P::AnoxicAOBNIR)] = c.mu_hao * c.eta_nir * inhibition(o2, c.k_aob_o2_i) * nd_sat *
                              monod(hno2, c.k_aob_hno2) * x_aob;
  r[index(P::AnoxicAOBNOR)] = c.mu_hao * c.eta_nor * nd_sat * monod(no, c.k_aob_no_nd) * x_aob;

  r[index(P::AerobicNOBGrowth)] = c.mu_nob * monod(o2, c.k_nob_o2) * haldane(hno2, c.k_nob_hno2, c.k_nob_i_hno2) *
                                  inhibition(nh3, c.k_nob_i_nh3) * x_nob;

  const double nh4_sat = monod(nh4, c.k_hb_nh4);
  r[index(P::AerobicHBGrowth)] = c.mu_hb * monod(o2, c.k_hb_o2) * nh4_sat * monod(s, c.k_hb_s) * x_hb;
  const double hd = c.eta_hd * nh4_sat * x_hb;
  r[index(P::AnoxicHBNAR)] = c.mu_nar * hd * inhibition(o2, c.k_hb_o2_i_nar) * monod(s, c.k_hb_s_nar) *
                             monod(no3, c.k_hb_no3);
  r[index(P::AnoxicHBNIR)] = c.mu_nir * hd * inhibition(o2, c.k_hb_o2_i_nir) * inhibition(no, c.k_hb_no_i_nir) *
                             monod(s, c.k_hb_s_nir) * monod(no2, c.k_hb_no2);
  r[index(P::AnoxicHBNOR)] = c.mu_nor * hd * inhibition(o2, c.k_hb_o2_i_nor) * monod(s, c.k_hb_s_nor) *
                             haldane(no, c.k_hb_no, c.k_hb_no_i_nor);
  r[index(P::AnoxicHBNOS)] = c.mu_nos * hd * inhibition(o2, c.k_hb_o2_i_nos) * inhibition(no, c.k_hb_no_i_nos) *
                             monod(s, c.k_hb_s_nos) * monod(n2o, c.k_hb_n2o);

  const double decay = monod(o2, c.k_o2_b) + c.eta_b * inhibition(o2, c.k_o2_b) * monod(tno2 + no3, c.k_nox);
  r[index(P::LysisAOB)] = c.b_aob * decay * x_aob;
  r[index(P::LysisNOB)] = c.b_nob * decay * x_nob;
  r[index(P::LysisHB)] = c.b_hb * decay * x_hb;

  // (X_S/X_HB)/(K_X + X_S/X_HB) * X_HB, written to stay finite at X_HB = 0.
  const double denom = c.k_x * x_hb + x_s;
  const double hydrolysis = denom > 0.0 ? c.k_h * x_s * x_hb / denom : 0.0;
  r[index(P::HydrolysisAerobic)] = hydrolysis * monod(o2, c.k_hb_o2);
  r[index(P::HydrolysisAnoxic)] = hydrolysis * c.eta_anox * inhibition(o2, c.k_hb_o2) * monod(no3, c.k_hb_no3);
  r[index(P::HydrolysisAnaerobic)] =
      hydrolysis * c.eta_anaer * inhibition(o2, c.k_hb_o2) * inhibition(no3, c.k_hb_no3);

  if (env_.aeration_enabled) r[index(P::Aeration)] = c.kla_o2 * (c.sat_o2 - state[C::S_O2]);
  if (env_.stripping_enabled) {
    r[index(P::StrippingN2O)] = c.kla_n2o * (state[C::S_N2O] - c.sat_n2o);
    r[index(P::StrippingNO)] = c.kla_no * (state[C::S_NO] - c.sat_no);
  }

  for (std::size_t j = 0; j < kProcessCount; ++j) {
    if (!mask[j]) {
      r[j] = 0.0;
    } else if (!std::isfinite(r[j])) {
      throw NumericalError("process rate " + std::to_string(j + 1) + " (" +
                           std::string(kProcessNames[j]) + ") is not finite");
    }
  }
  return r;
}

StateVector KineticModel::derivatives_from_rates(const RateVector& r) const {
  StateVector out;
  Eigen::Map<Eigen::Matrix<double, kComponentCount, 1>> d(out.values.data());
  Eigen::Map<const Eigen::Matrix<double, kProcessCount, 1>> rv(r.data());
  d.noalias() = stoich_.transpose() * rv;
  return out;
}

StateVector KineticModel::derivatives(const StateVector& state, const ProcessMask& mask) const {
  return derivatives_from_rates(rates(state, mask));
}

RateVector process_rates(const StateVector& state, const ParameterSet& params, const Environment& env) {
  return KineticModel(params, env).rates(state);
}

StateVector derivatives(const StateVector& state, const ParameterSet& params, const Environment& env) {
  return KineticModel(params, env).derivatives(state);
}

namespace {

std::array<double, kComponentCount> nitrogen_weights(const ParameterSet& params) {
  using C = Component;
  std::array<double, kComponentCount> w{};
  for (C c : {C::S_TAN, C::S_NH2OH, C::S_TNO2, C::S_NO3, C::S_NO, C::S_N2O, C::S_N2}) w[index(c)] = 1.0;
  const double i_nxb = params.value("i_NXB");
  w[index(C::X_AOB)] = i_nxb;
  w[index(C::X_NOB)] = i_nxb;
  w[index(C::X_HB)] = i_nxb;
  w[index(C::X_S)] = params.value("i_NXS");
  w[index(C::X_I)] = params.value("i_NXI");
  return w;
}

}  // namespace

double total_nitrogen(const StateVector& state, const ParameterSet& params) {
  const auto w = nitrogen_weights(params);
  double total = 0.0;
  for (std::size_t i = 0; i < kComponentCount; ++i) total += w[i] * state.values[i];
  return total;
}

std::array<double, kProcessCount> nitrogen_row_balance(const StoichiometricMatrix& m, const ParameterSet& params) {
  const auto w = nitrogen_weights(params);
  std::array<double, kProcessCount> out{};
  for (std::size_t j = 0; j < kProcessCount; ++j)
    for (std::size_t i = 0; i < kComponentCount; ++i) out[j] += m(j, i) * w[i];
  return out;
}

}  // namespace ndha
