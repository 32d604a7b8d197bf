#pragma once

#include <array>
#include <bitset>
#include <cstddef>
#include <optional>
#include <string_view>

#include <Eigen/Core>

#include "ndha/parameters.hpp"

namespace ndha {

inline constexpr std::size_t kComponentCount = 15;
inline constexpr std::size_t kProcessCount = 20;

// Model components in matrix column order. Ammonia and nitrite are stored as
// total pools; the free species NH3 and HNO2 follow from pH (see speciate).
enum class Component : std::size_t {
  S_S,
  S_O2,
  S_TAN,
  S_NH2OH,
  S_TNO2,
  S_NO3,
  S_NO,
  S_N2O,
  S_N2,
  S_IC,
  X_AOB,
  X_NOB,
  X_HB,
  X_S,
  X_I,
};

enum class Process : std::size_t {
  AerobicAMO,
  AerobicHAONO,  // NH2OH -> NO, no oxygen term
  AerobicHAO,
  AnoxicAOBNIR,
  AnoxicAOBNOR,
  AerobicNOBGrowth,
  AerobicHBGrowth,
  AnoxicHBNAR,
  AnoxicHBNIR,
  AnoxicHBNOR,
  AnoxicHBNOS,
  LysisAOB,
  LysisNOB,
  LysisHB,
  HydrolysisAerobic,
  HydrolysisAnoxic,
  HydrolysisAnaerobic,
  Aeration,
  StrippingN2O,
  StrippingNO,
};

constexpr std::size_t index(Component c) { return static_cast<std::size_t>(c); }
constexpr std::size_t index(Process p) { return static_cast<std::size_t>(p); }

std::string_view component_name(Component c);
std::optional<Component> component_from_name(std::string_view name);
std::string_view process_name(Process p);

struct StateVector {
  std::array<double, kComponentCount> values{};

  double& operator[](Component c) { return values[index(c)]; }
  double operator[](Component c) const { return values[index(c)]; }
  bool operator==(const StateVector&) const = default;
};

using RateVector = std::array<double, kProcessCount>;
using ProcessMask = std::bitset<kProcessCount>;

inline ProcessMask all_processes() { return ProcessMask{}.set(); }

// Acid/base constants. pKa(T) follows a van 't Hoff form anchored at 25 C:
//   pKa(T) = pKa25 + (dh / ln 10) * (1/T - 1/298.15),  T in K,
// with dh the enthalpy term in K (6344 for NH4+, 2300 for HNO2).
struct SpeciationConstants {
  double pka_nh4_25 = 9.25;
  double pka_hno2_25 = 3.26;
  double enthalpy_nh4_k = 6344.0;
  double enthalpy_hno2_k = 2300.0;
  bool temperature_dependent = true;

  double pka_nh4(double temperature_c) const;
  double pka_hno2(double temperature_c) const;
};

struct Environment {
  double ph = 7.5;
  double temperature_c = 25.0;
  bool aeration_enabled = false;
  bool stripping_enabled = false;
  SpeciationConstants speciation{};

  void validate() const;
};

struct FreeSpecies {
  double nh3 = 0.0;   // mgN/L
  double hno2 = 0.0;  // mgN/L
};

FreeSpecies speciate(double total_ammonia, double total_nitrite, const Environment& env);

// Rows are processes, columns components. The TAN and TNO2 columns carry the
// coefficients printed for free NH3 and HNO2.
using StoichiometricMatrix = Eigen::Matrix<double, kProcessCount, kComponentCount, Eigen::RowMajor>;

StoichiometricMatrix stoichiometric_matrix(const ParameterSet& params);

// Parameters and environment resolved into flat constants for fast repeated
// evaluation inside the integrator. Immutable after construction.
class KineticModel {
public:
  KineticModel(const ParameterSet& params, const Environment& env);

  // Negative concentrations are read as zero inside the rate laws.
  RateVector rates(const StateVector& state, const ProcessMask& mask = all_processes()) const;
  StateVector derivatives(const StateVector& state, const ProcessMask& mask = all_processes()) const;
  StateVector derivatives_from_rates(const RateVector& rates) const;

  const StoichiometricMatrix& stoichiometry() const { return stoich_; }
  const Environment& environment() const { return env_; }
  double nh3_fraction() const { return nh3_fraction_; }
  double hno2_fraction() const { return hno2_fraction_; }

private:
  struct Constants {
    double mu_amo, mu_hao, eps, eta_nir, eta_nor;
    double k_aob_nh2oh, k_aob_nh2oh_nd, k_aob_nh3, k_aob_no_nd, k_aob_hno2;
    double k_aob_o2_amo, k_aob_o2_hao, k_aob_o2_i, k_aob_i_nh3, k_aob_i_hno2;
    double mu_nob, k_nob_hno2, k_nob_o2, k_nob_i_nh3, k_nob_i_hno2;
    double mu_hb, mu_nar, mu_nir, mu_nor, mu_nos, eta_hd;
    double k_hb_nh4, k_hb_no3, k_hb_no2, k_hb_no, k_hb_n2o, k_hb_o2;
    double k_hb_s, k_hb_s_nar, k_hb_s_nir, k_hb_s_nor, k_hb_s_nos;
    double k_hb_o2_i_nar, k_hb_o2_i_nir, k_hb_o2_i_nor, k_hb_o2_i_nos;
    double k_hb_no_i_nir, k_hb_no_i_nor, k_hb_no_i_nos;
    double b_aob, b_nob, b_hb, eta_b, k_o2_b, k_nox;
    double k_h, k_x, eta_anox, eta_anaer;
    double kla_o2, kla_n2o, kla_no, sat_o2, sat_n2o, sat_no;
  };

  StoichiometricMatrix stoich_;
  Environment env_;
  double nh3_fraction_;
  double hno2_fraction_;
  Constants c_;
};

RateVector process_rates(const StateVector& state, const ParameterSet& params, const Environment& env);
StateVector derivatives(const StateVector& state, const ParameterSet& params, const Environment& env);

// Nitrogen summed over every N-bearing pool, particulates weighted by their
// nitrogen content (mgN/L).
double total_nitrogen(const StateVector& state, const ParameterSet& params);

// Per-row nitrogen balance of the stoichiometric matrix; zero for every
// reaction row of a consistent matrix.
std::array<double, kProcessCount> nitrogen_row_balance(const StoichiometricMatrix& m,
                                                       const ParameterSet& params);

}  // namespace ndha
