#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ndha/simulation.hpp"

namespace ndha {

// Experiment documents are YAML:
//
//   label: Scen_AMO_1
//   environment: {pH: 7.5, temperature_C: 25, aeration: false, stripping: false}
//   initial_state: {S_O2: 8.0, X_S: 20}      # omitted components are 0
//   biomass:                                  # optional, added to initial_state
//     vss_g_per_l: 0.30
//     cod_per_vss: 1.42                       # gCOD/gVSS
//     fractions: {X_AOB: 0.45, X_NOB: 0.015, X_HB: 0.25, X_I: 0.285}
//   precondition_min: 720
//   horizon_min: 240
//   pulses:
//     - {time_min: 10, species: S_TAN, delta: 4.0}
//   measurements:
//     - {series: DO, sigma: 0.08, file: series/amo1_do.csv}
//     - {series: N2O, sigma: 0.002, times: [..], values: [..]}
//
// Relative file paths resolve against the document's directory.
Experiment parse_experiment(const std::string& text, const std::string& base_dir = ".",
                            const std::string& source = "<string>");
Experiment load_experiment(const std::string& path);

// Writes the resolved experiment (initial state after any biomass block).
// Series that came from a file keep their file reference unless `inline_series`.
std::string serialize_experiment(const Experiment& experiment, bool inline_series = false);

// Two-column CSV with a header row: time_min,value.
struct Series {
  std::vector<double> times_min;
  std::vector<double> values;
};
Series read_series_csv(const std::string& path);
void write_series_csv(const std::string& path, const std::vector<double>& times_min,
                      const std::vector<double>& values);

}  // namespace ndha
