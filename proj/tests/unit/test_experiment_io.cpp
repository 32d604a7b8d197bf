#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "ndha/errors.hpp"
#include "ndha/experiment_io.hpp"
#include "ndha/io_util.hpp"

using namespace ndha;
namespace fs = std::filesystem;

namespace {

const char* kDoc = R"(label: Probe
environment: {pH: 7.2, temperature_C: 20, aeration: true, stripping: false}
initial_state: {S_O2: 8.0, X_S: 20}
biomass:
  vss_g_per_l: 0.5
  cod_per_vss: 1.42
  fractions: {X_AOB: 0.45, X_NOB: 0.015, X_HB: 0.10, X_I: 0.435}
precondition_min: 60
horizon_min: 100
pulses:
  - {time_min: 10, species: S_TAN, delta: 3.0}
  - {time_min: 50, species: S_TNO2, delta: 0.1}
measurements:
  - {series: DO, sigma: 0.08, times: [0, 0.5, 1.0], values: [8.0, 7.9, 7.85]}
)";

std::string expect_error(const std::string& text) {
  try {
    parse_experiment(text, ".", "probe.yaml");
  } catch (const ValidationError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no error";
  return {};
}

}  // namespace

TEST(ExperimentIo, ParsesDocument) {
  const auto e = parse_experiment(kDoc);
  EXPECT_EQ(e.label, "Probe");
  EXPECT_DOUBLE_EQ(e.environment.ph, 7.2);
  EXPECT_TRUE(e.environment.aeration_enabled);
  EXPECT_NEAR(e.initial[Component::X_AOB], 0.5 * 1.42 * 0.45 * 1000, 1e-9);
  EXPECT_DOUBLE_EQ(e.initial[Component::X_S], 20.0);
  ASSERT_EQ(e.pulses.size(), 2u);
  EXPECT_EQ(e.pulses[1].species, Component::S_TNO2);
  ASSERT_EQ(e.measured.size(), 1u);
  EXPECT_EQ(e.measured[0].values.size(), 3u);
}

TEST(ExperimentIo, ParseSerializeParseIsIdentity) {
  const auto a = parse_experiment(kDoc);
  const std::string text = serialize_experiment(a, true);
  const auto b = parse_experiment(text);
  EXPECT_EQ(serialize_experiment(b, true), text);
  EXPECT_EQ(a.initial, b.initial);
  EXPECT_EQ(a.measured[0].values, b.measured[0].values);
  EXPECT_EQ(a.pulses.size(), b.pulses.size());
  EXPECT_EQ(a.precondition_min, b.precondition_min);
}

TEST(ExperimentIo, ShippedExperimentsRoundTrip) {
  const std::string dir = std::string(NDHA_SOURCE_DIR) + "/data/experiments";
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto a = load_experiment(entry.path().string());
    const auto text = serialize_experiment(a);
    const auto b = parse_experiment(text, dir);
    EXPECT_EQ(serialize_experiment(b), text) << entry.path();
  }
}

TEST(ExperimentIo, MissingPulseSpeciesNamesTheLine) {
  std::string doc = kDoc;
  doc.replace(doc.find("species: S_TNO2, "), std::string("species: S_TNO2, ").size(), "");
  const auto msg = expect_error(doc);
  EXPECT_NE(msg.find("probe.yaml:12"), std::string::npos) << msg;
  EXPECT_NE(msg.find("species"), std::string::npos) << msg;
}

TEST(ExperimentIo, RejectsUnknownKeysAndComponents) {
  EXPECT_NE(expect_error(std::string(kDoc) + "colour: blue\n").find("unknown key"), std::string::npos);
  std::string doc = kDoc;
  doc.replace(doc.find("S_TAN"), 5, "S_FOO");
  EXPECT_NE(expect_error(doc).find("S_FOO"), std::string::npos);
  doc = kDoc;
  doc.replace(doc.find("S_TAN"), 5, "X_AOB");
  EXPECT_NE(expect_error(doc).find("cannot be pulsed"), std::string::npos);
}

TEST(ExperimentIo, SeriesCsvRoundTrip) {
  const auto dir = fs::temp_directory_path() / "ndha_series_test";
  fs::create_directories(dir);
  const std::string path = (dir / "s.csv").string();
  const std::vector<double> t = {0, 0.5, 1.0 / 3.0};
  const std::vector<double> v = {8.0, 0.1 + 0.2, 1e-7};
  write_series_csv(path, t, v);
  const auto s = read_series_csv(path);
  EXPECT_EQ(s.times_min, t);
  EXPECT_EQ(s.values, v);
  fs::remove_all(dir);
}

TEST(IoUtil, FormatDoubleRoundTrips) {
  for (double x : {0.1, 1.0 / 3.0, 6.02e23, -4.83e-4, 0.0, 1e-300}) EXPECT_EQ(std::stod(format_double(x)), x);
  EXPECT_EQ(format_double(0.25), "0.25");
}

TEST(IoUtil, AtomicWriteReplacesContent) {
  const auto path = (fs::temp_directory_path() / "ndha_atomic.txt").string();
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  EXPECT_EQ(read_file(path), "second");
  for (const auto& e : fs::directory_iterator(fs::temp_directory_path()))
    EXPECT_EQ(e.path().filename().string().find("ndha_atomic.txt."), std::string::npos);
  fs::remove(path);
}
