#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "app.hpp"
#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

using namespace ndha;
using namespace ndha::app;
namespace fs = std::filesystem;

namespace {

const std::string kData = std::string(NDHA_SOURCE_DIR) + "/data";
const std::string kCli = NDHA_CLI_PATH;

struct Run {
  int code = -1;
  std::string output;
};

// Runs the CLI with stderr folded into the captured output.
Run run_cli(const std::string& args) {
  Run r;
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t got = 0;
  while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.output.append(buf.data(), got);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ndha_app_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kFast = R"(
params: params/reference.params
seed: 3
fit: {global_starts: 8, local_searches: 1}
sensitivity: {samples: 0}
)";

PipelineConfig config_with(const std::string& body, const fs::path& out) {
  auto c = parse_pipeline_config(std::string(kFast) + body, kData, "test.yaml");
  c.output_dir = out.string();
  return c;
}

}  // namespace

TEST(Cli, SimulateHeaderAndDeterminism) {
  const auto dir = scratch("sim");
  const std::string exp = kData + "/experiments/amo_1.yaml";
  const std::string params = kData + "/params/reference.params";
  const auto a = run_cli("simulate --experiment " + exp + " --params " + params + " --out " + (dir / "a.csv").string());
  const auto b = run_cli("simulate --experiment " + exp + " --params " + params + " --out " + (dir / "b.csv").string());
  ASSERT_EQ(a.code, 0) << a.output;
  ASSERT_EQ(b.code, 0) << b.output;
  const std::string ca = read_file((dir / "a.csv").string());
  EXPECT_EQ(ca, read_file((dir / "b.csv").string()));
  EXPECT_EQ(ca.substr(0, ca.find('\n')),
            "time_min,S_S,S_O2,S_TAN,S_NH2OH,S_TNO2,S_NO3,S_NO,S_N2O,S_N2,S_IC,X_AOB,X_NOB,X_HB,X_S,X_I,DO,N2O");
  fs::remove_all(dir);
}

TEST(Cli, MissingPulseSpeciesExitsTwoWithLine) {
  const auto dir = scratch("badexp");
  std::string doc = read_file(kData + "/designs/amo_1.yaml");
  const std::string needle = "species: S_TAN, ";
  doc.replace(doc.find(needle), needle.size(), "");
  const auto path = dir / "bad.yaml";
  std::ofstream(path) << doc;
  const auto r = run_cli("simulate --experiment " + path.string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bad.yaml:11"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("species"), std::string::npos) << r.output;
  fs::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("simulate --no-such-flag").code, 2);
  EXPECT_EQ(run_cli("fit --experiment " + kData + "/experiments/nob_1.yaml --names nope --out /tmp/x").code, 2);
  EXPECT_EQ(run_cli("scenario --do 1").code, 2);
  // an infeasible cell is reported in the grid, not fatal
  const auto bad = run_cli("scenario --do 9 --tno2 1");
  EXPECT_EQ(bad.code, 0);
  EXPECT_NE(bad.output.find("failed"), std::string::npos);
}

TEST(Cli, NoIdentifiableSubsetExitsThree) {
  const auto dir = scratch("exit3");
  const auto cfg = dir / "p.yaml";
  std::ofstream(cfg) << "params: " << kData << "/params/reference.params\n"
                     << "output: " << (dir / "out").string() << "\n"
                     << "fit: {global_starts: 4, local_searches: 1}\n"
                     << "sensitivity: {samples: 0}\n"
                     << "stages:\n  - id: S\n    experiments: [" << kData << "/experiments/nob_1.yaml]\n"
                     << "    series: [DO]\n    candidates: [K_La.N2O]\n";
  const auto r = run_cli("pipeline --config " + cfg.string());
  EXPECT_EQ(r.code, 3) << r.output;
  fs::remove_all(dir);
}

TEST(App, ExitCodeMapping) {
  EXPECT_EQ(exit_code_for(ValidationError("x")), 2);
  EXPECT_EQ(exit_code_for(NumericalError("x")), 3);
  EXPECT_EQ(exit_code_for(IntegrationError("x", 1.0)), 3);
  EXPECT_EQ(exit_code_for(std::runtime_error("x")), 1);
}

TEST(Config, RejectsUnknownKeysWithLine) {
  try {
    parse_pipeline_config("seed: 1\nstagez: []\n", kData, "cfg.yaml");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.yaml:2"), std::string::npos) << e.what();
  }
}

TEST(Config, CandidatesDisjointUnlessReopened) {
  const std::string two = R"(
stages:
  - {id: A, experiments: [experiments/nob_1.yaml], candidates: [mu_NOB, K_X]}
  - {id: B, experiments: [experiments/amo_1.yaml], candidates: [K_X, mu_AOB.AMO])";
  EXPECT_THROW(parse_pipeline_config(two + "}\n", kData).validate(), ValidationError);
  EXPECT_NO_THROW(parse_pipeline_config(two + ", reopen: [K_X]}\n", kData).validate());
  EXPECT_THROW(parse_pipeline_config(R"(
stages:
  - {id: A, experiments: [experiments/nob_1.yaml], candidates: [mu_NOB], estimate: [k_H]}
)", kData).validate(), ValidationError);
  EXPECT_THROW(parse_pipeline_config(R"(
stages:
  - {id: A, experiments: [experiments/missing.yaml], candidates: [mu_NOB]}
)", kData).validate(), ValidationError);
}

TEST(Config, ParseResolvesPaths) {
  const auto c = parse_pipeline_config(std::string(kFast) + R"(
output: out/x
stages:
  - id: A
    experiments: [experiments/nob_1.yaml]
    series: [DO]
    candidates: [mu_NOB, k_H]
    bounds: {mu_NOB: [0.1, 2.0]}
)", kData);
  ASSERT_EQ(c.stages.size(), 1u);
  EXPECT_EQ(c.stages[0].experiments[0], kData + "/experiments/nob_1.yaml");
  EXPECT_EQ(c.stages[0].bounds.at("mu_NOB").upper, 2.0);
  EXPECT_EQ(c.fit.global_starts, 8u);
  EXPECT_EQ(c.seed, 3u);
}

TEST(Pipeline, EmptyStageListWritesManifestOnly) {
  const auto dir = scratch("empty");
  const auto c = config_with("stages: []\n", dir / "out");
  const auto outcomes = run_pipeline(c);
  EXPECT_TRUE(outcomes.empty());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "out")) files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  // the final parameter table is part of every run
  for (const auto& f : files) EXPECT_TRUE(f == "manifest.json" || f == "params_final.params") << f;
  EXPECT_NE(std::find(files.begin(), files.end(), "manifest.json"), files.end());
  fs::remove_all(dir);
}

TEST(Pipeline, SingleStageEqualsDirectFit) {
  const auto dir = scratch("single");
  const auto c = config_with(R"(
stages:
  - id: A
    experiments: [experiments/nob_1.yaml]
    series: [DO]
    candidates: [mu_NOB]
    estimate: [mu_NOB]
)", dir / "out");
  const auto outcomes = run_pipeline(c);
  ASSERT_EQ(outcomes.size(), 1u);

  const auto params = load_parameter_file(kData + "/params/reference.params");
  auto prob = CalibrationProblem::with_default_bounds({load_experiment(kData + "/experiments/nob_1.yaml")}, params,
                                                      {"mu_NOB"});
  prob.series = {Observable::DO};
  prob.solver = c.solver;
  FitOptions fo = c.fit;
  fo.seed = c.seed + 1000;
  const auto direct = fit(prob, fo);
  EXPECT_EQ(outcomes[0].fit.values, direct.values);
  EXPECT_EQ(outcomes[0].fit.j_opt, direct.j_opt);
  EXPECT_EQ(outcomes[0].fit.cv_percent, direct.cv_percent);

  const auto stored = fit_from_json(json::parse(read_file((dir / "out/stage_01_A/fit.json").string())));
  EXPECT_EQ(stored.values, direct.values);
  EXPECT_EQ(stored.cv_percent, direct.cv_percent);
  fs::remove_all(dir);
}

TEST(Pipeline, SecondStageUsesFrozenEstimates) {
  const auto dir = scratch("two");
  const auto c = config_with(R"(
stages:
  - {id: NOB, experiments: [experiments/nob_1.yaml], series: [DO], candidates: [mu_NOB], estimate: [mu_NOB]}
  - {id: AMO, experiments: [experiments/amo_1.yaml], series: [DO], candidates: [mu_AOB.AMO], estimate: [mu_AOB.AMO]}
)", dir / "out");
  const auto outcomes = run_pipeline(c);
  ASSERT_EQ(outcomes.size(), 2u);
  const auto manifest = json::parse(read_file((dir / "out/manifest.json").string()));
  const auto& s2 = manifest["stages"][1];
  ASSERT_TRUE(s2["frozen_inputs"].contains("mu_NOB"));
  EXPECT_EQ(s2["frozen_inputs"]["mu_NOB"].get<double>(), outcomes[0].fit.value("mu_NOB"));
  EXPECT_EQ(manifest["stages"][0]["values"]["mu_NOB"].get<double>(), outcomes[0].fit.value("mu_NOB"));

  // resuming reloads the completed stages
  const auto again = run_pipeline(c, true);
  EXPECT_EQ(again[1].fit.values, outcomes[1].fit.values);
  const auto m2 = json::parse(read_file((dir / "out/manifest.json").string()));
  EXPECT_TRUE(m2["stages"][0].value("resumed", false));

  // report: tables rendered, values round-trip to printed precision
  const std::string text = render_report((dir / "out").string());
  EXPECT_NE(text.find("mu_NOB"), std::string::npos);
  EXPECT_NE(text.find("mu_AOB.AMO"), std::string::npos);
  char printed[32];
  std::snprintf(printed, sizeof printed, "%.4g", outcomes[0].fit.value("mu_NOB"));
  EXPECT_NE(text.find(printed), std::string::npos) << printed;
  const auto metrics = report_metrics((dir / "out").string());
  const double mu = metrics["stages"][0]["parameters"]["mu_NOB"]["value"].get<double>();
  EXPECT_EQ(std::stod(printed), std::stod(std::to_string(mu).substr(0, 0) + printed));
  char reprinted[32];
  std::snprintf(reprinted, sizeof reprinted, "%.4g", mu);
  EXPECT_STREQ(reprinted, printed);
  fs::remove_all(dir);
}

TEST(Report, PartialDirectoryNamesGaps) {
  const auto dir = scratch("partial");
  const auto c = config_with(R"(
stages:
  - {id: NOB, experiments: [experiments/nob_1.yaml], series: [DO], candidates: [mu_NOB], estimate: [mu_NOB]}
)", dir / "out");
  run_pipeline(c);
  fs::remove(dir / "out/stage_01_NOB/diagnostics.json");
  const std::string text = render_report((dir / "out").string());
  EXPECT_NE(text.find("Missing artifacts"), std::string::npos);
  EXPECT_NE(text.find("diagnostics.json"), std::string::npos);
  const auto m = report_metrics((dir / "out").string());
  EXPECT_FALSE(m["missing"].empty());
  fs::remove_all(dir);
}

TEST(Synthesize, NoiseFreeReproducesModelAndIsSeeded) {
  const auto design = load_experiment(kData + "/designs/nob_1.yaml");
  const auto p = load_parameter_file(kData + "/params/reference.params");
  const auto a = synthesize(design, p, {{Observable::DO, 0.01}}, 1.0, 0.0, 5);
  const auto b = synthesize(design, p, {{Observable::DO, 0.01}}, 1.0, 0.0, 5);
  ASSERT_EQ(a.measured.size(), 1u);
  EXPECT_EQ(a.measured[0].values, b.measured[0].values);
  EXPECT_NE(a.measured[0].values, synthesize(design, p, {{Observable::DO, 0.01}}, 1.0, 0.0, 6).measured[0].values);
  // noise is bounded by a few sigma of 1 % of the series maximum
  const auto& m = a.measured[0];
  const auto ref = observables(simulate_at(design, p, m.times_min), Observable::DO, m.times_min);
  double peak = 0.0;
  for (double v : ref) peak = std::max(peak, std::abs(v));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LT(std::abs(m.values[i] - ref[i]), 5 * 0.01 * peak);
}
