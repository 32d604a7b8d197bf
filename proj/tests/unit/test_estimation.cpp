#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "ndha/errors.hpp"
#include "ndha/estimation.hpp"
#include "ndha/experiment_io.hpp"

using namespace ndha;

namespace {

const std::string kData = std::string(NDHA_SOURCE_DIR) + "/data/";

ParameterSet reference_params() { return load_parameter_file(kData + "params/reference.params"); }

// DO series of a shipped design replaced by the noise-free model response at
// `truth`, optionally on a coarser grid.
Experiment noise_free(const std::string& name, const ParameterSet& truth, double spacing_min = 2.0) {
  Experiment e = load_experiment(kData + "experiments/" + name + ".yaml");
  MeasuredSeries m;
  m.observable = Observable::DO;
  m.sigma = 0.08;
  for (double t = 0.0; t <= e.horizon_min + 1e-9; t += spacing_min) m.times_min.push_back(t);
  const auto traj = simulate_at(e, truth, m.times_min);
  m.values = observables(traj, Observable::DO, m.times_min);
  e.measured = {m};
  return e;
}

FitOptions quick() {
  FitOptions o;
  o.global_starts = 16;
  o.local_searches = 2;
  return o;
}

}  // namespace

TEST(Objective, ZeroWhenSimulationMatches) {
  const auto truth = reference_params();
  CalibrationProblem prob;
  prob.experiments = {noise_free("nob_1", truth)};
  prob.base = truth;
  const Objective obj(prob);
  EXPECT_LT(obj.evaluate(truth), 1e-20);
}

TEST(Objective, UnitOffsetGivesOne) {
  const auto truth = reference_params();
  Experiment e = noise_free("nob_1", truth);
  for (auto& v : e.measured[0].values) v += e.measured[0].sigma;
  CalibrationProblem prob;
  prob.experiments = {e};
  prob.base = truth;
  EXPECT_NEAR(Objective(prob).evaluate(truth), 1.0, 1e-9);
}

TEST(Objective, HandRecomputationOfDoubleSum) {
  const auto truth = reference_params();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.08);
  std::vector<Experiment> exps = {noise_free("nob_1", truth, 1.0), noise_free("nob_2", truth, 3.0)};
  for (auto& e : exps)
    for (auto& v : e.measured[0].values) v += noise(rng);
  ParameterSet off = truth;
  off.set("mu_NOB", 0.7);

  double expected = 0.0;
  for (const auto& e : exps) {
    const auto& m = e.measured[0];
    const auto y = observables(simulate_at(e, off, m.times_min), Observable::DO, m.times_min);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += std::pow((y[i] - m.values[i]) / m.sigma, 2);
    expected += s / static_cast<double>(y.size());
  }
  CalibrationProblem prob;
  prob.experiments = exps;
  prob.base = truth;
  EXPECT_NEAR(Objective(prob).evaluate(off), expected, 1e-10 * expected);

  // experiment order does not matter
  std::swap(prob.experiments[0], prob.experiments[1]);
  EXPECT_NEAR(Objective(prob).evaluate(off), expected, 1e-10 * expected);
}

TEST(Objective, SeriesFilterSelectsPoints) {
  const auto truth = reference_params();
  Experiment e = load_experiment(kData + "experiments/nob_1.yaml");
  CalibrationProblem prob;
  prob.experiments = {e};
  prob.base = truth;
  const std::size_t all = Objective(prob).points();
  prob.series = {Observable::DO};
  EXPECT_LT(Objective(prob).points(), all);
}

TEST(Fit, RecoversNoiseFreeParameter) {
  const auto truth = reference_params();
  auto prob = CalibrationProblem::with_default_bounds({noise_free("nob_1", truth)}, truth, {"mu_NOB"});
  const auto r = fit(prob, quick());
  EXPECT_NEAR(r.value("mu_NOB"), 0.67, 0.67e-4);
  EXPECT_LT(r.j_opt, 1e-6);
}

TEST(PatternSearch, ConvexQuadraticFromTwoStarts) {
  auto f = [](const std::vector<double>& x) { return std::pow(x[0] - 0.3, 2) + 2 * std::pow(x[1] - 0.71, 2); };
  const auto a = pattern_search(f, {0.05, 0.95}, 0.1, 1e-7, 100000);
  const auto b = pattern_search(f, {0.9, 0.1}, 0.1, 1e-7, 100000);
  EXPECT_NEAR(a.x[0], b.x[0], 1e-6);
  EXPECT_NEAR(a.x[1], b.x[1], 1e-6);
  EXPECT_NEAR(a.x[0], 0.3, 1e-6);
}

TEST(Fim, SingleParameterClosedForm) {
  const auto truth = reference_params();
  CalibrationProblem prob;
  prob.experiments = {noise_free("nob_1", truth)};
  prob.base = truth;
  prob.candidates = {"mu_NOB"};
  prob.bounds = {{0.1, 2.0}};
  const Objective obj(prob);
  const double theta = 0.67;
  const double h = 1e-4 * theta;
  const SolverOptions tight{1e-9, 1e-12, 0.5, 2'000'000};
  const auto yu = obj.simulated(obj.assign({theta + h}), tight);
  const auto yd = obj.simulated(obj.assign({theta - h}), tight);
  double info = 0.0;
  for (Eigen::Index i = 0; i < yu.size(); ++i) info += std::pow((yu[i] - yd[i]) / (2 * h) / obj.sigmas()[i], 2);

  const auto f = fim(obj, {theta});
  EXPECT_NEAR(f.fim(0, 0), info, 1e-9 * info);
  EXPECT_NEAR(f.covariance(0, 0), 1.0 / info, 1e-9 / info);

  FitResult r;
  r.names = {"mu_NOB"};
  r.values = {theta};
  r.j_opt = 1.0;
  identifiability(obj, r, FitOptions{});
  EXPECT_NEAR(r.cv_percent[0], 100.0 / (theta * std::sqrt(info)), 1e-6);
}

TEST(Fim, CovarianceSymmetricWithNonnegativeDiagonal) {
  const auto truth = reference_params();
  CalibrationProblem prob;
  prob.experiments = {noise_free("amo_1", truth)};
  prob.base = truth;
  prob.candidates = {"mu_AOB.AMO", "K_AOB.NH3", "K_AOB.O2.AMO"};
  prob.bounds = {{0.1, 2}, {0.01, 1}, {0.05, 2}};
  const Objective obj(prob);
  const auto f = fim(obj, {0.49, 0.12, 0.23});
  ASSERT_FALSE(f.singular);
  EXPECT_LT((f.covariance - f.covariance.transpose()).cwiseAbs().maxCoeff(), 1e-10 * f.covariance.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_GE(f.covariance(i, i), 0.0);
}

TEST(Fim, RichardsonRatioOfCentralDifferences) {
  const auto truth = reference_params();
  CalibrationProblem prob;
  prob.experiments = {noise_free("amo_1", truth)};
  prob.base = truth;
  prob.candidates = {"K_AOB.NH3"};
  prob.bounds = {{0.01, 1}};
  const Objective obj(prob);
  const SolverOptions tight{1e-11, 1e-14, 0.5, 5'000'000};
  const auto s1 = fim(obj, {0.12}, 0.04, tight).sensitivities;
  const auto s2 = fim(obj, {0.12}, 0.02, tight).sensitivities;
  const auto s3 = fim(obj, {0.12}, 0.01, tight).sensitivities;
  const double ratio = (s1 - s2).norm() / (s2 - s3).norm();
  EXPECT_NEAR(ratio, 4.0, 0.4);
}

TEST(Collinearity, OrthonormalColumnsGiveOne) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(6, 3);
  s(0, 0) = 1;
  s(1, 1) = 3;  // norm does not matter
  s(2, 2) = -0.5;
  EXPECT_NEAR(collinearity_index(s), 1.0, 1e-12);
}

TEST(Collinearity, DuplicateColumnsGiveInfinity) {
  Eigen::MatrixXd s(4, 2);
  s << 1, 1, 2, 2, 3, 3, 4, 4;
  EXPECT_TRUE(std::isinf(collinearity_index(s)));
  s(0, 1) = 1.0 + 1e-6;
  EXPECT_GT(collinearity_index(s), 1e3);
}

TEST(Collinearity, InvariantToColumnScaling) {
  Eigen::MatrixXd s(5, 2);
  s << 1, 0.2, 2, 0.9, 3, 1.1, 4, 2.5, 5, 2.0;
  Eigen::MatrixXd t = s;
  t.col(1) *= 1e4;
  EXPECT_NEAR(collinearity_index(s), collinearity_index(t), 1e-9);
}

TEST(Beale, TabulatedRatio) {
  // F(0.95; 2, 98) = 3.0892 from published tables
  EXPECT_NEAR(beale_jcrit(1.0, 2, 100), 1.0 + 2.0 / 98.0 * 3.0892, 1e-4);
  EXPECT_NEAR(beale_jcrit(1.0, 2, 100), 1.0633, 1e-3);
  // F(0.95; 1, 1) = 161.45
  EXPECT_NEAR(beale_jcrit(2.0, 1, 2), 2.0 * (1.0 + 161.45), 0.01);
  EXPECT_EQ(beale_jcrit(0.0, 3, 50), 0.0);
  EXPECT_THROW(beale_jcrit(1.0, 3, 3), ValidationError);
}

TEST(Aic, Formula) {
  EXPECT_NEAR(aic(50.0, 100, 2), 100 * std::log(0.5) + 4, 1e-12);
  EXPECT_NEAR(aic(50.0, 100, 3) - aic(50.0, 100, 2), 2.0, 1e-12);
}

TEST(SubsetSearch, SingletonsOrderedByJAndUselessParameterPenalised) {
  const auto truth = reference_params();
  auto prob = CalibrationProblem::with_default_bounds({noise_free("nob_1", truth, 1.0)}, truth,
                                                      {"mu_NOB", "K_HB.S.NOS"});
  prob.base.set("mu_NOB", 0.6);
  const auto table = subset_search(prob, 2, quick());
  std::vector<const SubsetRow*> singles, pairs;
  for (const auto& r : table.rows) (r.subset.size() == 1 ? singles : pairs).push_back(&r);
  ASSERT_EQ(singles.size(), 2u);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_LE(singles[0]->fit.j_opt, singles[1]->fit.j_opt);
  EXPECT_EQ(singles[0]->subset[0], "mu_NOB");
  EXPECT_GT(pairs[0]->fit.aic, singles[0]->fit.aic);
  ASSERT_TRUE(table.selected.has_value());
  EXPECT_EQ(table.rows[*table.selected].subset, std::vector<std::string>{"mu_NOB"});
}

TEST(CalibrationProblem, DefaultBoundsAndValidation) {
  const auto prob = CalibrationProblem::with_default_bounds({noise_free("nob_1", reference_params())}, ParameterSet::defaults(),
                                                            {"mu_NOB", "eta_NOR"});
  EXPECT_NEAR(prob.bound("mu_NOB").lower, 0.78 / 5, 1e-12);
  EXPECT_NEAR(prob.bound("mu_NOB").upper, 0.78 * 5, 1e-12);
  EXPECT_LE(prob.bound("eta_NOR").upper, 1.0);
  CalibrationProblem bad = prob;
  bad.candidates.push_back("no_such");
  bad.bounds.push_back({1, 2});
  EXPECT_THROW(bad.validate(), ValidationError);
}
