#include "ndha/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

namespace ndha {

SamplePlan SamplePlan::from_classes(const ParameterSet& params, std::vector<std::string> names, std::size_t samples,
                                    std::uint64_t seed) {
  if (names.empty())
    for (const auto& p : params.entries())
      if (!is_fixed_by_convention(p)) names.push_back(p.name);
  SamplePlan plan;
  plan.samples = samples;
  plan.seed = seed;
  for (const auto& name : names) {
    const Parameter& p = params.at(name);
    const double h = relative_half_width(p.uncertainty);
    ParameterRange r{name, p.value * (1.0 - h), p.value * (1.0 + h)};
    if (p.kind == ParameterKind::Factor || p.kind == ParameterKind::Composition) r.upper = std::min(r.upper, 1.0);
    plan.ranges.push_back(r);
  }
  plan.validate();
  return plan;
}

std::vector<std::string> SamplePlan::names() const {
  std::vector<std::string> out;
  for (const auto& r : ranges) out.push_back(r.name);
  return out;
}

void SamplePlan::validate() const {
  if (samples < 2) throw ValidationError("sample plan needs at least 2 samples");
  for (const auto& r : ranges)
    if (!(r.upper >= r.lower) || !std::isfinite(r.lower) || !std::isfinite(r.upper))
      throw ValidationError("bad sampling range for " + r.name);
}

Eigen::MatrixXd lhs_sample(const SamplePlan& plan) {
  plan.validate();
  const auto n = plan.samples;
  const auto p = plan.ranges.size();
  Eigen::MatrixXd out(n, p);
  std::mt19937_64 rng(plan.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> perm(n);
  for (std::size_t j = 0; j < p; ++j) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto& r = plan.ranges[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (static_cast<double>(perm[i]) + unit(rng)) / static_cast<double>(n);
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.lower + u * (r.upper - r.lower);
    }
  }
  return out;
}

ParameterSet apply_sample(const ParameterSet& base, const std::vector<std::string>& names,
                          const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  ParameterSet out = base;
  for (std::size_t j = 0; j < names.size(); ++j) out.set(names[j], row(static_cast<Eigen::Index>(j)));
  return out;
}

Eigen::MatrixXd SrcResult::cumulative_beta2(const std::vector<std::string>& order) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(beta.rows(), static_cast<Eigen::Index>(order.size()));
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto it = std::find(names.begin(), names.end(), order[k]);
    if (it == names.end()) throw ValidationError("unknown parameter " + order[k]);
    const auto j = it - names.begin();
    const auto col = static_cast<Eigen::Index>(k);
    out.col(col) = beta.col(j).array().square();
    if (k > 0) out.col(col) += out.col(col - 1);
  }
  return out;
}

std::vector<std::string> SrcResult::displayed() const {
  std::vector<std::string> out;
  for (Eigen::Index j = 0; j < beta.cols(); ++j)
    for (Eigen::Index t = 0; t < beta.rows(); ++t)
      if (valid[static_cast<std::size_t>(t)] && beta(t, j) * beta(t, j) > kSrcDisplayBeta2) {
        out.push_back(names[static_cast<std::size_t>(j)]);
        break;
      }
  return out;
}

SrcResult src_coefficients(const Eigen::MatrixXd& samples, const Eigen::MatrixXd& outputs,
                           std::vector<std::string> names, std::vector<double> times_min) {
  const auto n = samples.rows();
  const auto p = samples.cols();
  if (outputs.rows() != n) throw ValidationError("samples and outputs have different row counts");
  if (static_cast<Eigen::Index>(names.size()) != p) throw ValidationError("one name per sample column required");
  if (static_cast<Eigen::Index>(times_min.size()) != outputs.cols())
    throw ValidationError("one time per output column required");
  if (n <= p + 1) throw ValidationError("SRC needs more samples than parameters + 1");

  Eigen::MatrixXd z = samples.rowwise() - samples.colwise().mean();
  for (Eigen::Index j = 0; j < p; ++j) {
    const double sd = std::sqrt(z.col(j).squaredNorm() / static_cast<double>(n));
    if (!(sd > 0.0)) throw NumericalError("SRC design is rank deficient: " + names[static_cast<std::size_t>(j)] +
                                          " does not vary");
    z.col(j) /= sd;
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  if (qr.rank() < p) throw NumericalError("SRC design matrix is rank deficient");

  SrcResult res;
  res.names = std::move(names);
  res.times_min = std::move(times_min);
  res.beta = Eigen::MatrixXd::Zero(outputs.cols(), p);
  res.r2.assign(static_cast<std::size_t>(outputs.cols()), 0.0);
  res.valid.assign(static_cast<std::size_t>(outputs.cols()), false);
  for (Eigen::Index t = 0; t < outputs.cols(); ++t) {
    Eigen::VectorXd y = outputs.col(t).array() - outputs.col(t).mean();
    const double sd = std::sqrt(y.squaredNorm() / static_cast<double>(n));
    if (!(sd > 1e-12 * std::max(1.0, outputs.col(t).cwiseAbs().maxCoeff()))) continue;
    y /= sd;
    const Eigen::VectorXd b = qr.solve(y);
    const double sse = (y - z * b).squaredNorm();
    const double r2 = 1.0 - sse / y.squaredNorm();
    res.beta.row(t) = b.transpose();
    res.r2[static_cast<std::size_t>(t)] = r2;
    res.valid[static_cast<std::size_t>(t)] = r2 > kSrcValidityR2;
  }
  return res;
}

std::vector<RankEntry> rank_parameters(const SrcResult& src, double t0_min, double t1_min) {
  std::vector<std::size_t> pts;
  for (std::size_t t = 0; t < src.times_min.size(); ++t)
    if (src.valid[t] && src.times_min[t] >= t0_min - 1e-9 && src.times_min[t] <= t1_min + 1e-9) pts.push_back(t);
  if (pts.empty()) throw ValidationError("no valid SRC time point in the ranking window");

  std::vector<RankEntry> out;
  const auto& defaults = ParameterSet::defaults();
  for (std::size_t j = 0; j < src.names.size(); ++j) {
    if (defaults.contains(src.names[j]) && is_fixed_by_convention(defaults.at(src.names[j]))) continue;
    const auto col = static_cast<Eigen::Index>(j);
    auto b2 = [&](std::size_t t) {
      const double b = src.beta(static_cast<Eigen::Index>(t), col);
      return b * b;
    };
    double score = 0.0;
    if (pts.size() == 1) {
      score = b2(pts[0]);
    } else {
      // Trapezoids only across neighbouring valid points; invalid stretches
      // contribute nothing.
      for (std::size_t k = 1; k < pts.size(); ++k)
        if (pts[k] == pts[k - 1] + 1)
          score += 0.5 * (src.times_min[pts[k]] - src.times_min[pts[k - 1]]) * (b2(pts[k]) + b2(pts[k - 1]));
    }
    out.push_back({src.names[j], score});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankEntry& a, const RankEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.name < b.name;
  });
  return out;
}

SensitivityStudy sensitivity_study(const Experiment& experiment_in, const ParameterSet& params,
                                   const SamplePlan& plan, const std::vector<Observable>& outputs,
                                   double interval_min, const SolverOptions& options) {
  if (outputs.empty()) throw ValidationError("no sensitivity output requested");
  if (!(interval_min > 0.0)) throw ValidationError("output interval must be > 0");
  const Experiment experiment = resolve_initial_state(experiment_in, options);
  std::vector<double> times;
  for (double t = 0.0; t <= experiment.horizon_min + 1e-9; t += interval_min) times.push_back(t);

  SensitivityStudy study;
  study.samples = lhs_sample(plan);
  const auto names = plan.names();
  const auto n = study.samples.rows();
  const auto nt = static_cast<Eigen::Index>(times.size());
  std::vector<Eigen::MatrixXd> y(outputs.size(), Eigen::MatrixXd(n, nt));
  std::vector<Eigen::Index> ok_rows;
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      const Trajectory traj = simulate_at(experiment, apply_sample(params, names, study.samples.row(i)), times,
                                          options);
      for (std::size_t k = 0; k < outputs.size(); ++k) {
        const auto v = observables(traj, outputs[k], times);
        y[k].row(static_cast<Eigen::Index>(ok_rows.size())) =
            Eigen::Map<const Eigen::RowVectorXd>(v.data(), nt);
      }
      ok_rows.push_back(i);
    } catch (const IntegrationError&) {
      ++study.failed;
    }
  }
  const auto m = static_cast<Eigen::Index>(ok_rows.size());
  Eigen::MatrixXd xs(m, study.samples.cols());
  for (Eigen::Index r = 0; r < m; ++r) xs.row(r) = study.samples.row(ok_rows[static_cast<std::size_t>(r)]);
  for (std::size_t k = 0; k < outputs.size(); ++k)
    study.results.push_back(src_coefficients(xs, y[k].topRows(m), names, times));
  return study;
}

std::string src_csv(const SrcResult& src) {
  std::ostringstream out;
  out << "time_min,R2,valid";
  for (const auto& n : src.names) out << "," << n;
  out << "\n";
  for (std::size_t t = 0; t < src.times_min.size(); ++t) {
    out << format_double(src.times_min[t]) << "," << format_double(src.r2[t]) << "," << (src.valid[t] ? 1 : 0);
    for (Eigen::Index j = 0; j < src.beta.cols(); ++j)
      out << "," << format_double(src.beta(static_cast<Eigen::Index>(t), j));
    out << "\n";
  }
  return out.str();
}

std::string ranking_csv(const std::vector<RankEntry>& ranking) {
  std::ostringstream out;
  out << "rank,parameter,score\n";
  for (std::size_t i = 0; i < ranking.size(); ++i)
    out << i + 1 << "," << ranking[i].name << "," << format_double(ranking[i].score) << "\n";
  return out.str();
}

}  // namespace ndha
