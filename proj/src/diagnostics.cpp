#include "ndha/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>

#include "ndha/errors.hpp"

namespace ndha {

namespace {

double mean(const std::vector<double>& x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double mean_square(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

QqSummary qq_summary(std::vector<double> x) {
  QqSummary q;
  const std::size_t n = x.size();
  std::sort(x.begin(), x.end());
  const double m = mean(x);
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  const boost::math::normal_distribution<double> phi;
  std::vector<double> score(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Blom plotting positions.
    score[i] = boost::math::quantile(phi, (static_cast<double>(i) + 1.0 - 0.375) / (static_cast<double>(n) + 0.25));
    z[i] = (x[i] - m) / sd;
  }
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += z[i] * score[i];
    sxx += z[i] * z[i];
    syy += score[i] * score[i];
    q.max_deviation = std::max(q.max_deviation, std::abs(z[i] - score[i]));
  }
  q.correlation = sxy / std::sqrt(sxx * syy);
  const std::size_t tail = std::max<std::size_t>(1, n / 20);
  for (std::size_t i = 0; i < tail; ++i) {
    q.lower_tail += (z[i] - score[i]) / static_cast<double>(tail);
    q.upper_tail += (z[n - 1 - i] - score[n - 1 - i]) / static_cast<double>(tail);
  }
  return q;
}

bool in_scope(const CalibrationProblem& problem, Observable o) {
  return problem.series.empty() ||
         std::find(problem.series.begin(), problem.series.end(), o) != problem.series.end();
}

}  // namespace

void ResidualSeries::validate() const {
  if (times_min.size() != residuals.size()) throw ValidationError(label + ": times and residuals differ in length");
  for (double r : residuals)
    if (!std::isfinite(r)) throw ValidationError(label + ": residual is not finite");
}

std::vector<ResidualSeries> residual_series(const Objective& objective, const ParameterSet& params) {
  const Eigen::VectorXd sim = objective.simulated(params, objective.problem().solver);
  std::vector<ResidualSeries> out;
  Eigen::Index at = 0;
  for (const auto& e : objective.problem().experiments)
    for (const auto& m : e.measured) {
      if (!in_scope(objective.problem(), m.observable)) continue;
      ResidualSeries r;
      r.label = e.label + ":" + std::string(observable_name(m.observable));
      r.times_min = m.times_min;
      r.sigma = m.sigma;
      for (double v : m.values) r.residuals.push_back(sim(at++) - v);
      out.push_back(std::move(r));
    }
  return out;
}

double lilliefors_statistic(std::vector<double> x) {
  const std::size_t n = x.size();
  if (n < 5) throw ValidationError("normality test needs at least 5 residuals");
  const double m = mean(x);
  double var = 0.0;
  for (double v : x) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw NumericalError("residuals have zero variance");
  std::sort(x.begin(), x.end());
  const boost::math::normal_distribution<double> phi;
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = boost::math::cdf(phi, (x[i] - m) / sd);
    d = std::max({d, static_cast<double>(i + 1) / static_cast<double>(n) - f, f - static_cast<double>(i) / static_cast<double>(n)});
  }
  return d;
}

KsResult ks_normality(const std::vector<double>& residuals, double alpha, std::size_t replicates,
                      std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (replicates < 100) throw ValidationError("at least 100 Monte-Carlo replicates required");
  KsResult out;
  out.n = residuals.size();
  out.statistic = lilliefors_statistic(residuals);
  out.qq = qq_summary(residuals);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> null(replicates), sample(out.n);
  std::size_t exceed = 0;
  for (std::size_t r = 0; r < replicates; ++r) {
    for (double& v : sample) v = gauss(rng);
    null[r] = lilliefors_statistic(sample);
    if (null[r] >= out.statistic) ++exceed;
  }
  std::sort(null.begin(), null.end());
  const auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * static_cast<double>(replicates))) - 1;
  out.critical = null[std::min(k, replicates - 1)];
  out.p_value = static_cast<double>(exceed + 1) / static_cast<double>(replicates + 1);
  out.reject = out.statistic > out.critical;
  return out;
}

AcfResult acf(const std::vector<double>& x, std::size_t max_lag) {
  const std::size_t n = x.size();
  if (n < 2 || 2 * max_lag >= n) throw ValidationError("ACF needs max_lag < n/2");
  const double m = mean(x);
  double c0 = 0.0;
  for (double v : x) c0 += (v - m) * (v - m);
  AcfResult out;
  out.band = 1.96 / std::sqrt(static_cast<double>(n));
  out.values.assign(max_lag + 1, 0.0);
  out.values[0] = 1.0;
  if (!(c0 > 0.0)) return out;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double ck = 0.0;
    for (std::size_t t = 0; t + k < n; ++t) ck += (x[t] - m) * (x[t + k] - m);
    out.values[k] = ck / c0;
    if (std::abs(out.values[k]) > out.band) ++out.outside_band;
  }
  return out;
}

std::string FTestResult::format() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%d (%.2g/%.2g)", pass ? 1 : 0, statistic, critical);
  return buf;
}

FTestResult f_test_unit_line(const std::vector<double>& obs, const std::vector<double>& sim, double alpha) {
  const std::size_t n = obs.size();
  if (sim.size() != n) throw ValidationError("observed and simulated series differ in length");
  if (n < 3) throw ValidationError("unit-line F-test needs at least 3 points");
  const double ms = mean(sim), mo = mean(obs);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (sim[i] - ms) * (sim[i] - ms);
    sxy += (sim[i] - ms) * (obs[i] - mo);
  }
  if (!(sxx > 0.0)) throw NumericalError("simulated series has zero variance");
  FTestResult out;
  out.slope = sxy / sxx;
  out.intercept = mo - out.slope * ms;
  double sse = 0.0, ss0 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = obs[i] - out.intercept - out.slope * sim[i];
    sse += e * e;
    const double e0 = obs[i] - sim[i];
    ss0 += e0 * e0;
  }
  // Extra sum of squares of the restricted model (a, b) = (0, 1).
  const double extra = std::max(ss0 - sse, 0.0);
  const double dof = static_cast<double>(n - 2);
  if (sse <= 1e-300 * std::max(1.0, ss0))
    out.statistic = extra > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  else
    out.statistic = (extra / 2.0) / (sse / dof);
  const boost::math::fisher_f_distribution<double> f(2.0, dof);
  out.critical = boost::math::quantile(f, 1.0 - alpha);
  out.pass = out.statistic <= out.critical;
  return out;
}

MsepResult msep_decomposition(const std::vector<double>& obs, const std::vector<double>& sim) {
  const std::size_t n = obs.size();
  if (sim.size() != n) throw ValidationError("observed and simulated series differ in length");
  if (n < 2) throw ValidationError("MSEP needs at least 2 points");
  const double ms = mean(sim), mo = mean(obs);
  double vs = 0.0, vo = 0.0, cov = 0.0, msep = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    vs += (sim[i] - ms) * (sim[i] - ms);
    vo += (obs[i] - mo) * (obs[i] - mo);
    cov += (sim[i] - ms) * (obs[i] - mo);
    msep += (sim[i] - obs[i]) * (sim[i] - obs[i]);
  }
  const double nn = static_cast<double>(n);
  MsepResult out;
  out.msep = msep / nn;
  if (!(out.msep > 0.0)) {
    out.defined = false;
    return out;
  }
  const double s_sim = std::sqrt(vs / nn), s_obs = std::sqrt(vo / nn);
  const double r = (vs > 0.0 && vo > 0.0) ? cov / std::sqrt(vs * vo) : 0.0;
  out.me = (ms - mo) * (ms - mo) / out.msep;
  out.se = (s_sim - r * s_obs) * (s_sim - r * s_obs) / out.msep;
  out.nc = 1.0 - out.me - out.se;
  return out;
}

double rmse(const std::vector<double>& residuals) {
  if (residuals.empty()) throw ValidationError("RMSE of an empty series");
  return std::sqrt(mean_square(residuals));
}

double r_squared(const std::vector<double>& obs, const std::vector<double>& sim) {
  if (obs.size() != sim.size() || obs.empty()) throw ValidationError("R2 needs aligned nonempty series");
  const double mo = mean(obs);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    ss_res += (obs[i] - sim[i]) * (obs[i] - sim[i]);
    ss_tot += (obs[i] - mo) * (obs[i] - mo);
  }
  if (!(ss_tot > 0.0)) throw NumericalError("observed series has zero variance");
  return 1.0 - ss_res / ss_tot;
}

double janus(const std::vector<double>& cal, const std::vector<double>& val) {
  if (cal.empty() || val.empty()) throw ValidationError("Janus coefficient needs two nonempty residual sets");
  const double mc = mean_square(cal);
  if (!(mc > 0.0)) throw NumericalError("calibration MSE is zero");
  return std::sqrt(mean_square(val) / mc);
}

std::vector<SeriesDiagnostics> diagnose(const Objective& objective, const ParameterSet& params, std::size_t max_lag,
                                        std::uint64_t seed) {
  const Eigen::VectorXd sim = objective.simulated(params, objective.problem().solver);
  std::vector<SeriesDiagnostics> out;
  std::vector<double> all_obs, all_sim, all_scaled;
  Eigen::Index at = 0;
  auto fill = [&](SeriesDiagnostics& d, const std::vector<double>& o, const std::vector<double>& s,
                  const std::vector<double>& scaled) {
    d.n = o.size();
    std::vector<double> res(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) res[i] = s[i] - o[i];
    d.rmse = rmse(res);
    d.msep = msep_decomposition(o, s);
    try {
      d.r2 = r_squared(o, s);
    } catch (const NumericalError&) {
      d.r2 = std::numeric_limits<double>::quiet_NaN();
    }
    try {
      d.f_test = f_test_unit_line(o, s);
    } catch (const NumericalError&) {
      d.f_test.statistic = std::numeric_limits<double>::quiet_NaN();
    }
    if (scaled.size() >= 5) {
      try {
        d.ks = ks_normality(scaled, 0.05, 10000, seed);
      } catch (const NumericalError&) {
      }
    }
    if (scaled.size() > 2) d.acf = acf(scaled, std::min(max_lag, (scaled.size() - 1) / 2));
  };
  for (const auto& e : objective.problem().experiments)
    for (const auto& m : e.measured) {
      if (!in_scope(objective.problem(), m.observable)) continue;
      SeriesDiagnostics d;
      d.label = e.label + ":" + std::string(observable_name(m.observable));
      std::vector<double> s, scaled;
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        s.push_back(sim(at++));
        scaled.push_back((s.back() - m.values[i]) / m.sigma);
      }
      fill(d, m.values, s, scaled);
      all_obs.insert(all_obs.end(), m.values.begin(), m.values.end());
      all_sim.insert(all_sim.end(), s.begin(), s.end());
      all_scaled.insert(all_scaled.end(), scaled.begin(), scaled.end());
      out.push_back(std::move(d));
    }
  if (out.size() > 1) {
    SeriesDiagnostics d;
    d.label = "combined";
    fill(d, all_obs, all_sim, all_scaled);
    out.push_back(std::move(d));
  }
  return out;
}

std::string diagnostics_table(const std::vector<SeriesDiagnostics>& rows) {
  std::ostringstream out;
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-28s %6s %8s %10s %6s %6s %6s %10s %-16s %-8s %8s\n", "series", "n", "R2", "MSEP",
                "ME", "SE", "NC", "RMSE", "F-test", "KS", "ACF(1)");
  out << buf;
  for (const auto& d : rows) {
    std::snprintf(buf, sizeof buf, "%-28s %6zu %8.4f %10.3g %6.3f %6.3f %6.3f %10.3g %-16s %-8s %8.3f\n",
                  d.label.c_str(), d.n, d.r2, d.msep.msep, d.msep.me, d.msep.se, d.msep.nc, d.rmse,
                  d.f_test.format().c_str(), d.ks.n == 0 ? "-" : (d.ks.reject ? "reject" : "accept"),
                  d.acf.values.size() > 1 ? d.acf.values[1] : 0.0);
    out << buf;
  }
  for (const auto& d : rows)
    if (d.ks.n > 0) {
      std::snprintf(buf, sizeof buf, "QQ %-25s r=%.4f max|dev|=%.2f tails=%+.2f/%+.2f (D=%.4f, crit=%.4f)\n",
                    d.label.c_str(), d.ks.qq.correlation, d.ks.qq.max_deviation, d.ks.qq.lower_tail,
                    d.ks.qq.upper_tail, d.ks.statistic, d.ks.critical);
      out << buf;
    }
  return out.str();
}

Experiment decimate(const Experiment& experiment, double interval_min) {
  if (!(interval_min > 0.0)) throw ValidationError("decimation interval must be > 0");
  Experiment out = experiment;
  for (auto& m : out.measured) {
    if (m.times_min.size() < 2) throw ValidationError("series too short to decimate");
    std::vector<double> d(m.times_min.size() - 1);
    for (std::size_t i = 0; i + 1 < m.times_min.size(); ++i) d[i] = m.times_min[i + 1] - m.times_min[i];
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
    const double native = d[d.size() / 2];
    const auto k = static_cast<std::size_t>(std::llround(interval_min / native));
    if (k < 1 || interval_min < native * (1.0 - 1e-9))
      throw ValidationError("decimation interval is finer than the native sampling");
    std::vector<double> t, v;
    for (std::size_t i = 0; i < m.times_min.size(); i += k) {
      t.push_back(m.times_min[i]);
      v.push_back(m.values[i]);
    }
    if (t.size() < 10)
      throw ValidationError(experiment.label + ": decimation to " + std::to_string(interval_min) +
                            " min leaves fewer than 10 points");
    m.times_min = std::move(t);
    m.values = std::move(v);
    m.source.clear();
  }
  return out;
}

std::vector<SubsampleRow> subsample_study(const CalibrationProblem& problem, const std::vector<double>& intervals,
                                          const FitOptions& options) {
  std::vector<SubsampleRow> rows;
  for (double interval : intervals) {
    CalibrationProblem p = problem;
    for (auto& e : p.experiments) e = decimate(e, interval);
    SubsampleRow row;
    row.interval_min = interval;
    row.fit = fit(p, options);
    row.points = row.fit.points;
    const Objective obj(p);
    const ParameterSet best = obj.assign(row.fit.values);
    const Eigen::VectorXd sim = obj.simulated(best, p.solver);
    std::vector<double> o(obj.observed().data(), obj.observed().data() + obj.observed().size());
    std::vector<double> s(sim.data(), sim.data() + sim.size());
    std::vector<double> scaled(o.size());
    for (std::size_t i = 0; i < o.size(); ++i) scaled[i] = (s[i] - o[i]) / obj.sigmas()(static_cast<Eigen::Index>(i));
    const AcfResult a = acf(scaled, std::min<std::size_t>(10, (scaled.size() - 1) / 2));
    row.acf_lag1 = a.values.size() > 1 ? a.values[1] : 0.0;
    row.acf_outside = a.outside_band;
    row.f_test = f_test_unit_line(o, s);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string subsample_table(const std::vector<SubsampleRow>& rows) {
  std::ostringstream out;
  char buf[256];
  out << "interval_min,points";
  if (!rows.empty())
    for (const auto& n : rows.front().fit.names) out << "," << n << ",CV_" << n << "_percent";
  out << ",acf_lag1,acf_lags_outside,F_test\n";
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,%zu", r.interval_min, r.points);
    out << buf;
    for (std::size_t k = 0; k < r.fit.values.size(); ++k) {
      std::snprintf(buf, sizeof buf, ",%.6g,%.3g", r.fit.values[k], r.fit.cv_percent[k]);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f,%zu,%s\n", r.acf_lag1, r.acf_outside, r.f_test.format().c_str());
    out << buf;
  }
  return out.str();
}

}  // namespace ndha
