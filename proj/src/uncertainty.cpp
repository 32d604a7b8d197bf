#include "ndha/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <boost/math/distributions/normal.hpp>

#include "ndha/errors.hpp"
#include "ndha/io_util.hpp"

namespace ndha {

ParameterDistribution ParameterDistribution::from_classes(const ParameterSet& params,
                                                          const std::vector<std::string>& names) {
  ParameterDistribution d;
  d.source = DistributionSource::Class;
  d.ranges = SamplePlan::from_classes(params, names, 2, 1).ranges;
  for (const auto& n : d.names()) d.means.push_back(params.value(n));
  d.validate();
  return d;
}

ParameterDistribution ParameterDistribution::from_calibration(const std::vector<std::string>& names,
                                                              const std::vector<double>& means,
                                                              const std::vector<double>& cv_percent, double z) {
  if (names.size() != means.size() || names.size() != cv_percent.size())
    throw ValidationError("calibrated distribution needs one mean and CV per name");
  ParameterDistribution d;
  d.source = DistributionSource::Calibrated;
  d.means = means;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const double h = z * cv_percent[k] / 100.0;
    if (!(h >= 0.0) || !std::isfinite(h)) throw ValidationError("CV of " + names[k] + " must be finite and >= 0");
    d.ranges.push_back({names[k], means[k] * (1.0 - h), means[k] * (1.0 + h)});
  }
  d.validate();
  return d;
}

ParameterDistribution ParameterDistribution::from_fit(const FitResult& fit, double z, bool correlated) {
  ParameterDistribution d = from_calibration(fit.names, fit.values, fit.cv_percent, z);
  if (correlated) {
    if (fit.covariance.size() == 0) throw NumericalError("correlated sampling needs a non-singular covariance");
    d.covariance = fit.covariance;
    d.correlated = true;
  }
  return d;
}

std::vector<std::string> ParameterDistribution::names() const {
  std::vector<std::string> out;
  for (const auto& r : ranges) out.push_back(r.name);
  return out;
}

void ParameterDistribution::validate() const {
  for (const auto& r : ranges)
    if (!(r.lower > 0.0) || !(r.upper >= r.lower))
      throw ValidationError("distribution range of " + r.name + " must be positive");
  if (correlated) {
    const auto p = static_cast<Eigen::Index>(ranges.size());
    if (covariance.rows() != p || covariance.cols() != p || means.size() != ranges.size())
      throw ValidationError("correlated distribution needs a p x p covariance and p means");
  }
}

Eigen::MatrixXd ParameterDistribution::sample(std::size_t n, std::uint64_t seed) const {
  validate();
  SamplePlan plan;
  plan.samples = n;
  plan.seed = seed;
  if (!correlated) {
    plan.ranges = ranges;
    return lhs_sample(plan);
  }
  for (const auto& r : ranges) plan.ranges.push_back({r.name, 0.0, 1.0});
  const Eigen::MatrixXd u = lhs_sample(plan);
  const Eigen::LLT<Eigen::MatrixXd> llt(covariance);
  if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  const boost::math::normal_distribution<double> phi;
  Eigen::MatrixXd out(u.rows(), u.cols());
  Eigen::VectorXd z(u.cols());
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    for (Eigen::Index k = 0; k < u.cols(); ++k)
      z(k) = boost::math::quantile(phi, std::clamp(u(i, k), 1e-12, 1.0 - 1e-12));
    const Eigen::VectorXd x = l * z;
    for (Eigen::Index k = 0; k < u.cols(); ++k) {
      const auto& r = ranges[static_cast<std::size_t>(k)];
      out(i, k) = std::clamp(means[static_cast<std::size_t>(k)] + x(k), r.lower, r.upper);
    }
  }
  return out;
}

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) throw ValidationError("quantile of an empty sample");
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= s.size()) return s.back();
  const double w = pos - static_cast<double>(i);
  return s[i] + w * (s[i + 1] - s[i]);
}

PropagationResult propagate(const ParameterDistribution& dist, const Experiment& experiment_in,
                            const ParameterSet& base, std::size_t n_samples, std::uint64_t seed,
                            const std::vector<Observable>& obs, double interval_min, const SolverOptions& options) {
  if (n_samples < 50) throw ValidationError("propagation needs at least 50 samples");
  if (obs.empty()) throw ValidationError("no observable requested");
  if (!(interval_min > 0.0)) throw ValidationError("output interval must be > 0");
  const Experiment experiment = resolve_initial_state(experiment_in, options);
  std::vector<double> times;
  for (double t = 0.0; t <= experiment.horizon_min + 1e-9; t += interval_min) times.push_back(t);
  if (times.back() < experiment.horizon_min - 1e-9) times.push_back(experiment.horizon_min);
  const auto nt = static_cast<Eigen::Index>(times.size());

  PropagationResult res;
  res.samples = n_samples;
  res.parameter_samples = dist.sample(n_samples, seed);
  const auto names = dist.names();
  std::vector<std::vector<Eigen::RowVectorXd>> rows(obs.size());
  std::string first_error;
  for (Eigen::Index i = 0; i < res.parameter_samples.rows(); ++i) {
    try {
      const Trajectory traj =
          simulate_at(experiment, apply_sample(base, names, res.parameter_samples.row(i)), times, options);
      std::vector<Eigen::RowVectorXd> got;
      for (Observable o : obs) {
        const auto v = observables(traj, o, times);
        got.push_back(Eigen::Map<const Eigen::RowVectorXd>(v.data(), nt));
      }
      for (std::size_t k = 0; k < obs.size(); ++k) rows[k].push_back(std::move(got[k]));
    } catch (const IntegrationError& e) {
      if (first_error.empty()) first_error = e.what();
      ++res.failed;
    }
  }
  if (static_cast<double>(res.failed) > kMaxFailureFraction * static_cast<double>(n_samples)) {
    std::ostringstream msg;
    msg << res.failed << " of " << n_samples << " simulations failed (first: " << first_error << ")";
    throw NumericalError(msg.str());
  }

  for (std::size_t k = 0; k < obs.size(); ++k) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows[k].size()), nt);
    for (std::size_t i = 0; i < rows[k].size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[k][i];
    PredictionBand band;
    band.observable = obs[k];
    band.times_min = times;
    std::vector<double> col(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index t = 0; t < nt; ++t) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) col[static_cast<std::size_t>(i)] = m(i, t);
      std::sort(col.begin(), col.end());
      band.lower.push_back(quantile_sorted(col, 0.025));
      band.median.push_back(quantile_sorted(col, 0.5));
      band.upper.push_back(quantile_sorted(col, 0.975));
      band.n_effective.push_back(col.size());
    }
    res.bands.push_back(std::move(band));
    res.outputs.push_back(std::move(m));
  }
  return res;
}

namespace {

double interp(const std::vector<double>& t, const std::vector<double>& v, double q) {
  if (q <= t.front()) return v.front();
  if (q >= t.back()) return v.back();
  const auto it = std::upper_bound(t.begin(), t.end(), q);
  const auto i = static_cast<std::size_t>(it - t.begin());
  const double w = (q - t[i - 1]) / (t[i] - t[i - 1]);
  return (1.0 - w) * v[i - 1] + w * v[i];
}

void check_band(const PredictionBand& band, const std::vector<double>& times, const std::vector<double>& data) {
  if (band.times_min.empty()) throw ValidationError("empty prediction band");
  if (times.size() != data.size()) throw ValidationError("data times and values differ in length");
  if (data.empty()) throw ValidationError("no data to compare with the band");
}

}  // namespace

ArilResult aril(const PredictionBand& band, const std::vector<double>& times, const std::vector<double>& data) {
  check_band(band, times, data);
  double peak = 0.0;
  for (double d : data) peak = std::max(peak, std::abs(d));
  ArilResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!(std::abs(data[i]) >= 0.01 * peak) || data[i] == 0.0) {
      ++out.excluded;
      continue;
    }
    const double w = interp(band.times_min, band.upper, times[i]) - interp(band.times_min, band.lower, times[i]);
    sum += w / std::abs(data[i]);
    ++out.used;
  }
  if (out.used == 0) throw ValidationError("every data point was excluded from ARIL");
  out.value = sum / static_cast<double>(out.used);
  return out;
}

CoverageResult pci_puci(const PredictionBand& band, const std::vector<double>& times, const std::vector<double>& data) {
  check_band(band, times, data);
  CoverageResult out;
  std::size_t inside = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double lo = interp(band.times_min, band.lower, times[i]);
    const double hi = interp(band.times_min, band.upper, times[i]);
    if (data[i] >= lo && data[i] <= hi) ++inside;
  }
  out.pci = static_cast<double>(inside) / static_cast<double>(data.size());
  out.aril = aril(band, times, data).value;
  if (out.pci == 0.0)
    out.puci = 0.0;
  else
    out.puci = out.aril > 0.0 ? out.pci / out.aril : std::numeric_limits<double>::infinity();
  return out;
}

std::string band_csv(const PredictionBand& band) {
  std::ostringstream out;
  out << "time_min,lower,median,upper,n_effective\n";
  for (std::size_t t = 0; t < band.times_min.size(); ++t)
    out << format_double(band.times_min[t]) << "," << format_double(band.lower[t]) << ","
        << format_double(band.median[t]) << "," << format_double(band.upper[t]) << "," << band.n_effective[t]
        << "\n";
  return out.str();
}

}  // namespace ndha
