#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "ndha/errors.hpp"

namespace ndha {

struct IntegratorOptions {
  double rtol = 1e-6;
  double atol = 1e-9;
  double initial_step = 0.0;  // 0 selects a step from the initial derivative
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 2'000'000;
  // Components may undershoot zero by at most this much before being clipped
  // back; larger undershoot is an error. Negative selects atol.
  double negativity_tolerance = -1.0;
  // Bit i set: component i may go negative (bookkeeping pools).
  std::uint64_t sign_exempt = 0;
};

struct IntegratorStats {
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evaluations = 0;
};

// Four-stage-error-pair L-stable Rosenbrock method (order 4, embedded order 3)
// with the Shampine coefficient set and a third-order dense output. The
// Jacobian is formed by forward differences at every step; the system is
// treated as autonomous.
//
// Rhs must provide `Vec operator()(const Vec&)`. Time is whatever unit the
// right-hand side uses.
template <int N>
class Rosenbrock4 {
public:
  using Vec = Eigen::Matrix<double, N, 1>;
  using Mat = Eigen::Matrix<double, N, N>;

  explicit Rosenbrock4(IntegratorOptions options = {}) : opt_(options) {}

  const IntegratorStats& stats() const { return stats_; }

  // Advances x from t0 to t1. For each t in `outputs` lying in (t0, t1] the
  // sink receives (t, x(t)); outputs must be sorted ascending. Returns x(t1).
  template <class Rhs, class Sink>
  Vec integrate(Rhs& rhs, Vec x, double t0, double t1, std::span<const double> outputs, Sink&& sink) {
    auto next_out = std::upper_bound(outputs.begin(), outputs.end(), t0);
    if (t1 <= t0) return x;
    const double span = t1 - t0;
    double t = t0;
    double dt = opt_.initial_step > 0.0 ? opt_.initial_step : initial_step(rhs, x, span);
    double err_prev = 1.0;
    const double neg_tol = opt_.negativity_tolerance >= 0.0 ? opt_.negativity_tolerance : opt_.atol;
    const double min_step = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(t1), 1.0);

    while (t < t1) {
      if (stats_.accepted + stats_.rejected >= opt_.max_steps)
        fail("maximum number of steps exceeded", t, x);
      dt = std::min({dt, opt_.max_step, t1 - t});
      const bool last = (t + dt >= t1) || (t1 - (t + dt) < min_step);
      if (last) dt = t1 - t;

      Vec x_new, x_err;
      step(rhs, x, dt, x_new, x_err);
      const double err = error_norm(x, x_new, x_err);
      if (!std::isfinite(err) || err > 1.0) {
        ++stats_.rejected;
        const double fac = std::isfinite(err) ? std::max(0.2, 0.9 * std::pow(err, -0.25)) : 0.2;
        dt *= fac;
        if (dt < min_step) fail("step size collapsed", t, x);
        continue;
      }
      // An undershoot beyond the tolerance is retried with a smaller step;
      // it is an error only once the step cannot shrink further.
      int worst = -1;
      for (int i = 0; i < N; ++i)
        if (guarded(i) && x_new[i] < -neg_tol && (worst < 0 || x_new[i] < x_new[worst])) worst = i;
      if (worst >= 0) {
        ++stats_.rejected;
        dt *= 0.25;
        if (dt < min_step) {
          std::ostringstream msg;
          msg << "component " << worst << " undershoots zero by " << -x_new[worst];
          fail(msg.str(), t + dt, x_new);
        }
        continue;
      }
      ++stats_.accepted;
      const double t_new = last ? t1 : t + dt;

      // Dense output on the accepted interval.
      while (next_out != outputs.end() && *next_out <= t_new) {
        Vec xo = interpolate(*next_out, t, t_new, x, x_new);
        for (int i = 0; i < N; ++i)
          if (guarded(i) && xo[i] < 0.0) xo[i] = 0.0;
        sink(*next_out, xo);
        ++next_out;
      }

      for (int i = 0; i < N; ++i)
        if (guarded(i) && x_new[i] < 0.0) x_new[i] = 0.0;
      x = x_new;
      t = t_new;

      // Gustafsson-style predictive step control.
      const double e = std::max(err, 1e-10);
      double fac = 0.9 * std::pow(e, -0.25) * std::pow(err_prev / e, 0.08);
      fac = std::clamp(fac, 0.2, 6.0);
      err_prev = e;
      dt *= fac;
    }
    return x;
  }

private:
  bool guarded(int i) const { return i >= 64 || !((opt_.sign_exempt >> i) & 1U); }

  // Coefficients of the Shampine set (Hairer & Wanner, RODAS-type form).
  static constexpr double gamma = 0.25;
  static constexpr double c21 = -0.5668800000000000e+01, a21 = 0.1544000000000000e+01;
  static constexpr double c31 = -0.2430093356833875e+01, c32 = -0.2063599157091915e+00;
  static constexpr double a31 = 0.9466785280815826e+00, a32 = 0.2557011698983284e+00;
  static constexpr double c41 = -0.1073529058151375e+00, c42 = -0.9594562251023355e+01,
                          c43 = -0.2047028614809616e+02;
  static constexpr double a41 = 0.3314825187068521e+01, a42 = 0.2896124015972201e+01,
                          a43 = 0.9986419139977817e+00;
  static constexpr double c51 = 0.7496443313967647e+01, c52 = -0.1024680431464352e+02,
                          c53 = -0.3399990352819905e+02, c54 = 0.1170890893206160e+02;
  static constexpr double a51 = 0.1221224509226641e+01, a52 = 0.6019134481288629e+01,
                          a53 = 0.1253708332932087e+02, a54 = -0.6878860361058950e+00;
  static constexpr double c61 = 0.8083246795921522e+01, c62 = -0.7981132988064893e+01,
                          c63 = -0.3152159432874371e+02, c64 = 0.1631930543123136e+02,
                          c65 = -0.6058818238834054e+01;
  static constexpr double d21 = 0.1012623508344586e+02, d22 = -0.7487995877610167e+01,
                          d23 = -0.3480091861555747e+02, d24 = -0.7992771707568823e+01,
                          d25 = 0.1025137723295662e+01;
  static constexpr double d31 = -0.6762803392801253e+00, d32 = 0.6087714651680015e+01,
                          d33 = 0.1643084320892478e+02, d34 = 0.2476722511418386e+02,
                          d35 = -0.6594389125716872e+01;

  template <class Rhs>
  Vec eval(Rhs& rhs, const Vec& x) {
    ++stats_.rhs_evaluations;
    return rhs(x);
  }

  template <class Rhs>
  double initial_step(Rhs& rhs, const Vec& x, double span) {
    const Vec f = eval(rhs, x);
    double d0 = 0.0, d1 = 0.0;
    for (int i = 0; i < N; ++i) {
      const double sc = opt_.atol + opt_.rtol * std::abs(x[i]);
      d0 += (x[i] / sc) * (x[i] / sc);
      d1 += (f[i] / sc) * (f[i] / sc);
    }
    d0 = std::sqrt(d0 / N);
    d1 = std::sqrt(d1 / N);
    double h = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    return std::min(h, span * 0.01);
  }

  template <class Rhs>
  void jacobian(Rhs& rhs, const Vec& x, const Vec& f0, Mat& jac) {
    const double sqrt_eps = std::sqrt(std::numeric_limits<double>::epsilon());
    Vec xp = x;
    for (int j = 0; j < N; ++j) {
      const double h = sqrt_eps * std::max(std::abs(x[j]), 1e-5);
      xp[j] = x[j] + h;
      jac.col(j) = (eval(rhs, xp) - f0) / h;
      xp[j] = x[j];
    }
  }

  template <class Rhs>
  void step(Rhs& rhs, const Vec& x, double dt, Vec& x_out, Vec& x_err) {
    const Vec f0 = eval(rhs, x);
    Mat jac;
    jacobian(rhs, x, f0, jac);
    Mat m = -jac;
    m.diagonal().array() += 1.0 / (gamma * dt);
    const Eigen::PartialPivLU<Mat> lu(m);

    g1_ = lu.solve(f0);
    Vec xt = x + a21 * g1_;
    g2_ = lu.solve(eval(rhs, xt) + c21 * g1_ / dt);
    xt = x + a31 * g1_ + a32 * g2_;
    g3_ = lu.solve(eval(rhs, xt) + (c31 * g1_ + c32 * g2_) / dt);
    xt = x + a41 * g1_ + a42 * g2_ + a43 * g3_;
    g4_ = lu.solve(eval(rhs, xt) + (c41 * g1_ + c42 * g2_ + c43 * g3_) / dt);
    xt = x + a51 * g1_ + a52 * g2_ + a53 * g3_ + a54 * g4_;
    g5_ = lu.solve(eval(rhs, xt) + (c51 * g1_ + c52 * g2_ + c53 * g3_ + c54 * g4_) / dt);
    xt += g5_;
    x_err = lu.solve(eval(rhs, xt) + (c61 * g1_ + c62 * g2_ + c63 * g3_ + c64 * g4_ + c65 * g5_) / dt);
    x_out = xt + x_err;
  }

  double error_norm(const Vec& x, const Vec& x_new, const Vec& x_err) const {
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      const double sc = opt_.atol + opt_.rtol * std::max(std::abs(x[i]), std::abs(x_new[i]));
      const double r = x_err[i] / sc;
      acc += r * r;
    }
    return std::sqrt(acc / N);
  }

  Vec interpolate(double t, double t_old, double t_new, const Vec& x_old, const Vec& x_new) const {
    const Vec cont3 = d21 * g1_ + d22 * g2_ + d23 * g3_ + d24 * g4_ + d25 * g5_;
    const Vec cont4 = d31 * g1_ + d32 * g2_ + d33 * g3_ + d34 * g4_ + d35 * g5_;
    const double s = (t - t_old) / (t_new - t_old);
    const double s1 = 1.0 - s;
    Vec out = x_old + s * ((x_new - x_old) + s1 * (cont3 + s * cont4));
    return out;
  }

  [[noreturn]] void fail(const std::string& why, double t, const Vec& x) const {
    std::ostringstream msg;
    msg << why << " at t=" << t << "; state:";
    for (int i = 0; i < N; ++i) msg << ' ' << x[i];
    throw IntegrationError(msg.str(), t);
  }

  IntegratorOptions opt_;
  IntegratorStats stats_;
  Vec g1_, g2_, g3_, g4_, g5_;
};

}  // namespace ndha
