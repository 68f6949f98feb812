#pragma once

// Measurement models used to calibrate the device: polariton basis, the
// hybridization-diluted Kerr constant, pump photon numbers, the optical
// reference value, and the weak-driving ringdown moments.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/steady.hpp"
#include "kerrcomb/units.hpp"

namespace kerrcomb {

// ---------------------------------------------------------------------------
// Polaritons

/// Eigenbasis of [[w_a, g], [g, w_b]]. Column n of P holds the bare (a, b)
/// components of polariton n; column 1 is the b-like mode.
struct PolaritonBasis {
  double nu_a = 0.0, nu_b = 0.0;
  Eigen::Matrix2d P = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d P_inv = Eigen::Matrix2d::Identity();

  /// A_nmrs = P*_{2n} P*_{2m} P_{2r} P_{2s} with n, m, r, s in {1, 2}.
  double A(int n, int m, int r, int s) const { return P(1, n - 1) * P(1, m - 1) * P(1, r - 1) * P(1, s - 1); }
  /// Linewidth of polariton n (0 = a-like, 1 = b-like).
  double linewidth(int n, const SystemParams& p) const {
    return P(0, n) * P(0, n) * p.kappa + P(1, n) * P(1, n) * p.gamma;
  }
};

inline PolaritonBasis polariton_modes(const SystemParams& p) {
  Eigen::Matrix2d H;
  H << p.omega_a, p.g, p.g, p.omega_b;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(H);
  Eigen::Vector2d ev = es.eigenvalues();
  Eigen::Matrix2d V = es.eigenvectors();
  // the b-like mode carries the larger weight on the bare nonlinear mode
  if (std::abs(V(1, 0)) > std::abs(V(1, 1)) ||
      (std::abs(V(1, 0)) == std::abs(V(1, 1)) && p.omega_b < p.omega_a)) {
    V.col(0).swap(V.col(1));
    std::swap(ev[0], ev[1]);
  }
  for (int c = 0; c < 2; ++c)
    if (V(c, c) < 0.0) V.col(c) *= -1.0;
  PolaritonBasis pb;
  pb.nu_a = ev[0];
  pb.nu_b = ev[1];
  pb.P = V;
  pb.P_inv = V.transpose();
  return pb;
}

// ---------------------------------------------------------------------------
// Effective Kerr constant of the b-like polariton

struct PumpSpec {
  double detuning_linewidths = 5.0;  // pump above the b-like polariton, in units of its linewidth
  double eta = 1.0;                  // pump amplitude, rad/us
};

struct LambdaB {
  cplx value = 0.0;                  // rad/us; the real part is the measured constant
  double n_b = 0.0;                  // |c_b|^2
  cplx ratio = 0.0;                  // c_a / c_b
  double pump_omega = 0.0;           // rad/us
};

/// Params with the drive placed at the pump frequency for the current bare frequencies.
inline SystemParams pump_params(const SystemParams& p, const PumpSpec& pump) {
  const auto pb = polariton_modes(p);
  SystemParams q = p;
  q.omega_d = pb.nu_b + pump.detuning_linewidths * pb.linewidth(1, p);
  q.eta = pump.eta;
  return q;
}

inline LambdaB lambda_b(const SystemParams& p, const PumpSpec& pump = {}, double min_occupation = 1e-12) {
  const SystemParams q = pump_params(p, pump);
  const auto pb = polariton_modes(q);
  const auto ss = steady_states(q);
  const FixedPoint* pick = nullptr;
  for (const auto& fp : ss.points)
    if (fp.stable() && (!pick || fp.n < pick->n)) pick = &fp;
  if (!pick) throw Error(ErrorCode::InvalidArgument, "no stable steady state at the pump conditions");
  const Eigen::Vector2cd bare(pick->alpha_bar, pick->beta_bar);
  const Eigen::Vector2cd c = pb.P_inv.cast<cplx>() * bare;
  LambdaB out;
  out.pump_omega = q.omega_d;
  out.n_b = std::norm(c[1]);
  if (!(out.n_b > min_occupation)) throw Error(ErrorCode::ZeroOccupation, "b-like polariton is unoccupied");
  out.ratio = c[0] / c[1];
  out.value = q.Lambda * (pb.A(2, 2, 2, 2) + 2.0 * pb.A(2, 1, 2, 1) * std::norm(out.ratio) +
                          2.0 * pb.A(2, 2, 2, 1) * out.ratio + pb.A(2, 1, 2, 2) * std::conj(out.ratio));
  return out;
}

/// Lambda_b at bare detuning delta_ab = omega_a - omega_b (omega_a held fixed).
inline LambdaB lambda_b_at(const SystemParams& base, double delta_ab, const PumpSpec& pump = {}) {
  SystemParams p = base;
  p.omega_b = p.omega_a - delta_ab;
  return lambda_b(p, pump);
}

struct KerrPoint {
  double delta_ab = 0.0;   // rad/us
  double lambda_b = 0.0;   // rad/us
};

struct KerrFit {
  double lambda = 0.0;     // rad/us
  double sigma = 0.0;      // one standard error
  double ci_low = 0.0, ci_high = 0.0;  // 2 sigma interval
  double rms_residual = 0.0;
};

/// One-parameter least squares for the bare Lambda through the Lambda_b model.
inline KerrFit fit_bare_kerr(const std::vector<KerrPoint>& data, const SystemParams& base, const PumpSpec& pump = {}) {
  if (data.size() < 3) throw Error(ErrorCode::FitIllConditioned, "need at least 3 (Delta_ab, Lambda_b) points");
  auto model = [&](double lam, const KerrPoint& d) {
    SystemParams p = base;
    p.Lambda = lam;
    return lambda_b_at(p, d.delta_ab, pump).value.real();
  };
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& d : data) {
    const double f = model(1.0, d);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  if (hi - lo < 1e-3 * std::abs(hi))
    throw Error(ErrorCode::FitIllConditioned, "all points are effectively unhybridized; the model is flat in Delta_ab");

  double lam = 0.0, num = 0.0, den = 0.0;
  for (const auto& d : data) {
    const double f = model(1.0, d);
    num += f * d.lambda_b;
    den += f * f;
  }
  lam = num / den;
  // Gauss-Newton refinement for the weak residual dependence of the steady state on Lambda
  std::vector<double> J(data.size()), r(data.size());
  for (int it = 0; it < 20; ++it) {
    const double h = 1e-6 * std::max(std::abs(lam), 1e-12);
    double jtj = 0.0, jtr = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double m = model(lam, data[i]);
      J[i] = (model(lam + h, data[i]) - model(lam - h, data[i])) / (2.0 * h);
      r[i] = data[i].lambda_b - m;
      jtj += J[i] * J[i];
      jtr += J[i] * r[i];
    }
    const double step = jtr / jtj;
    lam += step;
    if (std::abs(step) <= 1e-14 * std::abs(lam)) break;
  }
  double ssr = 0.0, jtj = 0.0;
  const double h = 1e-6 * std::max(std::abs(lam), 1e-12);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double m = model(lam, data[i]);
    const double j = (model(lam + h, data[i]) - model(lam - h, data[i])) / (2.0 * h);
    ssr += (data[i].lambda_b - m) * (data[i].lambda_b - m);
    jtj += j * j;
  }
  KerrFit fit;
  fit.lambda = lam;
  fit.sigma = std::sqrt(ssr / static_cast<double>(data.size() - 1) / jtj);
  fit.ci_low = lam - 2.0 * fit.sigma;
  fit.ci_high = lam + 2.0 * fit.sigma;
  fit.rms_residual = std::sqrt(ssr / static_cast<double>(data.size()));
  return fit;
}

/// Pump-power photon calibration n_b = kappa_b / (Delta_P^2 + kappa_b^2/4) * P / (hbar omega_P), SI units (W, rad/s).
inline double photon_number(double power_w, double omega_p, double kappa_b, double delta_p) {
  if (power_w < 0.0 || !(omega_p > 0.0) || !(kappa_b > 0.0))
    throw Error(ErrorCode::InvalidArgument, "photon_number needs P >= 0, omega_P > 0, kappa_b > 0");
  return kappa_b / (delta_p * delta_p + 0.25 * kappa_b * kappa_b) * power_w / (units::hbar * omega_p);
}

/// Kerr shift per photon of an optical microresonator, rad/s (SI inputs).
inline double optical_kerr_reference(double omega_op, double n, double n2, double v0) {
  if (!(omega_op > 0.0) || !(n > 0.0) || n2 < 0.0 || !(v0 > 0.0))
    throw Error(ErrorCode::InvalidArgument, "optical_kerr_reference needs positive inputs");
  return units::hbar * omega_op * omega_op * units::speed_of_light * n2 / (n * n * v0);
}

// ---------------------------------------------------------------------------
// Weak-driving ringdown

using Vec8c = Eigen::Matrix<cplx, 8, 1>;
using Mat8c = Eigen::Matrix<cplx, 8, 8>;

/// Moments v = (<a>, <a^dag>, <b>, <b^dag>, <a^dag a>, <b^dag b>, <a^dag b>, <b^dag a>)
/// of the linear two-mode model obey dv/dt = M v + d.
struct RingdownSystem {
  Mat8c M = Mat8c::Zero();
  Vec8c d = Vec8c::Zero();

  Eigen::Matrix4cd M1() const { return M.topLeftCorner<4, 4>(); }
  Eigen::Matrix4cd M2() const { return M.bottomRightCorner<4, 4>(); }
  Eigen::Matrix4cd N() const { return M.bottomLeftCorner<4, 4>(); }
};

inline RingdownSystem ringdown_system(const SystemParams& p) {
  const double dda = p.delta_da(), ddb = p.delta_db();
  const double gt = p.gamma + p.gamma_phi;
  const cplx g = p.g, eta = p.eta;
  RingdownSystem rs;
  auto& M = rs.M;
  M(0, 0) = I * dda - 0.5 * p.kappa;
  M(0, 2) = -I * g;
  M(1, 1) = -I * dda - 0.5 * p.kappa;
  M(1, 3) = I * g;
  M(2, 0) = -I * g;
  M(2, 2) = I * ddb - 0.5 * gt;
  M(3, 1) = I * g;
  M(3, 3) = -I * ddb - 0.5 * gt;
  // <a^dag a>
  M(4, 4) = -p.kappa;
  M(4, 6) = -I * g;
  M(4, 7) = I * g;
  M(4, 0) = I * eta;
  M(4, 1) = -I * eta;
  // <b^dag b>
  M(5, 5) = -p.gamma;
  M(5, 6) = I * g;
  M(5, 7) = -I * g;
  // <a^dag b>
  M(6, 6) = -I * (dda - ddb) - 0.5 * (p.kappa + gt);
  M(6, 4) = -I * g;
  M(6, 5) = I * g;
  M(6, 2) = I * eta;
  // <b^dag a>
  M(7, 7) = I * (dda - ddb) - 0.5 * (p.kappa + gt);
  M(7, 4) = I * g;
  M(7, 5) = -I * g;
  M(7, 3) = -I * eta;
  rs.d[0] = -I * eta;
  rs.d[1] = I * eta;
  return rs;
}

struct RingdownSchedule {
  double drive_duration = 0.8;  // us of drive before t = 0
  double ringdown = 0.05;       // us recorded after the drive is switched off
  double sample_dt = 1e-4;      // us
};

struct RingdownTraces {
  std::vector<double> t;        // us; the drive is off for t >= 0
  std::vector<Vec8c> v;

  cplx alpha(std::size_t k) const { return v[k][0]; }
  double n_a(std::size_t k) const { return v[k][4].real(); }
  /// Demodulated quadrature <I_a> = sqrt(2) Re <a>.
  double i_a(std::size_t k) const { return std::sqrt(2.0) * v[k][0].real(); }
};

namespace detail {

/// Exact propagator of dv/dt = M v + d over a step h, from the augmented 9x9 exponential.
struct AffineStep {
  Mat8c E;
  Vec8c f;

  AffineStep(const RingdownSystem& rs, double h) {
    Eigen::Matrix<cplx, 9, 9> A = Eigen::Matrix<cplx, 9, 9>::Zero();
    A.topLeftCorner<8, 8>() = rs.M * h;
    A.topRightCorner<8, 1>() = rs.d * h;
    const Eigen::Matrix<cplx, 9, 9> X = A.exp();
    E = X.topLeftCorner<8, 8>();
    f = X.topRightCorner<8, 1>();
  }
  Vec8c operator()(const Vec8c& v) const { return E * v + f; }
};

}  // namespace detail

/// Drive on from -drive_duration to 0 starting in vacuum, then free ringdown.
/// The linear system is propagated with its exact matrix exponential.
inline RingdownTraces ringdown_simulate(const SystemParams& p, const RingdownSchedule& s = {}) {
  if (s.drive_duration < 0.0 || !(s.ringdown > 0.0) || !(s.sample_dt > 0.0))
    throw Error(ErrorCode::InvalidArgument, "invalid ringdown schedule");
  Vec8c v = Vec8c::Zero();
  if (s.drive_duration > 0.0) v = detail::AffineStep(ringdown_system(p), s.drive_duration)(v);
  SystemParams off_p = p;
  off_p.eta = 0.0;
  const detail::AffineStep step(ringdown_system(off_p), s.sample_dt);
  RingdownTraces tr;
  const std::size_t n = static_cast<std::size_t>(std::llround(s.ringdown / s.sample_dt)) + 1;
  tr.t.reserve(n);
  tr.v.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    tr.t.push_back(static_cast<double>(k) * s.sample_dt);
    tr.v.push_back(v);
    v = step(v);
  }
  return tr;
}

/// Closed-form free evolution v(t) = exp(M t) v(0) via the eigen-decomposition of M.
inline std::vector<Vec8c> ringdown_closed_form(const SystemParams& p, const Vec8c& v0, const std::vector<double>& t) {
  SystemParams off_p = p;
  off_p.eta = 0.0;
  const Mat8c M = ringdown_system(off_p).M;
  Eigen::ComplexEigenSolver<Mat8c> es(M);
  const Mat8c V = es.eigenvectors();
  const Vec8c c = V.partialPivLu().solve(v0);
  std::vector<Vec8c> out;
  out.reserve(t.size());
  for (double tk : t) {
    Vec8c w;
    for (int i = 0; i < 8; ++i) w[i] = c[i] * std::exp(es.eigenvalues()[i] * tk);
    out.push_back(V * w);
  }
  return out;
}

struct DephasingFit {
  double lambda1 = 0.0;   // decay rate of the cavity quadrature, 1/us
  double lambda2 = 0.0;   // decay rate of the cavity occupation, 1/us
  double gamma_phi_a = 0.0;
  double r2_1 = 0.0, r2_2 = 0.0;
  bool fit_poor = false;
};

namespace detail {

struct LogFit {
  double rate = 0.0;
  double r2 = 0.0;
};

/// Exponential rate from log|y|: local maxima of |y| when the trace oscillates, all points otherwise.
inline LogFit envelope_rate(const std::vector<double>& t, const std::vector<double>& y) {
  std::vector<double> xs, ys;
  for (std::size_t k = 1; k + 1 < y.size(); ++k) {
    const double a = std::abs(y[k - 1]), b = std::abs(y[k]), c = std::abs(y[k + 1]);
    if (b > a && b >= c && b > 0.0) {
      xs.push_back(t[k]);
      ys.push_back(std::log(b));
    }
  }
  if (xs.size() < 3) {
    xs.clear();
    ys.clear();
    for (std::size_t k = 0; k < y.size(); ++k)
      if (std::abs(y[k]) > 0.0) {
        xs.push_back(t[k]);
        ys.push_back(std::log(std::abs(y[k])));
      }
  }
  LogFit f;
  if (xs.size() < 3) return f;
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  double ss_tot = 0, ss_res = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ss_tot += (ys[i] - sy / n) * (ys[i] - sy / n);
    ss_res += (ys[i] - icpt - slope * xs[i]) * (ys[i] - icpt - slope * xs[i]);
  }
  f.rate = -slope;
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

}  // namespace detail

/// gamma_phi^a = lambda1 - lambda2 / 2 from the ringdown portion of the traces.
/// lambda1 comes from the envelope of <I_a>, sqrt(2)|<a>|, so a slow rotation of
/// the demodulation frame does not bias it.
inline DephasingFit extract_dephasing(const RingdownTraces& tr, double r2_min = 0.999) {
  if (tr.t.size() < 5) throw Error(ErrorCode::InvalidArgument, "ringdown trace too short");
  std::vector<double> env(tr.t.size()), na(tr.t.size());
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    env[k] = std::sqrt(2.0) * std::abs(tr.alpha(k));
    na[k] = tr.n_a(k);
  }
  const auto f1 = detail::envelope_rate(tr.t, env);
  const auto f2 = detail::envelope_rate(tr.t, na);
  DephasingFit d;
  d.lambda1 = f1.rate;
  d.lambda2 = f2.rate;
  d.r2_1 = f1.r2;
  d.r2_2 = f2.r2;
  d.gamma_phi_a = d.lambda1 - 0.5 * d.lambda2;
  d.fit_poor = f1.r2 < r2_min || f2.r2 < r2_min;
  return d;
}

struct RingdownRates {
  double lambda1 = 0.0, lambda2 = 0.0, gamma_phi_a = 0.0;
};

/// Rates from the spectra of M1 and M2 at eta = 0: the eigenvalue whose
/// eigenvector has the largest weight on <a> and on <a^dag a> respectively.
inline RingdownRates ringdown_rates(const SystemParams& p) {
  SystemParams off_p = p;
  off_p.eta = 0.0;
  const auto rs = ringdown_system(off_p);
  auto pick = [](const Eigen::Matrix4cd& m) {
    Eigen::ComplexEigenSolver<Eigen::Matrix4cd> es(m);
    int best = 0;
    double w = -1.0;
    for (int i = 0; i < 4; ++i) {
      const double wi = std::abs(es.eigenvectors()(0, i)) / es.eigenvectors().col(i).norm();
      if (wi > w) {
        w = wi;
        best = i;
      }
    }
    return -es.eigenvalues()[best].real();
  };
  RingdownRates r;
  r.lambda1 = pick(rs.M1());
  r.lambda2 = pick(rs.M2());
  r.gamma_phi_a = r.lambda1 - 0.5 * r.lambda2;
  return r;
}

}  // namespace kerrcomb
