#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "kerrcomb/dynamics.hpp"
#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/ode.hpp"

namespace kerrcomb {

/// Orbit and principal fundamental solution R(t) sampled on a uniform grid over [0, T].
struct FundamentalSolution {
  double period = 0.0;
  std::vector<double> times;        // n + 1 points, last one equals T
  std::vector<Vec4c> orbit;
  std::vector<Mat4c> R;
  Mat4c K = Mat4c::Identity();      // R(T)
  double trace_integral = 0.0;      // int_0^T tr J dt
};

struct FloquetOptions {
  std::size_t samples = 2000;       // grid intervals over one period
  double tol = 1e-12;
  double closure_tol = 1e-8;
};

/// Integrate the orbit together with dR/dt = J(zeta_c(t)) R, R(0) = I.
/// Works for any start point and period; a fixed point with arbitrary T is allowed.
inline FundamentalSolution fundamental_matrix(const SystemParams& p, const PhaseState& start, double period,
                                              const FloquetOptions& opt = {}) {
  if (!(period > 0.0)) throw Error(ErrorCode::InvalidArgument, "period must be > 0");
  if (opt.samples < 4) throw Error(ErrorCode::InvalidArgument, "need at least 4 samples per period");
  constexpr std::size_t N = 8 + 32;
  ode::State<N> x{};
  ode::store(x, start.zeta, 0);
  for (int c = 0; c < 4; ++c) {
    Vec4c e = Vec4c::Zero();
    e[c] = 1.0;
    ode::store(x, e, 8 + 8 * c);
  }
  auto rhs = [&p](const ode::State<N>& s, ode::State<N>& ds, double) {
    const Vec4c z = ode::unpack(s, 0);
    ode::store(ds, drift(z, p), 0);
    const Mat4c J = jacobian(z, p);
    for (int c = 0; c < 4; ++c) ode::store(ds, Vec4c(J * ode::unpack(s, 8 + 8 * c)), 8 + 8 * c);
  };
  FundamentalSolution fs;
  fs.period = period;
  const double h = period / static_cast<double>(opt.samples);
  for (std::size_t k = 0; k <= opt.samples; ++k) fs.times.push_back(k == opt.samples ? period : k * h);
  ode::Options o;
  o.abs_tol = o.rel_tol = opt.tol;
  o.initial_dt = std::min(1e-6, h);
  o.divergence_norm = 1e12;
  ode::integrate_sampled<N>(
      rhs, x, 0.0, fs.times, o,
      [&](double, const ode::State<N>& s) {
        fs.orbit.push_back(ode::unpack(s, 0));
        Mat4c R;
        for (int c = 0; c < 4; ++c) R.col(c) = ode::unpack(s, 8 + 8 * c);
        fs.R.push_back(R);
      },
      8);
  const double mismatch = (fs.orbit.back() - fs.orbit.front()).norm();
  if (!(mismatch < opt.closure_tol * std::max(1.0, start.zeta.norm())))
    throw Error(ErrorCode::ClosureFail, "orbit does not close: ||zeta(T) - zeta(0)|| = " + std::to_string(mismatch));
  fs.K = fs.R.back();
  // tr J is constant along any trajectory of this model
  fs.trace_integral = jacobian(start.zeta, p).trace().real() * period;
  return fs;
}

inline FundamentalSolution fundamental_matrix(const SystemParams& p, const LimitCycle& lc,
                                              const FloquetOptions& opt = {}) {
  if (!(lc.closure < opt.closure_tol))
    throw Error(ErrorCode::ClosureFail, "limit cycle closure " + std::to_string(lc.closure) + " above tolerance");
  return fundamental_matrix(p, lc.start, lc.period, opt);
}

struct FloquetSystem {
  double period = 0.0;
  Mat4c K;
  std::array<cplx, 4> rho{}, mu{};          // index 0 is the phase mode
  std::vector<double> times;
  std::vector<Vec4c> orbit;
  std::vector<Vec4c> velocity;
  std::vector<std::array<Vec4c, 4>> p, q;   // q stores the row vectors q_i^dagger as plain vectors
  double v_rms = 0.0;                       // root-mean-square tangential speed
  double biorthogonality_error = 0.0;
  double max_velocity_angle = 0.0;          // rad, between p_0(t) and v(t)

  double spacing() const { return 2.0 * std::numbers::pi / period; }  // rad/us
  double phase_exponent_error() const { return std::abs(mu[0]) * period; }
  int near_zero_exponents(double tol = 1e-5) const {
    int n = 0;
    for (const auto& m : mu) n += std::abs(m) * period < tol ? 1 : 0;
    return n;
  }
};

namespace detail {

inline double rms_over_period(const std::vector<double>& f) {
  // trapezoid on a periodic uniform grid: drop the duplicated end point
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < f.size(); ++k) s += f[k];
  return s / static_cast<double>(f.size() - 1);
}

}  // namespace detail

inline FloquetSystem floquet_eigensystem(const FundamentalSolution& fs, const SystemParams& params,
                                         double degeneracy_tol = 1e-8) {
  FloquetSystem out;
  out.period = fs.period;
  out.K = fs.K;
  out.times = fs.times;
  out.orbit = fs.orbit;
  Eigen::ComplexEigenSolver<Mat4c> es(fs.K);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::Degenerate, "eigen-decomposition of K failed");
  const Vec4c rho = es.eigenvalues();
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (std::abs(rho[i] - rho[j]) < degeneracy_tol)
        throw Error(ErrorCode::Degenerate, "degenerate Floquet multipliers");

  std::array<int, 4> order{0, 1, 2, 3};
  std::array<cplx, 4> mu_raw;
  for (int i = 0; i < 4; ++i) mu_raw[i] = std::log(rho[i]) / fs.period;
  const int zero = static_cast<int>(std::min_element(order.begin(), order.end(), [&](int a, int b) {
                                      return std::abs(mu_raw[a]) < std::abs(mu_raw[b]);
                                    }) - order.begin());
  std::swap(order[0], order[zero]);
  std::sort(order.begin() + 1, order.end(), [&](int a, int b) { return mu_raw[a].real() > mu_raw[b].real(); });

  Mat4c B;
  for (int i = 0; i < 4; ++i) {
    Vec4c b = es.eigenvectors().col(order[i]);
    Eigen::Index big = 0;
    b.cwiseAbs().maxCoeff(&big);
    b *= std::abs(b[big]) / b[big];
    B.col(i) = b;
    out.rho[i] = rho[order[i]];
    out.mu[i] = mu_raw[order[i]];
  }
  const Mat4c C = B.inverse();  // rows are c_i^dagger

  const std::size_t n = fs.times.size();
  out.p.resize(n);
  out.q.resize(n);
  out.velocity.resize(n);
  std::vector<double> speed2(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.velocity[k] = drift(fs.orbit[k], params);
    speed2[k] = out.velocity[k].squaredNorm();
  }
  out.v_rms = std::sqrt(detail::rms_over_period(speed2));

  for (std::size_t k = 0; k < n; ++k) {
    const double t = fs.times[k];
    const Mat4c Rinv = fs.R[k].inverse();
    for (int i = 0; i < 4; ++i) {
      out.p[k][i] = std::exp(-out.mu[i] * t) * (fs.R[k] * B.col(i));
      out.q[k][i] = (std::exp(out.mu[i] * t) * (C.row(i) * Rinv)).transpose();
    }
  }
  // rescale the phase pair so that q_0^dagger v = v_T
  const cplx c0 = (out.q[0][0].transpose() * out.velocity[0])(0);
  if (std::abs(c0) > 0.0 && out.v_rms > 0.0) {
    const cplx s = c0 / out.v_rms;
    for (std::size_t k = 0; k < n; ++k) {
      out.p[k][0] *= s;
      out.q[k][0] /= s;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const cplx d = (out.q[k][j].transpose() * out.p[k][i])(0);
        out.biorthogonality_error = std::max(out.biorthogonality_error, std::abs(d - (i == j ? 1.0 : 0.0)));
      }
    const Vec4c& v = out.velocity[k];
    const Vec4c& p0 = out.p[k][0];
    if (v.norm() > 0.0 && p0.norm() > 0.0) {
      const cplx proj = p0.dot(v) / p0.squaredNorm();
      const double sin_angle = (v - proj * p0).norm() / v.norm();
      out.max_velocity_angle = std::max(out.max_velocity_angle, std::asin(std::min(1.0, sin_angle)));
    }
  }
  return out;
}

struct PhaseDiffusion {
  double r_eff = 0.0;
  double delta_n = 0.0;                 // sqrt of the period average of Re(q_0^T D q_0), signed before the root
  double t_coh = std::numeric_limits<double>::infinity();
  double delta_n_modulus = 0.0;         // same with sum_j |w_j|^2; depends on how D is factorized
  double t_coh_modulus = std::numeric_limits<double>::infinity();
  double imag_fraction = 0.0;           // max over samples of ||Im w|| / ||w||
};

/// Phase diffusion of the linearized SDEs, with q_0 stored so that q_0^T z is the phase coordinate.
/// The phase increment q_0^T B dW has variance q_0^T D q_0 dt for any factorization D = B B^T;
/// its real part sets the decay of <alpha^dag(tau) alpha(0)>, its imaginary part only a frequency shift.
inline PhaseDiffusion phase_diffusion(const FloquetSystem& fs, const SystemParams& p) {
  PhaseDiffusion pd;
  const std::size_t n = fs.times.size();
  std::vector<double> mod2(n), re2(n);
  for (std::size_t k = 0; k < n; ++k) {
    const Vec4c& q = fs.q[k][0];
    const Eigen::Matrix<cplx, 1, 4> w = q.transpose() * noise_matrices(fs.orbit[k], p).B_st();
    mod2[k] = w.squaredNorm();
    re2[k] = (q.transpose() * diffusion_matrix(fs.orbit[k], p) * q)(0).real();
    if (mod2[k] > 0.0) pd.imag_fraction = std::max(pd.imag_fraction, w.imag().norm() / std::sqrt(mod2[k]));
  }
  pd.r_eff = fs.v_rms / fs.spacing();
  const double mean_re = detail::rms_over_period(re2);
  pd.delta_n = std::copysign(std::sqrt(std::abs(mean_re)), mean_re);
  if (mean_re > 0.0) pd.t_coh = 2.0 * pd.r_eff * pd.r_eff / mean_re;
  pd.delta_n_modulus = std::sqrt(detail::rms_over_period(mod2));
  if (pd.delta_n_modulus > 0.0) pd.t_coh_modulus = 2.0 * std::pow(pd.r_eff / pd.delta_n_modulus, 2);
  return pd;
}

}  // namespace kerrcomb
