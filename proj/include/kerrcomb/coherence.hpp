#pragma once

// Output-field correlations, detection filtering, normalized first-order
// coherence and coherence-time fits.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>
#include <unsupported/Eigen/LevenbergMarquardt>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/sde.hpp"
#include "kerrcomb/units.hpp"

namespace kerrcomb {

struct FilterSpec {
  double f_dc_hz = 100e6;         // intermediate frequency; 0 selects homodyne detection
  double bandwidth_hz = 125e6;    // standard deviation of the Gaussian low-pass in frequency
  double output_dt_us = 2e-3;     // digitizer sample period
  double sideband_hz = std::numeric_limits<double>::quiet_NaN();  // NaN: strongest line of N(tau)

  static FilterSpec all_pass(double f_dc_hz = 0.0, double output_dt_us = 2e-3) {
    FilterSpec f;
    f.f_dc_hz = f_dc_hz;
    f.bandwidth_hz = std::numeric_limits<double>::infinity();
    f.output_dt_us = output_dt_us;
    return f;
  }

  void validate() const {
    if (f_dc_hz < 0.0) throw Error(ErrorCode::InvalidArgument, "f_dc must be >= 0");
    if (!(bandwidth_hz > 0.0)) throw Error(ErrorCode::InvalidArgument, "filter bandwidth must be > 0");
    if (!(output_dt_us > 0.0)) throw Error(ErrorCode::InvalidArgument, "output sample period must be > 0");
  }
  double sigma_us() const { return 1.0 / (2.0 * std::numbers::pi * bandwidth_hz * 1e-6); }
};

/// Output-quadrature correlation <Delta i(0) Delta i(tau)> on lags tau >= 0:
///   delta_weight * delta(tau) + (kappa/2) (A + N + c.c.)
/// The delta term stays symbolic; `normal` and `anomalous` hold kappa N and kappa A.
struct OutputCorrelation {
  std::vector<double> tau;
  std::vector<cplx> normal;
  std::vector<cplx> anomalous;
  std::vector<double> normal_err;
  std::vector<double> anomalous_err;
  double delta_weight = 0.5;

  /// Smooth part of the homodyne I-quadrature correlation.
  double smooth(std::size_t k) const { return (normal[k] + anomalous[k]).real(); }
  double smooth_err(std::size_t k) const { return std::hypot(normal_err[k], anomalous_err[k]); }
};

inline OutputCorrelation output_correlation(const CorrelationSet& cs, double kappa) {
  if (cs.N.size() != cs.tau.size() || cs.A.size() != cs.tau.size())
    throw Error(ErrorCode::InvalidArgument, "correlation arrays have inconsistent lengths");
  OutputCorrelation oc;
  oc.tau = cs.tau;
  oc.normal.resize(cs.tau.size());
  oc.anomalous.resize(cs.tau.size());
  oc.normal_err.resize(cs.tau.size());
  oc.anomalous_err.resize(cs.tau.size());
  for (std::size_t k = 0; k < cs.tau.size(); ++k) {
    oc.normal[k] = kappa * cs.N[k];
    oc.anomalous[k] = kappa * cs.A[k];
    oc.normal_err[k] = k < cs.N_err.size() ? kappa * cs.N_err[k] : 0.0;
    oc.anomalous_err[k] = k < cs.A_err.size() ? kappa * cs.A_err[k] : 0.0;
  }
  return oc;
}

/// Detector-side correlation before normalization:
///   C(tau) = [smooth part convolved with F](tau) + delta_weight F(tau).
/// With an infinite bandwidth F is the identity and the delta term becomes a
/// single impulse of area delta_weight at tau = 0.
struct FilteredCorrelation {
  std::vector<double> tau;       // us, output sample grid
  std::vector<double> value;
  std::vector<double> smooth;    // smooth part alone
  std::vector<double> smooth_err;
  double sideband_hz = 0.0;
  double sigma_us = 0.0;         // 0 for the all-pass filter
};

namespace detail {

/// Strongest spectral line of a sampled complex sequence, Hz.
inline double dominant_frequency_hz(const std::vector<double>& tau, const std::vector<cplx>& x) {
  const std::size_t n = x.size();
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "correlation span too short");
  const double h = tau[1] - tau[0];
  std::size_t m = 1;
  while (m < 4 * n) m <<= 1;
  std::vector<cplx> buf(m, 0.0), spec;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(k) / static_cast<double>(n)));
    buf[k] = x[k] * w;
  }
  Eigen::FFT<double> fft;
  fft.fwd(spec, buf);  // sum x_k e^{-i 2 pi j k / m}: a line e^{+i 2 pi f tau} peaks at bin +f m h
  std::size_t best = 0;
  for (std::size_t k = 1; k < m; ++k)
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  const double idx = best < m / 2 ? static_cast<double>(best) : static_cast<double>(best) - static_cast<double>(m);
  return idx / (static_cast<double>(m) * h) * 1e6;
}

}  // namespace detail

inline FilteredCorrelation apply_filter(const OutputCorrelation& oc, const FilterSpec& f) {
  f.validate();
  const std::size_t n = oc.tau.size();
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "correlation span too short");
  const double h = oc.tau[1] - oc.tau[0];
  const bool all_pass = std::isinf(f.bandwidth_hz);
  const double sigma = all_pass ? 0.0 : f.sigma_us();
  if (!all_pass && h > 0.5 * sigma)
    throw Error(ErrorCode::InvalidArgument, "correlation sampling too coarse for the filter bandwidth");
  if (!all_pass && f.bandwidth_hz * 1e-6 >= 0.5 / f.output_dt_us)
    throw Error(ErrorCode::InvalidArgument, "filter bandwidth must lie below the Nyquist frequency of the output sampling");
  FilteredCorrelation out;
  out.sigma_us = sigma;
  const bool hetero = f.f_dc_hz > 0.0;
  out.sideband_hz =
      hetero ? (std::isnan(f.sideband_hz) ? detail::dominant_frequency_hz(oc.tau, oc.normal) : f.sideband_hz) : 0.0;

  // complex smooth part on lags >= 0; negative lags follow from c(-tau) = conj c(tau)
  std::vector<cplx> c(n);
  std::vector<double> cerr(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (hetero) {
      const double shift = 2.0 * std::numbers::pi * (out.sideband_hz - f.f_dc_hz) * 1e-6 * oc.tau[k];
      c[k] = oc.normal[k] * std::polar(1.0, -shift);
      cerr[k] = oc.normal_err[k];
    } else {
      c[k] = oc.normal[k] + oc.anomalous[k];
      cerr[k] = oc.smooth_err(k);
    }
  }

  if (all_pass) {
    const long stride = std::lround(f.output_dt_us / h);
    if (stride < 1 || std::abs(static_cast<double>(stride) * h - f.output_dt_us) > 1e-9 * f.output_dt_us)
      throw Error(ErrorCode::InvalidArgument, "all-pass output period must be a multiple of the lag spacing");
    for (std::size_t k = 0; k < n; k += static_cast<std::size_t>(stride)) {
      out.tau.push_back(oc.tau[k]);
      out.smooth.push_back(c[k].real());
      out.smooth_err.push_back(cerr[k]);
      out.value.push_back(c[k].real() + (k == 0 ? oc.delta_weight / f.output_dt_us : 0.0));
    }
    return out;
  }

  auto F = [&](double t) {
    return std::exp(-0.5 * t * t / (sigma * sigma)) / (sigma * std::sqrt(2.0 * std::numbers::pi));
  };
  const double reach = 6.0 * sigma;
  const double t_max = oc.tau.back() - reach;
  const int m_out = static_cast<int>(std::floor(t_max / f.output_dt_us)) + 1;
  if (m_out < 2) throw Error(ErrorCode::InvalidArgument, "correlation span shorter than the filter support");
  const int half = static_cast<int>(std::ceil(reach / h));
  for (int m = 0; m < m_out; ++m) {
    const double t = m * f.output_dt_us;
    const int centre = static_cast<int>(std::lround(t / h));
    double acc = 0.0, var = 0.0;
    for (int k = centre - half; k <= centre + half; ++k) {
      const double tk = k * h;
      const std::size_t ak = static_cast<std::size_t>(std::abs(k));
      if (ak >= n) continue;
      const cplx v = k >= 0 ? c[ak] : std::conj(c[ak]);
      const double w = F(t - tk) * h;
      acc += w * v.real();
      var += w * w * cerr[ak] * cerr[ak];
    }
    out.tau.push_back(t);
    out.smooth.push_back(acc);
    out.smooth_err.push_back(std::sqrt(var));
    out.value.push_back(acc + oc.delta_weight * F(t));
  }
  return out;
}

inline FilteredCorrelation apply_filter(const CorrelationSet& cs, double kappa, const FilterSpec& f) {
  return apply_filter(output_correlation(cs, kappa), f);
}

/// Strongest spectral line of N(tau), in the convention of the emission
/// spectrum (lab frequency = drive frequency + returned value).
inline double dominant_frequency_hz(const CorrelationSet& cs) { return detail::dominant_frequency_hz(cs.tau, cs.N); }

enum class EnvelopeModel { Exponential, ExpPlusGauss };

struct CoherenceOptions {
  EnvelopeModel model = EnvelopeModel::Exponential;
  double skip_sigmas = 4.0;     // ignore lags within this many filter widths of zero
  double floor = 0.01;          // stop the fit once the envelope falls below this fraction of its first peak
  double r2_min = 0.9;
};

struct CoherenceResult {
  std::vector<double> tau;       // us
  std::vector<double> g1;
  std::vector<double> peak_tau;  // us
  std::vector<double> peak_abs;
  std::size_t fit_count = 0;
  double t_coh = std::numeric_limits<double>::quiet_NaN();  // us
  double gauss_sigma = std::numeric_limits<double>::infinity();
  double r2 = 0.0;
  bool fit_poor = true;
};

namespace detail {

/// Local maxima of |y| with parabolic refinement of position and height.
inline void envelope_peaks(const std::vector<double>& t, const std::vector<double>& y, std::size_t from,
                           std::vector<double>& pt, std::vector<double>& pv) {
  for (std::size_t k = std::max<std::size_t>(from, 1); k + 1 < y.size(); ++k) {
    const double a = std::abs(y[k - 1]), b = std::abs(y[k]), c = std::abs(y[k + 1]);
    if (!(b >= a && b > c)) continue;
    const double den = a - 2.0 * b + c;
    double off = 0.0, val = b;
    if (den < 0.0) {
      off = 0.5 * (a - c) / den;
      val = b - 0.25 * (a - c) * off;
    }
    pt.push_back(t[k] + off * (t[1] - t[0]));
    pv.push_back(val);
  }
}

}  // namespace detail

/// Normalized coherence G1(tau) = C(tau)/C(0) and a log-linear envelope fit.
inline CoherenceResult g1_and_coherence(const FilteredCorrelation& fc, const CoherenceOptions& opt = {}) {
  if (fc.value.size() < 3 || fc.value[0] == 0.0) throw Error(ErrorCode::InvalidArgument, "empty filtered correlation");
  CoherenceResult r;
  r.tau = fc.tau;
  r.g1.resize(fc.value.size());
  for (std::size_t k = 0; k < fc.value.size(); ++k) r.g1[k] = fc.value[k] / fc.value[0];
  const double dt = fc.tau[1] - fc.tau[0];
  const std::size_t from = static_cast<std::size_t>(std::ceil(opt.skip_sigmas * fc.sigma_us / dt));
  detail::envelope_peaks(r.tau, r.g1, from, r.peak_tau, r.peak_abs);
  if (r.peak_abs.size() < 3) return r;
  const double first = r.peak_abs.front();
  std::size_t count = 0;
  while (count < r.peak_abs.size() && r.peak_abs[count] >= opt.floor * first && r.peak_abs[count] > 0.0) ++count;
  r.fit_count = count;
  if (count < 3) return r;
  const int cols = opt.model == EnvelopeModel::ExpPlusGauss ? 3 : 2;
  Eigen::MatrixXd X(count, cols);
  Eigen::VectorXd y(count);
  for (std::size_t i = 0; i < count; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = r.peak_tau[i];
    if (cols == 3) X(i, 2) = r.peak_tau[i] * r.peak_tau[i];
    y[i] = std::log(r.peak_abs[i]);
  }
  Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
  if (cols == 3 && beta[2] > 0.0) {
    // an upward-curving envelope has no Gaussian component
    beta = X.leftCols(2).colPivHouseholderQr().solve(y);
    beta.conservativeResize(3);
    beta[2] = 0.0;
  }
  Eigen::VectorXd fit = X.leftCols(cols) * beta.head(cols);
  const double mean = y.mean();
  const double ss_tot = (y.array() - mean).square().sum();
  const double ss_res = (y - fit).squaredNorm();
  r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
  r.t_coh = beta[1] < 0.0 ? -1.0 / beta[1] : std::numeric_limits<double>::infinity();
  if (cols == 3 && beta[2] < 0.0) r.gauss_sigma = std::sqrt(-0.5 / beta[2]);
  r.fit_poor = !(r.r2 >= opt.r2_min) || !std::isfinite(r.t_coh);
  return r;
}

// ---------------------------------------------------------------------------
// Coherence-time law T = a / (gamma_phi + b Lambda)

struct TcohPoint {
  double lambda = 0.0;  // rad/us
  double t_coh = 0.0;   // us
};

struct TcohLaw {
  double a = 0.0, b = 0.0;
  double gamma_phi = 0.0;
  double rms_rel_residual = 0.0;
  double operator()(double lambda) const { return a / (gamma_phi + b * lambda); }
};

namespace detail {

struct TcohFunctor : Eigen::DenseFunctor<double> {
  const std::vector<TcohPoint>& pts;
  double gp;
  TcohFunctor(const std::vector<TcohPoint>& p, double g)
      : Eigen::DenseFunctor<double>(2, static_cast<int>(p.size())), pts(p), gp(g) {}
  int operator()(const InputType& x, ValueType& f) const {
    for (std::size_t i = 0; i < pts.size(); ++i)
      f[static_cast<Eigen::Index>(i)] = x[0] / (gp + x[1] * pts[i].lambda) / pts[i].t_coh - 1.0;
    return 0;
  }
  int df(const InputType& x, JacobianType& j) const {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = gp + x[1] * pts[i].lambda;
      const auto r = static_cast<Eigen::Index>(i);
      j(r, 0) = 1.0 / d / pts[i].t_coh;
      j(r, 1) = -x[0] * pts[i].lambda / (d * d) / pts[i].t_coh;
    }
    return 0;
  }
};

}  // namespace detail

/// Relative least squares fit of (a, b) at fixed dephasing rate.
inline TcohLaw fit_tcoh_law(const std::vector<TcohPoint>& pts, double gamma_phi) {
  if (pts.size() < 4) throw Error(ErrorCode::FitIllConditioned, "need at least 4 (Lambda, T_coh) points");
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& q : pts) {
    if (!(q.lambda > 0.0) || !(q.t_coh > 0.0))
      throw Error(ErrorCode::InvalidArgument, "Lambda and T_coh must be positive");
    lo = std::min(lo, q.lambda);
    hi = std::max(hi, q.lambda);
  }
  if (hi < 10.0 * lo * (1.0 - 1e-12)) throw Error(ErrorCode::FitIllConditioned, "Lambda values must span a decade");
  if (!(gamma_phi > 0.0))
    throw Error(ErrorCode::FitIllConditioned, "with gamma_phi = 0 only the ratio a/b is identifiable");

  // start from the linear fit of 1/T = gamma_phi/a + (b/a) Lambda
  Eigen::MatrixXd X(pts.size(), 2);
  Eigen::VectorXd y(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    X(static_cast<Eigen::Index>(i), 1) = pts[i].lambda;
    y[static_cast<Eigen::Index>(i)] = 1.0 / pts[i].t_coh;
  }
  const Eigen::Vector2d lin = X.colPivHouseholderQr().solve(y);
  Eigen::VectorXd x(2);
  x[0] = lin[0] > 0.0 ? gamma_phi / lin[0] : 1.0;
  x[1] = lin[0] > 0.0 ? lin[1] * x[0] : 1.0;

  detail::TcohFunctor fn(pts, gamma_phi);
  Eigen::LevenbergMarquardt<detail::TcohFunctor> lm(fn);
  lm.setXtol(1e-15);
  lm.setFtol(1e-15);
  lm.setMaxfev(2000);
  lm.minimize(x);

  Eigen::MatrixXd J(pts.size(), 2);
  fn.df(x, J);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
  const auto sv = svd.singularValues();
  if (!(sv[1] > 0.0) || sv[0] / sv[1] > 1e10 || !(x[0] > 0.0) || !(x[1] > 0.0))
    throw Error(ErrorCode::FitIllConditioned, "T_coh law fit is ill-conditioned");
  TcohLaw law{x[0], x[1], gamma_phi, 0.0};
  Eigen::VectorXd f(pts.size());
  fn(x, f);
  law.rms_rel_residual = std::sqrt(f.squaredNorm() / static_cast<double>(pts.size()));
  return law;
}

// ---------------------------------------------------------------------------
// Dephasing-rate estimate from a measured T_coh(P) curve

struct DephasingCandidate {
  double gamma_phi = 0.0;
  std::vector<double> t_coh;  // predicted T_coh at the measured powers
};

struct DephasingEstimate {
  double gamma_phi = 0.0;         // refined by a parabola through the best three candidates
  double grid_gamma_phi = 0.0;    // best candidate on the grid
  std::vector<double> objective;  // weighted squared error per candidate
  std::size_t best = 0;
};

inline DephasingEstimate estimate_gamma_phi(const std::vector<DephasingCandidate>& candidates,
                                            const std::vector<double>& measured,
                                            const std::vector<double>& sigma = {}) {
  if (candidates.size() < 3) throw Error(ErrorCode::InvalidArgument, "need at least 3 candidate dephasing rates");
  DephasingEstimate e;
  for (const auto& c : candidates) {
    if (c.t_coh.size() != measured.size()) throw Error(ErrorCode::InvalidArgument, "candidate length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
      const double w = sigma.empty() ? measured[i] : sigma[i];
      const double r = (c.t_coh[i] - measured[i]) / w;
      s += r * r;
    }
    e.objective.push_back(s);
  }
  const auto [mn, mx] = std::minmax_element(e.objective.begin(), e.objective.end());
  if (*mx - *mn <= 1e-6 * std::max(*mx, 1e-300))
    throw Error(ErrorCode::Unidentifiable, "objective is flat in gamma_phi");
  e.best = static_cast<std::size_t>(mn - e.objective.begin());
  e.gamma_phi = e.grid_gamma_phi = candidates[e.best].gamma_phi;
  if (e.best > 0 && e.best + 1 < candidates.size()) {
    // parabola through the minimum and its neighbours
    const double x0 = candidates[e.best - 1].gamma_phi, x1 = candidates[e.best].gamma_phi,
                 x2 = candidates[e.best + 1].gamma_phi;
    const double y0 = e.objective[e.best - 1], y1 = e.objective[e.best], y2 = e.objective[e.best + 1];
    const double d = (x0 - x1) * (x0 - x2) * (x1 - x2);
    const double A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / d;
    const double B = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / d;
    if (A > 0.0) e.gamma_phi = std::clamp(-B / (2.0 * A), x0, x2);
  }
  return e;
}

}  // namespace kerrcomb
