#pragma once

// Deterministic classical dynamics: trajectory integration, comb spectra,
// limit-cycle refinement, maximal Lyapunov exponents and the memory-kernel
// form of the nonlinear-mode equation.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/ode.hpp"

namespace kerrcomb {

struct Trajectory {
  std::vector<double> times;   // us, uniform spacing
  std::vector<Vec4c> states;
  std::size_t steps = 0;
  double tol = 0.0;

  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  std::size_t size() const { return times.size(); }
};

inline auto classical_rhs(const SystemParams& p) {
  return [&p](const ode::State<8>& x, ode::State<8>& dx, double) { ode::store(dx, drift(ode::unpack(x), p)); };
}

/// Uniformly spaced samples k*sample_dt for k*sample_dt in [record_from, t_end].
inline std::vector<double> uniform_times(double record_from, double t_end, double sample_dt) {
  if (!(sample_dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "sample spacing must be > 0");
  std::vector<double> t;
  const auto k0 = static_cast<long long>(std::ceil(record_from / sample_dt - 1e-9));
  const auto k1 = static_cast<long long>(std::floor(t_end / sample_dt + 1e-9));
  for (long long k = std::max(0LL, k0); k <= k1; ++k) t.push_back(static_cast<double>(k) * sample_dt);
  return t;
}

/// Adaptive Dormand-Prince integration of the classical equations with
/// absolute and relative local error tolerance `tol`. Samples are taken on a
/// uniform grid of spacing sample_dt, starting at record_from.
inline Trajectory integrate_classical(const SystemParams& p, const PhaseState& z0, double t_end, double tol,
                                      double sample_dt, double record_from = 0.0) {
  if (!(tol > 0.0)) throw Error(ErrorCode::InvalidArgument, "integration tolerance must be > 0");
  if (!(t_end >= 0.0)) throw Error(ErrorCode::InvalidArgument, "t_end must be >= 0");
  Trajectory tr;
  tr.tol = tol;
  tr.times = uniform_times(record_from, t_end, sample_dt);
  tr.states.reserve(tr.times.size());
  ode::Options opt;
  opt.abs_tol = opt.rel_tol = tol;
  const auto st = ode::integrate_sampled<8>(classical_rhs(p), ode::pack(z0.zeta), 0.0, tr.times, opt,
                                            [&](double, const ode::State<8>& x) { tr.states.push_back(ode::unpack(x)); });
  tr.steps = st.steps;
  return tr;
}

/// Advance a classical state by `duration` without recording samples.
inline PhaseState advance_classical(const SystemParams& p, const PhaseState& z0, double duration, double tol) {
  auto x = ode::pack(z0.zeta);
  ode::Options opt;
  opt.abs_tol = opt.rel_tol = tol;
  ode::integrate_to<8>(classical_rhs(p), x, 0.0, duration, opt);
  return PhaseState(ode::unpack(x));
}

// ---------------------------------------------------------------------------
// Comb spectrum

struct CombPeak {
  double freq_hz = 0.0;   // lab frame
  double power_db = 0.0;
  int order = 0;          // index on the fitted comb grid
};

struct SpectrumOptions {
  double floor_offset_db = 6.0;   // floor = median + offset
  int peak_halfwidth = 3;         // local maximum within +-this many bins
  double dynamic_range_db = 100.0;  // ignore content further below the strongest peak
  std::size_t spacing_peaks = 16;   // strongest peaks used for the initial spacing estimate
  double grid_tolerance_bins = 2.0;
  std::size_t min_peaks = 3;
};

struct CombSpectrum {
  std::vector<double> freq_hz;   // lab frame, ascending
  std::vector<double> power_db;  // relative to the strongest bin
  std::vector<CombPeak> peaks;   // peaks on the comb grid (or the single peak)
  double bin_hz = 0.0;
  double floor_db = 0.0;
  double spacing_hz = std::numeric_limits<double>::quiet_NaN();
  double offset_hz = std::numeric_limits<double>::quiet_NaN();  // grid origin
  double residual_bins = std::numeric_limits<double>::quiet_NaN();
  double confidence = 0.0;       // fraction of detected peaks that sit on the grid

  bool is_comb() const { return std::isfinite(spacing_hz); }
};

namespace detail {

inline std::size_t smooth_length(std::size_t n) {
  // largest 2^a 3^b 5^c not exceeding n keeps the FFT fast
  std::size_t best = 1;
  for (std::size_t a = 1; a <= n; a *= 2)
    for (std::size_t b = a; b <= n; b *= 3)
      for (std::size_t c = b; c <= n; c *= 5) best = std::max(best, c);
  return best;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Power spectrum and comb detection from uniformly sampled complex samples
/// of the rotating-frame linear-mode amplitude.
inline CombSpectrum spectrum_from_samples(const std::vector<cplx>& alpha, double sample_dt_us, double drive_freq_hz,
                                          const SpectrumOptions& opt = {}) {
  if (alpha.size() < 16) throw Error(ErrorCode::InvalidArgument, "spectrum needs at least 16 samples");
  const std::size_t n = detail::smooth_length(alpha.size());
  const std::size_t first = alpha.size() - n;
  std::vector<cplx> buf(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n));
    // a rotating-frame component e^{-i w t} appears at lab frequency omega_d + w; conjugation maps it to +w
    buf[k] = w * std::conj(alpha[first + k]);
  }
  Eigen::FFT<double> fft;
  std::vector<cplx> spec;
  fft.fwd(spec, buf);

  const double fs_hz = 1e6 / sample_dt_us;
  CombSpectrum out;
  out.bin_hz = fs_hz / static_cast<double>(n);
  out.freq_hz.resize(n);
  out.power_db.resize(n);
  // reorder so frequencies ascend from -fs/2
  const std::size_t half = n / 2;
  double pmax = 0.0;
  for (const auto& c : spec) pmax = std::max(pmax, std::norm(c));
  if (!(pmax > 0.0)) pmax = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = (i + n - half) % n;
    const double f = (static_cast<double>(i) - static_cast<double>(half)) * out.bin_hz;
    out.freq_hz[i] = drive_freq_hz + f;
    out.power_db[i] = 10.0 * std::log10(std::max(std::norm(spec[src]) / pmax, 1e-300));
  }

  out.floor_db = std::max(detail::median(out.power_db) + opt.floor_offset_db, -opt.dynamic_range_db);
  const int w = opt.peak_halfwidth;
  struct Raw {
    double f;
    double p;
  };
  std::vector<Raw> raw;
  for (std::size_t i = 0; i < n; ++i) {
    if (out.power_db[i] <= out.floor_db) continue;
    bool is_max = true;
    for (int d = -w; d <= w && is_max; ++d) {
      if (d == 0) continue;
      const long j = static_cast<long>(i) + d;
      if (j < 0 || j >= static_cast<long>(n)) continue;
      if (out.power_db[j] > out.power_db[i] || (out.power_db[j] == out.power_db[i] && d < 0)) is_max = false;
    }
    if (!is_max) continue;
    // quadratic interpolation of the log-power around the maximum
    double shift = 0.0;
    if (i > 0 && i + 1 < n) {
      const double a = out.power_db[i - 1], b = out.power_db[i], c = out.power_db[i + 1];
      const double den = a - 2.0 * b + c;
      if (den < 0.0) shift = std::clamp(0.5 * (a - c) / den, -0.5, 0.5);
    }
    raw.push_back({out.freq_hz[i] + shift * out.bin_hz, out.power_db[i]});
  }

  if (raw.size() < opt.min_peaks) {
    for (const auto& r : raw) out.peaks.push_back({r.f, r.p, 0});
    return out;
  }

  // initial spacing from the strongest peaks only, so weak spurious maxima cannot bias it
  std::vector<Raw> top = raw;
  std::sort(top.begin(), top.end(), [](const Raw& a, const Raw& b) { return a.p > b.p; });
  top.resize(std::min(top.size(), std::max(opt.spacing_peaks, opt.min_peaks)));
  std::sort(top.begin(), top.end(), [](const Raw& a, const Raw& b) { return a.f < b.f; });
  std::vector<double> gaps;
  for (std::size_t i = 1; i < top.size(); ++i) gaps.push_back(top[i].f - top[i - 1].f);
  double spacing = detail::median(gaps);
  const auto strongest = std::max_element(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) { return a.p < b.p; });
  double origin = strongest->f;

  // least-squares fit f = origin + k * spacing over peaks close to the grid, repeated once after pruning
  std::vector<int> order(raw.size());
  std::vector<bool> keep(raw.size(), true);
  for (int pass = 0; pass < 3; ++pass) {
    double sk = 0, skk = 0, sf = 0, skf = 0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      order[i] = static_cast<int>(std::lround((raw[i].f - origin) / spacing));
      const double resid = raw[i].f - (origin + order[i] * spacing);
      keep[i] = std::abs(resid) <= opt.grid_tolerance_bins * out.bin_hz;
      if (!keep[i]) continue;
      const double k = order[i];
      sk += k;
      skk += k * k;
      sf += raw[i].f;
      skf += k * raw[i].f;
      ++m;
    }
    const double det = static_cast<double>(m) * skk - sk * sk;
    if (m < 2 || det <= 0.0) break;
    spacing = (static_cast<double>(m) * skf - sk * sf) / det;
    origin = (sf - spacing * sk) / static_cast<double>(m);
  }

  double worst = 0.0;
  std::size_t on_grid = 0;
  std::vector<int> distinct;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    order[i] = static_cast<int>(std::lround((raw[i].f - origin) / spacing));
    const double resid = std::abs(raw[i].f - (origin + order[i] * spacing));
    if (resid > opt.grid_tolerance_bins * out.bin_hz) continue;
    worst = std::max(worst, resid / out.bin_hz);
    ++on_grid;
    distinct.push_back(order[i]);
    out.peaks.push_back({raw[i].f, raw[i].p, order[i]});
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < opt.min_peaks || !(spacing > 0.0)) return out;
  out.spacing_hz = spacing;
  out.offset_hz = origin;
  out.residual_bins = worst;
  out.confidence = static_cast<double>(on_grid) / static_cast<double>(raw.size());
  return out;
}

/// Windowed DFT of alpha(t) after settle_time, with peak picking and comb-grid fit.
/// A trajectory without at least three equidistant peaks yields is_comb() == false.
inline CombSpectrum comb_spectrum(const Trajectory& traj, double settle_time, double drive_freq_hz,
                                  const SpectrumOptions& opt = {}) {
  std::vector<cplx> alpha;
  for (std::size_t i = 0; i < traj.size(); ++i)
    if (traj.times[i] >= settle_time) alpha.push_back(traj.states[i][0]);
  return spectrum_from_samples(alpha, traj.dt(), drive_freq_hz, opt);
}

inline const CombSpectrum& require_comb(const CombSpectrum& s) {
  if (!s.is_comb()) throw Error(ErrorCode::NoComb, "fewer than 3 equidistant spectral peaks above the noise floor");
  return s;
}

// ---------------------------------------------------------------------------
// Real-coordinate form used for shooting: x = (Re a, Im a, Re b, Im b)

using Vec4r = Eigen::Vector4d;
using Mat4r = Eigen::Matrix4d;

inline Vec4r to_real(const PhaseState& s) { return {s.alpha().real(), s.alpha().imag(), s.beta().real(), s.beta().imag()}; }

inline PhaseState from_real(const Vec4r& x) { return PhaseState::classical({x[0], x[1]}, {x[2], x[3]}); }

inline Vec4r real_field(const Vec4r& x, const SystemParams& p) {
  const Vec4c d = drift(from_real(x), p);
  return {d[0].real(), d[0].imag(), d[2].real(), d[2].imag()};
}

inline Mat4r real_jacobian(const Vec4r& x, const SystemParams& p) {
  const Mat4c j = jacobian(from_real(x), p);
  // columns: perturbations of Re a, Im a, Re b, Im b expressed in zeta coordinates
  const std::array<Vec4c, 4> basis = {Vec4c(1, 1, 0, 0), Vec4c(I, -I, 0, 0), Vec4c(0, 0, 1, 1), Vec4c(0, 0, I, -I)};
  Mat4r r;
  for (int c = 0; c < 4; ++c) {
    const Vec4c col = j * basis[c];
    r.col(c) << col[0].real(), col[0].imag(), col[2].real(), col[2].imag();
  }
  return r;
}

struct LimitCycle {
  double period = 0.0;   // us
  PhaseState start;      // point on the orbit used as t = 0
  double closure = 0.0;  // ||zeta(T) - zeta(0)||
  int newton_iterations = 0;

  double spacing_hz() const { return 1e6 / period; }
};

struct ShootingOptions {
  double tol = 1e-12;          // integrator tolerance
  double closure_tol = 1e-8;   // on ||zeta(T) - zeta(0)||
  int max_iterations = 40;
};

namespace detail {

/// Flow map and monodromy of the real system over [0, T].
inline std::pair<Vec4r, Mat4r> flow_with_monodromy(const Vec4r& x0, double T, const SystemParams& p, double tol) {
  ode::State<20> s{};
  for (int i = 0; i < 4; ++i) s[i] = x0[i];
  for (int i = 0; i < 4; ++i) s[4 + i * 4 + i] = 1.0;
  auto rhs = [&p](const ode::State<20>& y, ode::State<20>& dy, double) {
    const Vec4r x(y[0], y[1], y[2], y[3]);
    const Vec4r f = real_field(x, p);
    const Mat4r j = real_jacobian(x, p);
    const Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> m(y.data() + 4);
    Eigen::Map<Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> dm(dy.data() + 4);
    for (int i = 0; i < 4; ++i) dy[i] = f[i];
    dm = j * m;
  };
  ode::Options opt;
  opt.abs_tol = opt.rel_tol = tol;
  ode::integrate_to<20>(rhs, s, 0.0, T, opt, 4);
  const Vec4r xt(s[0], s[1], s[2], s[3]);
  const Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>> m(s.data() + 4);
  return {xt, Mat4r(m)};
}

}  // namespace detail

/// Single-shooting Newton refinement of a periodic orbit from an initial
/// point and period guess. The phase is pinned by requiring the correction to
/// be orthogonal to the vector field at the initial guess.
inline LimitCycle refine_limit_cycle(const SystemParams& p, const PhaseState& guess, double period_guess,
                                     const ShootingOptions& opt = {}) {
  if (!(period_guess > 0.0)) throw Error(ErrorCode::InvalidArgument, "period guess must be > 0");
  Vec4r x = to_real(guess);
  double T = period_guess;
  const Vec4r f_ref = real_field(x, p);
  const Vec4r x_ref = x;
  LimitCycle lc;
  for (int it = 0; it <= opt.max_iterations; ++it) {
    auto [xt, m] = detail::flow_with_monodromy(x, T, p, opt.tol);
    const Vec4r r = xt - x;
    // ||zeta|| counts each amplitude twice (a and a^dag)
    lc.closure = std::sqrt(2.0) * r.norm();
    lc.newton_iterations = it;
    if (lc.closure < opt.closure_tol) {
      lc.period = T;
      lc.start = from_real(x);
      return lc;
    }
    if (it == opt.max_iterations) break;
    Eigen::Matrix<double, 5, 5> a = Eigen::Matrix<double, 5, 5>::Zero();
    a.topLeftCorner<4, 4>() = m - Mat4r::Identity();
    a.topRightCorner<4, 1>() = real_field(xt, p);
    a.bottomLeftCorner<1, 4>() = f_ref.transpose();
    Eigen::Matrix<double, 5, 1> rhs;
    rhs.head<4>() = -r;
    rhs[4] = -f_ref.dot(x - x_ref);
    const Eigen::Matrix<double, 5, 1> d = a.fullPivLu().solve(rhs);
    if (!d.allFinite()) break;
    // damp steps that would change the period by more than 20%
    double scale = 1.0;
    if (std::abs(d[4]) > 0.2 * T) scale = 0.2 * T / std::abs(d[4]);
    x += scale * d.head<4>();
    T += scale * d[4];
    if (!(T > 0.0)) break;
  }
  throw Error(ErrorCode::ClosureFail, "limit-cycle shooting did not close the orbit (closure " +
                                          std::to_string(lc.closure) + ")");
}

/// First-return period estimate: the time in [lo, hi] at which the sampled
/// orbit comes closest to its first sample.
inline std::pair<double, std::size_t> first_return(const Trajectory& tr, double lo, double hi) {
  const Vec4c z0 = tr.states.front();
  double best = std::numeric_limits<double>::infinity();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < tr.size(); ++i) {
    const double t = tr.times[i] - tr.times[0];
    if (t < lo || t > hi) continue;
    const double d = (tr.states[i] - z0).norm();
    if (d < best) {
      best = d;
      arg = i;
    }
  }
  if (arg == 0) throw Error(ErrorCode::ClosureFail, "no return to the initial point in the search window");
  return {tr.times[arg] - tr.times[0], arg};
}

struct LimitCycleSearch {
  double settle_time = 20.0;      // us of transient before sampling
  double record_periods = 128.0;  // length of the spectral record, in expected periods
  double sample_dt = 1e-3;        // us
  double tol = 1e-10;
  double drive_freq_hz = 0.0;
  ShootingOptions shooting{};
  SpectrumOptions spectrum{};
};

/// Run the transient from z0, detect the comb spacing, and refine the orbit.
inline LimitCycle find_limit_cycle(const SystemParams& p, const PhaseState& z0, const LimitCycleSearch& s = {},
                                   CombSpectrum* spectrum_out = nullptr) {
  // first pass: short record to estimate the spacing
  const double probe = std::max(10.0, 400.0 / std::max(p.kappa, 1e-9));
  auto tr = integrate_classical(p, z0, s.settle_time + probe, s.tol, s.sample_dt, s.settle_time);
  auto spec = comb_spectrum(tr, s.settle_time, s.drive_freq_hz, s.spectrum);
  if (!spec.is_comb()) throw Error(ErrorCode::NoComb, "no comb found while searching for a limit cycle");
  double T = 1e6 / spec.spacing_hz;
  if (s.record_periods * T > probe) {
    tr = integrate_classical(p, z0, s.settle_time + s.record_periods * T, s.tol, s.sample_dt, s.settle_time);
    spec = comb_spectrum(tr, s.settle_time, s.drive_freq_hz, s.spectrum);
    if (!spec.is_comb()) throw Error(ErrorCode::NoComb, "comb lost on the longer record");
    T = 1e6 / spec.spacing_hz;
  }
  if (spectrum_out) *spectrum_out = spec;
  auto [t_ret, idx] = first_return(tr, 0.8 * T, 1.2 * T);
  return refine_limit_cycle(p, PhaseState(tr.states.front()), t_ret, s.shooting);
}

/// Orbit samples on n_samples uniform points in [0, T).
inline Trajectory sample_orbit(const SystemParams& p, const LimitCycle& lc, std::size_t n_samples, double tol) {
  Trajectory tr;
  tr.tol = tol;
  const double h = lc.period / static_cast<double>(n_samples);
  for (std::size_t k = 0; k < n_samples; ++k) tr.times.push_back(static_cast<double>(k) * h);
  ode::Options opt;
  opt.abs_tol = opt.rel_tol = tol;
  tr.steps = ode::integrate_sampled<8>(classical_rhs(p), ode::pack(lc.start.zeta), 0.0, tr.times, opt,
                                       [&](double, const ode::State<8>& x) { tr.states.push_back(ode::unpack(x)); })
                 .steps;
  return tr;
}

// ---------------------------------------------------------------------------
// Maximal Lyapunov exponent

enum class LyapunovClass { StableFp, LimitCycle, Chaos };

constexpr std::string_view to_string(LyapunovClass c) {
  switch (c) {
    case LyapunovClass::StableFp: return "STABLE_FP";
    case LyapunovClass::LimitCycle: return "LIMIT_CYCLE";
    case LyapunovClass::Chaos: return "CHAOS";
  }
  return "?";
}

struct LyapunovOptions {
  double delta_tau = 0.0;   // us; 0 selects 5/kappa
  int n_p = 2000;
  double transient = 0.0;   // us before the tangent vector is started; 0 selects 100/kappa
  double epsilon = 0.0;     // classification band; 0 selects 1e-3 kappa
  double tol = 1e-10;
};

struct LyapunovResult {
  double lambda_m = 0.0;             // 1/us
  std::vector<double> running_mean;  // after each renormalization
  double delta_tau = 0.0;
  int n_p = 0;
  double epsilon = 0.0;
  bool converged = false;
  LyapunovClass cls = LyapunovClass::StableFp;
};

inline LyapunovClass classify_lyapunov(double lambda, double eps) {
  if (lambda < -eps) return LyapunovClass::StableFp;
  if (lambda > eps) return LyapunovClass::Chaos;
  return LyapunovClass::LimitCycle;
}

/// Co-integrates the trajectory with a tangent vector, renormalizing the
/// tangent after every interval and averaging the log growth factors.
inline LyapunovResult max_lyapunov(const SystemParams& p, const PhaseState& z0, const LyapunovOptions& o = {}) {
  LyapunovResult res;
  const double kappa_scale = std::max(p.kappa, 1e-12);
  res.delta_tau = o.delta_tau > 0.0 ? o.delta_tau : 5.0 / kappa_scale;
  res.n_p = o.n_p;
  res.epsilon = o.epsilon > 0.0 ? o.epsilon : 1e-3 * p.kappa;
  if (o.n_p < 100) throw Error(ErrorCode::InvalidArgument, "N_p must be >= 100");
  const double transient = o.transient > 0.0 ? o.transient : 100.0 / kappa_scale;

  PhaseState z = advance_classical(p, z0, transient, o.tol);
  ode::State<16> s{};
  ode::store(s, z.zeta, 0);
  // classical tangent direction: conjugate-paired perturbation of both modes
  Vec4c v(cplx(1, 0.5), cplx(1, -0.5), cplx(0.3, -0.7), cplx(0.3, 0.7));
  v /= v.norm();
  ode::store(s, v, 8);
  auto rhs = [&p](const ode::State<16>& y, ode::State<16>& dy, double) {
    const Vec4c zz = ode::unpack(y, 0);
    const Vec4c dz = ode::unpack(y, 8);
    ode::store(dy, drift(zz, p), 0);
    ode::store(dy, jacobian(zz, p) * dz, 8);
  };
  ode::Options opt;
  opt.abs_tol = opt.rel_tol = o.tol;
  double sum = 0.0;
  res.running_mean.reserve(o.n_p);
  for (int k = 0; k < o.n_p; ++k) {
    ode::integrate_to<16>(rhs, s, 0.0, res.delta_tau, opt, 8);
    Vec4c dz = ode::unpack(s, 8);
    const double growth = dz.norm();
    if (!(growth > 0.0) || !std::isfinite(growth))
      throw Error(ErrorCode::Diverged, "tangent vector degenerated during Lyapunov integration");
    sum += std::log(growth);
    dz /= growth;
    ode::store(s, dz, 8);
    res.running_mean.push_back(sum / (res.delta_tau * (k + 1)));
  }
  res.lambda_m = res.running_mean.back();
  // last-quartile mean of the per-step running estimate vs the overall estimate
  const std::size_t q = res.running_mean.size() * 3 / 4;
  const double lq = std::accumulate(res.running_mean.begin() + static_cast<std::ptrdiff_t>(q), res.running_mean.end(), 0.0) /
                    static_cast<double>(res.running_mean.size() - q);
  res.converged = std::abs(lq - res.lambda_m) <= 0.1 * std::max(std::abs(res.lambda_m), res.epsilon);
  res.cls = classify_lyapunov(res.lambda_m, res.epsilon);
  return res;
}

// ---------------------------------------------------------------------------
// Memory-kernel form of the nonlinear-mode equation

struct EffectiveResidual {
  double max_residual = 0.0;  // max |beta_dot - rhs|
  double max_beta_dot = 0.0;
};

/// Evaluates beta_dot minus the memory-kernel right-hand side along a
/// trajectory that starts with alpha(0) = 0:
///   beta_dot = (i D_db - g_t/2) beta + i L |beta|^2 beta - g^2 int_0^t F(t-s) beta(s) ds - g eta chi_a (1 - F(t)),
/// with F(tau) = exp((i D_da - kappa/2) tau). The convolution is accumulated
/// recursively with cubic Hermite interpolation of beta and 6-point
/// Gauss-Legendre quadrature on each sample interval.
inline EffectiveResidual effective_beta_residual(const Trajectory& tr, const SystemParams& p) {
  if (tr.size() < 2) throw Error(ErrorCode::InvalidArgument, "trajectory too short");
  if (std::abs(tr.times.front()) > 1e-12 || std::abs(tr.states.front()[0]) > 1e-12)
    throw Error(ErrorCode::InvalidArgument, "memory form needs a trajectory starting at t = 0 with alpha(0) = 0");
  const double h = tr.dt();
  const cplx lam(-0.5 * p.kappa, p.delta_da());
  const cplx chi = p.chi_a();
  static constexpr std::array<double, 6> gx = {-0.9324695142031521, -0.6612093864662645, -0.2386191860831969,
                                               0.2386191860831969,  0.6612093864662645,  0.9324695142031521};
  static constexpr std::array<double, 6> gw = {0.1713244923791704, 0.3607615730481386, 0.4679139345726910,
                                               0.4679139345726910, 0.3607615730481386, 0.1713244923791704};
  std::array<cplx, 6> kern;
  for (int q = 0; q < 6; ++q) {
    const double s = 0.5 * h * (gx[q] + 1.0);  // position inside the interval
    kern[q] = std::exp(lam * (h - s)) * (0.5 * h * gw[q]);
  }
  const cplx fh = std::exp(lam * h);

  EffectiveResidual out;
  cplx memory = 0.0;  // int_0^t F(t - s) beta(s) ds
  cplx beta_prev = tr.states[0][2];
  cplx dbeta_prev = drift(tr.states[0], p)[2];
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const Vec4c& z = tr.states[i];
    const cplx b = z[2];
    const cplx db = drift(z, p)[2];
    if (i > 0) {
      cplx inc = 0.0;
      for (int q = 0; q < 6; ++q) {
        const double u = 0.5 * (gx[q] + 1.0);
        const double h00 = (1 + 2 * u) * (1 - u) * (1 - u), h10 = u * (1 - u) * (1 - u);
        const double h01 = u * u * (3 - 2 * u), h11 = u * u * (u - 1);
        const cplx bq = h00 * beta_prev + h10 * h * dbeta_prev + h01 * b + h11 * h * db;
        inc += kern[q] * bq;
      }
      memory = fh * memory + inc;
    }
    const double t = tr.times[i];
    const cplx ft = std::exp(lam * t);
    const cplx rhs = cplx(-0.5 * p.gamma_total(), p.delta_db()) * b + I * p.Lambda * std::norm(b) * b -
                     p.g * p.g * memory - p.g * p.eta * chi * (1.0 - ft);
    out.max_residual = std::max(out.max_residual, std::abs(db - rhs));
    out.max_beta_dot = std::max(out.max_beta_dot, std::abs(db));
    beta_prev = b;
    dbeta_prev = db;
  }
  return out;
}

}  // namespace kerrcomb
