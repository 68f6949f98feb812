#pragma once

// Positive-P stochastic integration of the two-mode model and steady-state
// two-time correlation estimates from ensemble and time averages.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/parallel.hpp"
#include "kerrcomb/steady.hpp"

namespace kerrcomb {

enum class SdeScheme {
  ExponentialEuler,  // linear part propagated exactly, drive/Kerr/noise explicit
  EulerMaruyama,     // plain explicit Euler-Maruyama
};

struct EnsembleSpec {
  int n_traj = 200;
  double dt = 5e-5;           // us
  double t_ss = 2.0;          // transient discarded before the window, us
  double t_w = 4.0;           // retained window, us
  double sample_dt = 5e-4;    // spacing of retained samples, us (rounded to a multiple of dt)
  std::uint64_t seed = 1;
  SdeScheme scheme = SdeScheme::ExponentialEuler;
  double divergence_factor = 1e3;  // SPIKED threshold relative to the classical amplitude scale
  bool check_dt = true;            // enforce dt <= 0.05 / (fastest rate)
  PhaseState z0{};                 // initial condition shared by all trajectories
  // When non-empty, each trajectory starts at a point drawn uniformly from
  // these states (typically samples of the classical orbit), so the orbital
  // phase is stationary from t = 0.
  std::vector<Vec4c> initial_states;

  int stride() const { return std::max(1, static_cast<int>(std::lround(sample_dt / dt))); }
  double sample_spacing() const { return stride() * dt; }

  void validate(const SystemParams& p) const {
    if (n_traj < 1) throw Error(ErrorCode::InvalidArgument, "N_s must be >= 1");
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be > 0");
    if (t_ss < 0.0 || !(t_w > 0.0)) throw Error(ErrorCode::InvalidArgument, "t_ss must be >= 0 and T_W > 0");
    if (check_dt) {
      const double fastest = std::max({p.kappa, p.g, std::abs(p.delta_da()), std::abs(p.delta_db())});
      if (fastest > 0.0 && dt > 0.05 / fastest * (1.0 + 1e-12))
        throw Error(ErrorCode::InvalidArgument,
                    "dt = " + std::to_string(dt) + " us exceeds 0.05/max(kappa, g, |Delta|) = " + std::to_string(0.05 / fastest));
    }
  }
};

/// Largest step satisfying the resolution rule dt <= 0.05 / max(kappa, g, |Delta|).
inline double max_resolved_dt(const SystemParams& p) {
  const double fastest = std::max({p.kappa, p.g, std::abs(p.delta_da()), std::abs(p.delta_db())});
  return fastest > 0.0 ? 0.05 / fastest : std::numeric_limits<double>::infinity();
}

/// Retained samples of one trajectory, spacing EnsembleSpec::sample_spacing().
struct TrajectoryWindow {
  double t0 = 0.0;
  double spacing = 0.0;
  std::vector<Vec4c> samples;
  bool spiked = false;
};

struct EnsembleResult {
  std::vector<TrajectoryWindow> windows;
  int n_spiked = 0;
  double excluded_fraction() const {
    return windows.empty() ? 0.0 : static_cast<double>(n_spiked) / static_cast<double>(windows.size());
  }
  bool weak_noise_violated() const { return excluded_fraction() > 0.01; }
};

/// Classical amplitude scale used for the divergence threshold.
inline double classical_scale(const SystemParams& p) {
  double s = 1.0;
  try {
    for (const auto& fp : steady_states(p).points) s = std::max(s, fp.state().norm());
  } catch (const Error&) {
  }
  return s;
}

/// Independent random stream for trajectory `index` under `seed`.
inline std::mt19937_64 trajectory_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x6b657272u};
  return std::mt19937_64(seq);
}

/// Single-trajectory stepper. Four independent real Wiener increments per
/// step drive the nonlinear mode: two through the Kerr/dephasing channel
/// sqrt(Gamma) B1 and two through the dephasing channel sqrt(gamma_phi) B2,
/// which occupy disjoint columns of B_st.
class SdeStepper {
 public:
  SdeStepper(const SystemParams& p, double dt, SdeScheme scheme) : p_(p), dt_(dt), scheme_(scheme) {
    const Mat4c L = linear_part(p);
    c_ = drive_vector(p);
    if (scheme == SdeScheme::ExponentialEuler) {
      Eigen::Matrix<cplx, 8, 8> aug = Eigen::Matrix<cplx, 8, 8>::Zero();
      aug.topLeftCorner<4, 4>() = L * dt;
      aug.topRightCorner<4, 4>() = Mat4c::Identity() * dt;
      const Eigen::Matrix<cplx, 8, 8> ex = aug.exp();
      E_ = ex.topLeftCorner<4, 4>();
      Phi_ = ex.topRightCorner<4, 4>();  // int_0^dt exp(L s) ds
    } else {
      E_ = Mat4c::Identity() + L * dt;
      Phi_ = Mat4c::Identity() * dt;
    }
    auto [Gamma, theta] = noise_gamma_theta(p);
    k1_ = std::sqrt(Gamma) * std::polar(1.0, 0.5 * theta);
    k1d_ = std::sqrt(Gamma) * std::polar(1.0, -0.5 * theta);
    k2_ = std::sqrt(p.gamma_phi);
    sdt_ = std::sqrt(dt);
  }

  template <class Rng>
  void step(Vec4c& z, Rng& rng) {
    Vec4c noise = Vec4c::Zero();
    if (k1_ != 0.0 || k2_ != 0.0) {
      const double w0 = normal_(rng) * sdt_, w1 = normal_(rng) * sdt_;
      const double w2 = normal_(rng) * sdt_, w3 = normal_(rng) * sdt_;
      const cplx s = std::sqrt(0.5 * z[3] * z[2]);
      const cplx ep(std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2);
      const cplx em = std::conj(ep);
      noise[2] = k1_ * z[2] * w0 + k2_ * s * (ep * w2 + em * w3);
      noise[3] = k1d_ * z[3] * w1 + k2_ * s * (em * w2 + ep * w3);
    }
    const Vec4c forcing = c_ + nonlinear_part(z, p_);
    if (scheme_ == SdeScheme::ExponentialEuler)
      z = E_ * (z + noise) + Phi_ * forcing;
    else
      z = E_ * z + Phi_ * forcing + noise;
  }

  double dt() const { return dt_; }

 private:
  SystemParams p_;
  double dt_;
  SdeScheme scheme_;
  Mat4c E_, Phi_;
  Vec4c c_;
  cplx k1_, k1d_;
  double k2_ = 0.0;
  double sdt_ = 0.0;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Integrate one trajectory and retain its window samples.
inline TrajectoryWindow simulate_trajectory(const SystemParams& p, const EnsembleSpec& spec, std::uint64_t index,
                                            double threshold) {
  SdeStepper stepper(p, spec.dt, spec.scheme);
  auto rng = trajectory_rng(spec.seed, index);
  const int stride = spec.stride();
  const long long n_ss = std::llround(spec.t_ss / spec.dt);
  const long long n_samples = std::llround(spec.t_w / spec.sample_spacing()) + 1;
  TrajectoryWindow w;
  w.t0 = static_cast<double>(n_ss) * spec.dt;
  w.spacing = spec.sample_spacing();
  w.samples.reserve(static_cast<std::size_t>(n_samples));
  Vec4c z = spec.z0.zeta;
  if (!spec.initial_states.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, spec.initial_states.size() - 1);
    z = spec.initial_states[pick(rng)];
  }
  auto diverged = [&](const Vec4c& v) {
    const double n = v.norm();
    return !(n <= threshold);
  };
  for (long long k = 0; k < n_ss; ++k) {
    stepper.step(z, rng);
    if ((k & 255) == 0 && diverged(z)) {
      w.spiked = true;
      return w;
    }
  }
  for (long long s = 0; s < n_samples; ++s) {
    if (s > 0)
      for (int k = 0; k < stride; ++k) stepper.step(z, rng);
    if (diverged(z)) {
      w.spiked = true;
      w.samples.clear();
      return w;
    }
    w.samples.push_back(z);
  }
  return w;
}

/// Ensemble integration; trajectory i always uses stream i of the master seed.
inline EnsembleResult simulate_ensemble(const SystemParams& p, const EnsembleSpec& spec, unsigned workers = 1) {
  p.validate();
  spec.validate(p);
  const double threshold = spec.divergence_factor * classical_scale(p);
  EnsembleResult res;
  res.windows.resize(static_cast<std::size_t>(spec.n_traj));
  parallel_for(res.windows.size(), workers,
               [&](std::size_t i) { res.windows[i] = simulate_trajectory(p, spec, i, threshold); });
  for (const auto& w : res.windows) res.n_spiked += w.spiked ? 1 : 0;
  return res;
}

/// Time-resolved ensemble moments <a>, <a^dag a>, <b^dag b> with standard errors.
struct MomentTrace {
  std::vector<double> t;
  std::vector<cplx> alpha;
  std::vector<double> n_a, n_a_err;
  std::vector<double> n_b, n_b_err;
};

inline MomentTrace ensemble_moments(const EnsembleResult& ens) {
  MomentTrace m;
  std::size_t len = 0;
  for (const auto& w : ens.windows)
    if (!w.spiked) len = std::max(len, w.samples.size());
  for (const auto& w : ens.windows) {
    if (w.spiked) continue;
    if (m.t.empty())
      for (std::size_t k = 0; k < len; ++k) m.t.push_back(w.t0 + static_cast<double>(k) * w.spacing);
    break;
  }
  m.alpha.assign(len, 0.0);
  m.n_a.assign(len, 0.0);
  m.n_b.assign(len, 0.0);
  std::vector<double> sa(len, 0.0), sb(len, 0.0);
  double count = 0.0;
  for (const auto& w : ens.windows) {
    if (w.spiked) continue;
    count += 1.0;
    for (std::size_t k = 0; k < len; ++k) {
      const Vec4c& z = w.samples[k];
      m.alpha[k] += z[0];
      // the number estimators are complex per trajectory; their real parts carry the moment
      const double na = (z[1] * z[0]).real(), nb = (z[3] * z[2]).real();
      m.n_a[k] += na;
      m.n_b[k] += nb;
      sa[k] += na * na;
      sb[k] += nb * nb;
    }
  }
  m.n_a_err.resize(len);
  m.n_b_err.resize(len);
  for (std::size_t k = 0; k < len && count > 0; ++k) {
    m.alpha[k] /= count;
    m.n_a[k] /= count;
    m.n_b[k] /= count;
    const double va = std::max(0.0, sa[k] / count - m.n_a[k] * m.n_a[k]);
    const double vb = std::max(0.0, sb[k] / count - m.n_b[k] * m.n_b[k]);
    m.n_a_err[k] = count > 1 ? std::sqrt(va / (count - 1)) : 0.0;
    m.n_b_err[k] = count > 1 ? std::sqrt(vb / (count - 1)) : 0.0;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Steady-state correlations

struct CorrelationOptions {
  double t_a = 1.0;             // correlation span, us
  double start_spacing = 0.0;   // spacing of averaging start times, us; 0 selects 10 samples
  int batches = 20;             // batch-means groups (contiguous in trajectory index)
  bool check_steady = true;
  double steady_sigma = 4.0;    // agreement threshold in combined standard errors
  double steady_rel_floor = 0.02;  // relative floor added to the threshold (deterministic limits)
};

/// Reduced normal-ordered correlations
///   N(tau) = <da^dag(tau) da(0)>,  A(tau) = <da(tau) da(0)>
/// estimated by averaging over trajectories and window start times.
struct CorrelationSet {
  std::vector<double> tau;   // us
  std::vector<cplx> N, A;
  std::vector<double> N_err, A_err;  // batch-means standard errors (modulus)
  cplx mean_alpha = 0.0, mean_alpha_dag = 0.0;
  cplx mean_beta = 0.0;
  double n_b = 0.0;          // <b^dag b>
  long long samples_per_lag = 0;
  int n_used = 0;
  int n_spiked = 0;
  bool steady = true;
  double steady_score = 0.0;  // worst deviation / allowed deviation

  double excluded_fraction() const {
    const int total = n_used + n_spiked;
    return total ? static_cast<double>(n_spiked) / total : 0.0;
  }
};

namespace detail {

/// Raw (unreduced) sums of one group of trajectories.
struct CorrSums {
  std::vector<cplx> n, a;        // sum over starts of a^dag(t+tau) a(t) and a(t+tau) a(t)
  std::vector<cplx> n_late, a_late;
  cplx sa = 0.0, sad = 0.0, sb = 0.0, sa_late = 0.0;
  double snb = 0.0;
  double count_mean = 0.0, count_mean_late = 0.0;
  double count_corr = 0.0, count_corr_late = 0.0;  // number of (trajectory, start) pairs
  int used = 0, spiked = 0;

  explicit CorrSums(std::size_t lags = 0) : n(lags), a(lags), n_late(lags), a_late(lags) {}

  void add(const CorrSums& o) {
    for (std::size_t k = 0; k < n.size(); ++k) {
      n[k] += o.n[k];
      a[k] += o.a[k];
      n_late[k] += o.n_late[k];
      a_late[k] += o.a_late[k];
    }
    sa += o.sa;
    sad += o.sad;
    sb += o.sb;
    sa_late += o.sa_late;
    snb += o.snb;
    count_mean += o.count_mean;
    count_mean_late += o.count_mean_late;
    count_corr += o.count_corr;
    count_corr_late += o.count_corr_late;
    used += o.used;
    spiked += o.spiked;
  }
};

inline void accumulate_window(const TrajectoryWindow& w, std::size_t lags, std::size_t start_stride,
                              std::size_t late_from, CorrSums& s) {
  if (w.spiked) {
    ++s.spiked;
    return;
  }
  ++s.used;
  const auto& z = w.samples;
  for (std::size_t j = 0; j < z.size(); ++j) {
    s.sa += z[j][0];
    s.sad += z[j][1];
    s.sb += z[j][2];
    s.snb += (z[j][3] * z[j][2]).real();
    if (j >= late_from) {
      s.sa_late += z[j][0];
      s.count_mean_late += 1.0;
    }
  }
  s.count_mean += static_cast<double>(z.size());
  if (z.size() < lags) return;
  const std::size_t last_start = z.size() - lags;
  for (std::size_t j = 0; j <= last_start; j += start_stride) {
    const cplx a0 = z[j][0];
    const bool late = j >= late_from;
    for (std::size_t k = 0; k < lags; ++k) {
      const cplx nn = z[j + k][1] * a0;
      const cplx aa = z[j + k][0] * a0;
      s.n[k] += nn;
      s.a[k] += aa;
      if (late) {
        s.n_late[k] += nn;
        s.a_late[k] += aa;
      }
    }
    s.count_corr += 1.0;
    if (late) s.count_corr_late += 1.0;
  }
}

}  // namespace detail

namespace detail {

struct LagLayout {
  double spacing = 0.0;
  std::size_t lags = 0, window_len = 0, stride = 1, late_from = 0;
};

inline LagLayout lag_layout(double h, std::size_t window_len, const CorrelationOptions& opt) {
  LagLayout l;
  l.spacing = h;
  l.window_len = window_len;
  l.lags = static_cast<std::size_t>(std::llround(opt.t_a / h)) + 1;
  if (l.lags > window_len) throw Error(ErrorCode::InvalidArgument, "T_A exceeds the retained window");
  l.stride = opt.start_spacing > 0.0
                 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opt.start_spacing / h)))
                 : 10;
  // the late half of the start times emulates a longer transient cut
  l.late_from = (window_len - l.lags) / 2;
  return l;
}

inline std::pair<int, int> batch_range(int n, int nb, int b) {
  return {static_cast<int>(static_cast<long long>(n) * b / nb), static_cast<int>(static_cast<long long>(n) * (b + 1) / nb)};
}

inline CorrelationSet finish_correlations(const std::vector<CorrSums>& batch, const LagLayout& l,
                                          const CorrelationOptions& opt) {
  CorrSums total(l.lags);
  for (const auto& b : batch) total.add(b);
  if (total.used == 0 || total.count_corr == 0.0)
    throw Error(ErrorCode::Diverged, "all trajectories spiked; Positive-P weak-noise regime violated");

  CorrelationSet cs;
  cs.n_used = total.used;
  cs.n_spiked = total.spiked;
  cs.samples_per_lag = static_cast<long long>(total.count_corr);
  cs.mean_alpha = total.sa / total.count_mean;
  cs.mean_alpha_dag = total.sad / total.count_mean;
  cs.mean_beta = total.sb / total.count_mean;
  cs.n_b = total.snb / total.count_mean;
  const cplx nn0 = cs.mean_alpha_dag * cs.mean_alpha;
  const cplx aa0 = cs.mean_alpha * cs.mean_alpha;
  const std::size_t lags = l.lags;
  cs.tau.resize(lags);
  cs.N.resize(lags);
  cs.A.resize(lags);
  cs.N_err.assign(lags, 0.0);
  cs.A_err.assign(lags, 0.0);
  for (std::size_t k = 0; k < lags; ++k) {
    cs.tau[k] = static_cast<double>(k) * l.spacing;
    cs.N[k] = total.n[k] / total.count_corr - nn0;
    cs.A[k] = total.a[k] / total.count_corr - aa0;
  }
  int good = 0;
  for (const auto& b : batch) good += b.count_corr > 0.0 ? 1 : 0;
  if (good > 1) {
    for (std::size_t k = 0; k < lags; ++k) {
      double vn = 0.0, va = 0.0;
      for (const auto& b : batch) {
        if (b.count_corr == 0.0) continue;
        vn += std::norm(b.n[k] / b.count_corr - nn0 - cs.N[k]);
        va += std::norm(b.a[k] / b.count_corr - aa0 - cs.A[k]);
      }
      cs.N_err[k] = std::sqrt(vn / (good - 1) / good);
      cs.A_err[k] = std::sqrt(va / (good - 1) / good);
    }
  }
  if (opt.check_steady && total.count_corr_late > 0.0 && total.count_mean_late > 0.0) {
    double worst = 0.0;
    auto compare = [&](cplx full, cplx late, double err, double scale) {
      const double allowed = opt.steady_sigma * std::sqrt(2.0) * err + opt.steady_rel_floor * scale + 1e-12;
      worst = std::max(worst, std::abs(full - late) / allowed);
    };
    double mean_err = 0.0;
    if (good > 1) {
      for (const auto& b : batch)
        if (b.count_mean > 0.0) mean_err += std::norm(b.sa / b.count_mean - cs.mean_alpha);
      mean_err = std::sqrt(mean_err / (good - 1) / good);
    }
    const double mean_scale = std::abs(cs.mean_alpha) + std::sqrt(std::abs(cs.N[0]));
    compare(cs.mean_alpha, total.sa_late / total.count_mean_late, mean_err, mean_scale);
    const double n_scale = std::abs(total.n[0] / total.count_corr);
    const double a_scale = std::abs(total.a[0] / total.count_corr);
    for (std::size_t k : {std::size_t{0}, lags / 2, lags - 1}) {
      compare(cs.N[k], total.n_late[k] / total.count_corr_late - nn0, cs.N_err[k], n_scale);
      compare(cs.A[k], total.a_late[k] / total.count_corr_late - aa0, cs.A_err[k], a_scale);
    }
    cs.steady_score = worst;
    cs.steady = worst <= 1.0;
  }
  return cs;
}

}  // namespace detail

/// Correlations from a stored ensemble. Batch b holds a contiguous block of
/// trajectory indices and batches are merged in index order.
inline CorrelationSet steady_correlations(const EnsembleResult& ens, const CorrelationOptions& opt = {}) {
  if (ens.windows.empty()) throw Error(ErrorCode::InvalidArgument, "empty ensemble");
  std::size_t window_len = 0;
  for (const auto& w : ens.windows) window_len = std::max(window_len, w.samples.size());
  const auto l = detail::lag_layout(ens.windows.front().spacing, window_len, opt);
  const int n = static_cast<int>(ens.windows.size());
  const int nb = std::max(1, std::min(opt.batches, n));
  std::vector<detail::CorrSums> batch(static_cast<std::size_t>(nb), detail::CorrSums(l.lags));
  for (int b = 0; b < nb; ++b) {
    const auto [lo, hi] = detail::batch_range(n, nb, b);
    for (int i = lo; i < hi; ++i) detail::accumulate_window(ens.windows[i], l.lags, l.stride, l.late_from, batch[b]);
  }
  return detail::finish_correlations(batch, l, opt);
}

/// Simulation fused with the correlation estimate: each trajectory is
/// discarded once accumulated, so memory stays bounded by the batch sums.
inline CorrelationSet simulate_correlations(const SystemParams& p, const EnsembleSpec& spec,
                                            const CorrelationOptions& opt, unsigned workers = 1,
                                            bool throw_if_not_steady = true) {
  p.validate();
  spec.validate(p);
  if (opt.t_a > spec.t_w) throw Error(ErrorCode::InvalidArgument, "T_A must not exceed T_W");
  const double threshold = spec.divergence_factor * classical_scale(p);
  const double h = spec.sample_spacing();
  const auto l = detail::lag_layout(h, static_cast<std::size_t>(std::llround(spec.t_w / h)) + 1, opt);
  const int n = spec.n_traj;
  const int nb = std::max(1, std::min(opt.batches, n));
  std::vector<detail::CorrSums> batch(static_cast<std::size_t>(nb), detail::CorrSums(l.lags));
  parallel_for(static_cast<std::size_t>(nb), workers, [&](std::size_t b) {
    const auto [lo, hi] = detail::batch_range(n, nb, static_cast<int>(b));
    for (int i = lo; i < hi; ++i) {
      const auto w = simulate_trajectory(p, spec, static_cast<std::uint64_t>(i), threshold);
      detail::accumulate_window(w, l.lags, l.stride, l.late_from, batch[b]);
    }
  });
  auto cs = detail::finish_correlations(batch, l, opt);
  if (throw_if_not_steady && !cs.steady)
    throw Error(ErrorCode::NotSteady, "correlations change when the transient cut is extended (score " +
                                          std::to_string(cs.steady_score) + "); increase t_ss");
  return cs;
}

}  // namespace kerrcomb
