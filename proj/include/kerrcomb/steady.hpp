#pragma once

// Classical fixed points of the two-mode system, their linear stability, and
// phase classification over drive-power sweeps.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/parallel.hpp"

namespace kerrcomb {

enum class Stability { Stable, Marginal, Unstable };

inline constexpr double stability_threshold = 1e-9;  // rad/us

inline Stability classify_spectrum(double max_real_part) {
  if (max_real_part < -stability_threshold) return Stability::Stable;
  if (max_real_part <= stability_threshold) return Stability::Marginal;
  return Stability::Unstable;
}

struct FixedPoint {
  cplx alpha_bar;
  cplx beta_bar;
  double n = 0.0;  // |beta_bar|^2
  std::array<cplx, 4> jac_eigs{};
  Stability stability = Stability::Unstable;

  bool stable() const { return stability == Stability::Stable; }
  double max_real_eig() const {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& e : jac_eigs) m = std::max(m, e.real());
    return m;
  }
  PhaseState state() const { return PhaseState::classical(alpha_bar, beta_bar); }
};

struct SteadyStates {
  std::vector<FixedPoint> points;  // ordered by increasing n
  bool near_fold = false;          // two roots coincide within 1e-8 relative

  int stable_count() const {
    return static_cast<int>(std::count_if(points.begin(), points.end(), [](const auto& f) { return f.stable(); }));
  }
};

/// Coefficients of the steady-state cubic in n = |beta|^2:
///   [(Dt + Lambda n)^2 + gt^2/4] n = S.
struct SteadyCubic {
  double delta_tilde;  // renormalized nonlinear-mode detuning
  double gamma_tilde;  // renormalized nonlinear-mode damping
  double Lambda;
  double source;  // g^2 |chi_a|^2 eta^2

  static SteadyCubic from(const SystemParams& p) {
    const double chi2 = std::norm(p.chi_a());
    const double g2 = p.g * p.g;
    return {p.delta_db() - g2 * chi2 * p.delta_da(), p.gamma_total() + g2 * chi2 * p.kappa, p.Lambda,
            g2 * chi2 * p.eta * p.eta};
  }

  double residual(double n) const {
    const double d = delta_tilde + Lambda * n;
    return (d * d + 0.25 * gamma_tilde * gamma_tilde) * n - source;
  }
  double derivative(double n) const {
    const double d = delta_tilde + Lambda * n;
    return d * d + 0.25 * gamma_tilde * gamma_tilde + 2.0 * Lambda * n * d;
  }
};

namespace detail {

inline double newton_polish(const SteadyCubic& c, double n) {
  for (int it = 0; it < 3; ++it) {
    const double d = c.derivative(n);
    if (d == 0.0) break;
    const double step = c.residual(n) / d;
    n -= step;
    if (std::abs(step) <= 1e-16 * std::abs(n)) break;
  }
  return n;
}

/// Real roots of x^3 + a x^2 + b x + c via the depressed form and the
/// discriminant; returned sorted ascending.
inline std::vector<double> real_cubic_roots(double a, double b, double c) {
  const double shift = a / 3.0;
  const double p = b - a * a / 3.0;
  const double q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
  const double disc = 0.25 * q * q + p * p * p / 27.0;
  std::vector<double> roots;
  if (disc > 0.0) {
    const double s = std::sqrt(disc);
    // avoid cancellation between -q/2 and s
    const double u = std::cbrt(-0.5 * q + (q <= 0.0 ? s : -s));
    const double t = u - (u != 0.0 ? p / (3.0 * u) : 0.0);
    roots.push_back(t - shift);
  } else {
    const double r = std::sqrt(-p / 3.0);
    const double arg = r > 0.0 ? std::clamp(-0.5 * q / (r * r * r), -1.0, 1.0) : 0.0;
    const double phi = std::acos(arg);
    for (int k = 0; k < 3; ++k)
      roots.push_back(2.0 * r * std::cos((phi - 2.0 * std::numbers::pi * k) / 3.0) - shift);
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

}  // namespace detail

/// Positive roots n of the steady-state cubic (1 or 3), Newton-polished.
inline std::vector<double> steady_occupations(const SteadyCubic& c, bool* near_fold = nullptr) {
  if (near_fold) *near_fold = false;
  if (c.source <= 0.0) return {0.0};
  std::vector<double> roots;
  if (c.Lambda == 0.0) {
    roots.push_back(c.source / (c.delta_tilde * c.delta_tilde + 0.25 * c.gamma_tilde * c.gamma_tilde));
    return roots;
  }
  const double L2 = c.Lambda * c.Lambda;
  const double a = 2.0 * c.delta_tilde / c.Lambda;
  const double b = (c.delta_tilde * c.delta_tilde + 0.25 * c.gamma_tilde * c.gamma_tilde) / L2;
  const double cc = -c.source / L2;
  for (double r : detail::real_cubic_roots(a, b, cc)) {
    if (!(r > 0.0)) continue;
    roots.push_back(detail::newton_polish(c, r));
  }
  if (roots.empty()) {
    // residual(0) = -source < 0, so a positive root always exists; it was lost to cancellation
    double lo = 0.0, hi = c.source / (c.delta_tilde * c.delta_tilde + 0.25 * c.gamma_tilde * c.gamma_tilde);
    while (c.residual(hi) < 0.0) {
      lo = hi;
      hi *= 2.0;
    }
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (c.residual(mid) < 0.0 ? lo : hi) = mid;
    }
    roots.push_back(detail::newton_polish(c, 0.5 * (lo + hi)));
  }
  std::sort(roots.begin(), roots.end());
  for (std::size_t i = 1; i < roots.size(); ++i) {
    if (std::abs(roots[i] - roots[i - 1]) <= 1e-8 * std::max(roots[i], roots[i - 1]) && near_fold)
      *near_fold = true;
  }
  return roots;
}

inline std::array<cplx, 4> jacobian_eigenvalues(const Mat4c& j) {
  Eigen::ComplexEigenSolver<Mat4c> es(j, false);
  std::array<cplx, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = es.eigenvalues()[i];
  std::sort(out.begin(), out.end(), [](cplx x, cplx y) { return x.real() > y.real(); });
  return out;
}

/// Fixed point on the classical manifold for a given occupation n.
inline FixedPoint fixed_point_from_occupation(const SystemParams& p, const SteadyCubic& c, double n) {
  FixedPoint fp;
  const cplx chi = p.chi_a();
  if (c.source <= 0.0) {
    fp.beta_bar = 0.0;
  } else {
    fp.beta_bar = p.g * p.eta * chi / cplx(-0.5 * c.gamma_tilde, c.delta_tilde + c.Lambda * n);
  }
  fp.alpha_bar = -chi * (I * p.g * fp.beta_bar + I * p.eta);
  fp.n = std::norm(fp.beta_bar);
  fp.jac_eigs = jacobian_eigenvalues(jacobian(fp.state(), p));
  fp.stability = classify_spectrum(fp.max_real_eig());
  return fp;
}

inline SteadyStates steady_states(const SystemParams& p) {
  if (!(p.kappa > 0.0) && p.delta_da() == 0.0)
    throw Error(ErrorCode::InvalidArgument, "linear-mode susceptibility is singular (kappa = 0 and Delta_da = 0)");
  const auto cubic = SteadyCubic::from(p);
  SteadyStates out;
  for (double n : steady_occupations(cubic, &out.near_fold))
    out.points.push_back(fixed_point_from_occupation(p, cubic, n));
  return out;
}

/// Conversion from incident power to the drive amplitude eta:
/// eta = sqrt(kappa P / (hbar omega_d)), with P shifted by a single global dB offset.
struct PowerCalibration {
  double offset_db = 0.0;

  double eta(double power_dbm, const SystemParams& p) const {
    if (!std::isfinite(power_dbm)) throw Error(ErrorCode::InvalidArgument, "drive power must be finite");
    if (!(p.omega_d > 0.0) || p.kappa < 0.0)
      throw Error(ErrorCode::InvalidArgument, "power calibration needs omega_d > 0 and kappa >= 0");
    const double watts = units::dbm_to_watts(power_dbm + offset_db);
    // internal rates are rad/us; kappa/omega_d is dimensionless
    return 1e-6 * std::sqrt(p.kappa / p.omega_d * watts / units::hbar);
  }

  double power_dbm(double eta, const SystemParams& p) const {
    const double watts = std::pow(eta * 1e6, 2) * units::hbar * p.omega_d / p.kappa;
    return 10.0 * std::log10(watts / 1e-3) - offset_db;
  }
};

enum class PhaseLabel { OneSfp, MultiFp, NoSfpSubset };

constexpr std::string_view to_string(PhaseLabel l) {
  switch (l) {
    case PhaseLabel::OneSfp: return "ONE_SFP";
    case PhaseLabel::MultiFp: return "MULTI_FP";
    case PhaseLabel::NoSfpSubset: return "NO_SFP_SUBSET";
  }
  return "?";
}

struct PhaseClass {
  PhaseLabel label = PhaseLabel::OneSfp;
  int fp_min = 0, fp_max = 0;
  int sfp_min = 0, sfp_max = 0;
  double power_dbm_min = 0.0, power_dbm_max = 0.0;
};

/// Uniform power sweep [lo, hi] with `count` points.
inline std::vector<double> power_sweep(double lo_dbm, double hi_dbm, int count) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "power sweep needs at least one point");
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i)
    out[i] = count == 1 ? lo_dbm : lo_dbm + (hi_dbm - lo_dbm) * i / (count - 1);
  return out;
}

/// Aggregate fixed-point counts over a list of drive amplitudes.
inline PhaseClass classify_etas(SystemParams p, const std::vector<double>& etas) {
  if (etas.empty()) throw Error(ErrorCode::InvalidArgument, "empty drive sweep");
  PhaseClass pc;
  pc.fp_min = pc.sfp_min = std::numeric_limits<int>::max();
  bool any_unstable_only = false;
  for (double eta : etas) {
    p.eta = eta;
    const auto ss = steady_states(p);
    const int fp = static_cast<int>(ss.points.size());
    const int sfp = ss.stable_count();
    pc.fp_min = std::min(pc.fp_min, fp);
    pc.fp_max = std::max(pc.fp_max, fp);
    pc.sfp_min = std::min(pc.sfp_min, sfp);
    pc.sfp_max = std::max(pc.sfp_max, sfp);
    if (sfp == 0) any_unstable_only = true;
  }
  if (any_unstable_only)
    pc.label = PhaseLabel::NoSfpSubset;
  else if (pc.fp_max > 1)
    pc.label = PhaseLabel::MultiFp;
  else
    pc.label = PhaseLabel::OneSfp;
  return pc;
}

inline PhaseClass classify_point(const SystemParams& p, const std::vector<double>& powers_dbm,
                                 const PowerCalibration& cal = {}) {
  if (powers_dbm.empty()) throw Error(ErrorCode::InvalidArgument, "empty power sweep");
  std::vector<double> etas;
  etas.reserve(powers_dbm.size());
  for (double pw : powers_dbm) etas.push_back(cal.eta(pw, p));
  auto pc = classify_etas(p, etas);
  auto [lo, hi] = std::minmax_element(powers_dbm.begin(), powers_dbm.end());
  pc.power_dbm_min = *lo;
  pc.power_dbm_max = *hi;
  return pc;
}

/// Rectangular detuning grid; Delta_da varies along rows, Delta_db along columns.
struct DetuningGrid {
  double da_min_hz = -150e6, da_max_hz = 150e6;
  int da_count = 1;
  double db_min_hz = -150e6, db_max_hz = 150e6;
  int db_count = 1;
  std::vector<double> powers_dbm = power_sweep(-132.0, -67.0, 131);

  double da_hz(int i) const { return da_count == 1 ? da_min_hz : da_min_hz + (da_max_hz - da_min_hz) * i / (da_count - 1); }
  double db_hz(int j) const { return db_count == 1 ? db_min_hz : db_min_hz + (db_max_hz - db_min_hz) * j / (db_count - 1); }
  std::size_t size() const { return static_cast<std::size_t>(da_count) * static_cast<std::size_t>(db_count); }

  void validate() const {
    if (da_count < 1 || db_count < 1) throw Error(ErrorCode::InvalidArgument, "grid dimensions must be >= 1");
    if (powers_dbm.empty()) throw Error(ErrorCode::InvalidArgument, "empty power sweep");
  }
};

struct PhaseCell {
  int i = 0, j = 0;
  double delta_da_hz = 0.0, delta_db_hz = 0.0;
  PhaseClass cls;
  double comb_spacing_hz = std::numeric_limits<double>::quiet_NaN();  // filled by dynamics when requested
  std::string error;  // non-empty when the cell failed
};

/// Classify every grid cell. The drive frequency stays fixed; mode frequencies
/// are placed to realize each (Delta_da, Delta_db) pair.
inline std::vector<PhaseCell> phase_diagram(const DetuningGrid& grid, const SystemParams& base,
                                            const PowerCalibration& cal = {}, unsigned workers = 1) {
  grid.validate();
  std::vector<PhaseCell> cells(grid.size());
  parallel_for(cells.size(), workers, [&](std::size_t idx) {
    PhaseCell& c = cells[idx];
    c.i = static_cast<int>(idx / grid.db_count);
    c.j = static_cast<int>(idx % grid.db_count);
    c.delta_da_hz = grid.da_hz(c.i);
    c.delta_db_hz = grid.db_hz(c.j);
    try {
      SystemParams p = base;
      p.set_detunings(units::hz_to_rad_us(c.delta_da_hz), units::hz_to_rad_us(c.delta_db_hz));
      c.cls = classify_point(p, grid.powers_dbm, cal);
    } catch (const std::exception& e) {
      c.error = e.what();
    }
  });
  return cells;
}

}  // namespace kerrcomb
