#pragma once

// Two-mode driven Kerr model: a linear cavity mode (alpha) coupled to a
// Kerr-nonlinear mode (beta), written in the frame rotating at the drive.
// Phase-space vector ordering is (alpha, alpha^dag, beta, beta^dag).

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "kerrcomb/error.hpp"
#include "kerrcomb/units.hpp"

namespace kerrcomb {

using cplx = std::complex<double>;
using Vec4c = Eigen::Matrix<cplx, 4, 1>;
using Mat4c = Eigen::Matrix<cplx, 4, 4>;

inline constexpr cplx I{0.0, 1.0};

/// Physical parameters in internal units (rad/us). Detunings are derived.
struct SystemParams {
  double omega_a = 0.0;
  double omega_b = 0.0;
  double omega_d = 0.0;
  double g = 0.0;
  double Lambda = 0.0;  // stored positive; enters H as -Lambda/2 b^dag b^dag b b
  double kappa = 0.0;
  double gamma = 0.0;
  double gamma_phi = 0.0;
  double eta = 0.0;

  double delta_da() const { return omega_d - omega_a; }
  double delta_db() const { return omega_d - omega_b; }

  /// Total amplitude damping rate entering the nonlinear-mode drift.
  double gamma_total() const { return gamma + gamma_phi; }

  /// Linear-mode susceptibility chi_a = (-i Delta_da + kappa/2)^-1.
  cplx chi_a() const { return 1.0 / cplx(kappa / 2.0, -delta_da()); }

  /// Set detunings by moving the mode frequencies relative to the current drive.
  void set_detunings(double d_da, double d_db) {
    omega_a = omega_d - d_da;
    omega_b = omega_d - d_db;
  }

  bool finite() const {
    for (double v : {omega_a, omega_b, omega_d, g, Lambda, kappa, gamma, gamma_phi, eta})
      if (!std::isfinite(v)) return false;
    return true;
  }

  void validate() const {
    if (!finite()) throw Error(ErrorCode::InvalidArgument, "system parameters must be finite");
    if (kappa < 0 || gamma < 0 || gamma_phi < 0)
      throw Error(ErrorCode::InvalidArgument, "damping and dephasing rates must be non-negative");
    if (eta < 0) throw Error(ErrorCode::InvalidArgument, "drive amplitude eta must be >= 0");
  }
};

/// Measured device parameters with the defaults used to reproduce the comb experiments.
struct DevicePreset {
  std::string name;
  double omega_b_hz;
  double g_hz;
  double Lambda_hz;
  double kappa_hz;
  double gamma_phi_hz;  // default pure dephasing
  double omega_a_hz;    // bare cavity frequency (derived from the Delta_da = -47.8 MHz cut)
  double omega_d_hz;    // fixed drive frequency of the flux-sweep experiment

  SystemParams params() const {
    SystemParams p;
    p.omega_a = units::hz_to_rad_us(omega_a_hz);
    p.omega_b = units::hz_to_rad_us(omega_b_hz);
    p.omega_d = units::hz_to_rad_us(omega_d_hz);
    p.g = units::hz_to_rad_us(g_hz);
    p.Lambda = units::hz_to_rad_us(Lambda_hz);
    p.kappa = units::hz_to_rad_us(kappa_hz);
    p.gamma = 0.0;
    p.gamma_phi = units::hz_to_rad_us(gamma_phi_hz);
    p.eta = 0.0;
    return p;
  }
};

inline DevicePreset device_a() {
  return {"A", 4.956806e9, 87.6956e6, 5.96e3, 10.9308e6, 2.0e3, 4.9563e9, 4.9085e9};
}

inline DevicePreset device_b() {
  return {"B", 4.951073e9, 89.25e6, 152.6e3, 22.84e6, 30.0e3, 4.9563e9, 4.9085e9};
}

inline DevicePreset device_preset(std::string_view name) {
  if (name == "A" || name == "a") return device_a();
  if (name == "B" || name == "b") return device_b();
  throw Error(ErrorCode::InvalidArgument, "unknown device preset '" + std::string(name) + "'");
}

/// Phase-space point of the Positive-P representation.
struct PhaseState {
  Vec4c zeta = Vec4c::Zero();

  PhaseState() = default;
  explicit PhaseState(const Vec4c& z) : zeta(z) {}

  /// Point on the classical manifold: alpha^dag = conj(alpha), beta^dag = conj(beta).
  static PhaseState classical(cplx alpha, cplx beta) {
    Vec4c z;
    z << alpha, std::conj(alpha), beta, std::conj(beta);
    return PhaseState(z);
  }

  cplx alpha() const { return zeta[0]; }
  cplx alpha_dag() const { return zeta[1]; }
  cplx beta() const { return zeta[2]; }
  cplx beta_dag() const { return zeta[3]; }

  double norm() const { return zeta.norm(); }

  /// Largest deviation from conjugate pairing.
  double pairing_error() const {
    return std::max(std::abs(zeta[1] - std::conj(zeta[0])), std::abs(zeta[3] - std::conj(zeta[2])));
  }
};

/// Deterministic drift vector A_c(zeta).
inline Vec4c drift(const Vec4c& z, const SystemParams& p) {
  const double dda = p.delta_da();
  const double ddb = p.delta_db();
  const double half_k = 0.5 * p.kappa;
  const double half_gt = 0.5 * p.gamma_total();
  const cplx nb = z[3] * z[2];  // beta^dag beta
  Vec4c a;
  a[0] = cplx(-half_k, dda) * z[0] - I * p.g * z[2] - I * p.eta;
  a[1] = cplx(-half_k, -dda) * z[1] + I * p.g * z[3] + I * p.eta;
  a[2] = cplx(-half_gt, ddb) * z[2] + I * p.Lambda * nb * z[2] - I * p.g * z[0];
  a[3] = cplx(-half_gt, -ddb) * z[3] - I * p.Lambda * nb * z[3] + I * p.g * z[1];
  return a;
}

inline Vec4c drift(const PhaseState& s, const SystemParams& p) { return drift(s.zeta, p); }

/// Jacobian J_ij = d A_c^i / d zeta_j.
inline Mat4c jacobian(const Vec4c& z, const SystemParams& p) {
  const double dda = p.delta_da();
  const double ddb = p.delta_db();
  const double half_k = 0.5 * p.kappa;
  const double half_gt = 0.5 * p.gamma_total();
  const cplx nb = z[3] * z[2];
  const cplx ig = I * p.g;
  Mat4c j = Mat4c::Zero();
  j(0, 0) = cplx(-half_k, dda);
  j(0, 2) = -ig;
  j(1, 1) = cplx(-half_k, -dda);
  j(1, 3) = ig;
  j(2, 0) = -ig;
  j(2, 2) = cplx(-half_gt, ddb) + 2.0 * I * p.Lambda * nb;
  j(2, 3) = I * p.Lambda * z[2] * z[2];
  j(3, 1) = ig;
  j(3, 2) = -I * p.Lambda * z[3] * z[3];
  j(3, 3) = cplx(-half_gt, -ddb) - 2.0 * I * p.Lambda * nb;
  return j;
}

inline Mat4c jacobian(const PhaseState& s, const SystemParams& p) { return jacobian(s.zeta, p); }

/// Constant (state-independent) linear part L of the drift: A_c = L zeta + c + N(zeta).
inline Mat4c linear_part(const SystemParams& p) {
  SystemParams lin = p;
  lin.Lambda = 0.0;
  return jacobian(Vec4c::Zero().eval(), lin);
}

/// Constant drive vector c of the drift.
inline Vec4c drive_vector(const SystemParams& p) {
  Vec4c c = Vec4c::Zero();
  c[0] = -I * p.eta;
  c[1] = I * p.eta;
  return c;
}

/// Kerr part N(zeta) of the drift.
inline Vec4c nonlinear_part(const Vec4c& z, const SystemParams& p) {
  const cplx nb = z[3] * z[2];
  Vec4c n = Vec4c::Zero();
  n[2] = I * p.Lambda * nb * z[2];
  n[3] = -I * p.Lambda * nb * z[3];
  return n;
}

/// Noise factorization B_st = sqrt(Gamma) B1 + sqrt(gamma_phi) B2 with D_st = B_st B_st^T.
struct NoiseDecomposition {
  double Gamma = 0.0;
  double theta = 0.0;
  Mat4c B1 = Mat4c::Zero();
  Mat4c B2 = Mat4c::Zero();
  double sqrt_gamma_phi = 0.0;

  Mat4c B_st() const { return std::sqrt(Gamma) * B1 + sqrt_gamma_phi * B2; }
};

/// Gamma and theta with Gamma e^{i theta} = i Lambda - gamma_phi.
/// theta is the argument of i Lambda - gamma_phi, so theta = pi/2 when gamma_phi = 0.
inline std::pair<double, double> noise_gamma_theta(const SystemParams& p) {
  const double Gamma = std::hypot(p.Lambda, p.gamma_phi);
  const double theta = Gamma > 0.0 ? std::atan2(p.Lambda, -p.gamma_phi) : 0.0;
  return {Gamma, theta};
}

inline NoiseDecomposition noise_matrices(const Vec4c& z, const SystemParams& p) {
  NoiseDecomposition nd;
  auto [Gamma, theta] = noise_gamma_theta(p);
  nd.Gamma = Gamma;
  nd.theta = theta;
  nd.sqrt_gamma_phi = std::sqrt(p.gamma_phi);
  const cplx eh = std::polar(1.0, 0.5 * theta);
  // b1 occupies rows (beta, beta^dag) and columns (0, 1)
  nd.B1(2, 0) = eh * z[2];
  nd.B1(3, 1) = std::conj(eh) * z[3];
  // b2 occupies rows (beta, beta^dag) and columns (2, 3); principal branch square root
  const cplx s = std::sqrt(0.5 * z[3] * z[2]);
  const cplx ep = std::polar(1.0, std::numbers::pi / 4.0);
  const cplx em = std::conj(ep);
  nd.B2(2, 2) = s * ep;
  nd.B2(2, 3) = s * em;
  nd.B2(3, 2) = s * em;
  nd.B2(3, 3) = s * ep;
  return nd;
}

inline NoiseDecomposition noise_matrices(const PhaseState& s, const SystemParams& p) {
  return noise_matrices(s.zeta, p);
}

/// Diffusion matrix D_st evaluated directly from its closed form.
inline Mat4c diffusion_matrix(const Vec4c& z, const SystemParams& p) {
  Mat4c d = Mat4c::Zero();
  const cplx nb = z[3] * z[2];
  d(2, 2) = cplx(-p.gamma_phi, p.Lambda) * z[2] * z[2];
  d(2, 3) = p.gamma_phi * nb;
  d(3, 2) = p.gamma_phi * nb;
  d(3, 3) = cplx(-p.gamma_phi, -p.Lambda) * z[3] * z[3];
  return d;
}

/// Rescaling Lambda -> Lambda/k, eta -> sqrt(k) eta, zeta -> sqrt(k) zeta.
/// The drift picks up an overall factor sqrt(k) while the noise amplitude,
/// relative to the amplitudes, shrinks by 1/sqrt(k).
inline std::pair<SystemParams, PhaseState> scale_transform(const SystemParams& p, const PhaseState& s, double k) {
  if (!(k > 0.0) || !std::isfinite(k))
    throw Error(ErrorCode::InvalidArgument, "scale factor k must be positive and finite");
  SystemParams q = p;
  q.Lambda = p.Lambda / k;
  q.eta = std::sqrt(k) * p.eta;
  return {q, PhaseState(std::sqrt(k) * s.zeta)};
}

inline SystemParams scale_params(const SystemParams& p, double k) {
  return scale_transform(p, PhaseState{}, k).first;
}

}  // namespace kerrcomb
