#include <catch_amalgamated.hpp>

#include <random>

#include <unsupported/Eigen/MatrixFunctions>

#include "kerrcomb/coherence.hpp"
#include "kerrcomb/dynamics.hpp"
#include "kerrcomb/sde.hpp"
#include "kerrcomb/steady.hpp"

using namespace kerrcomb;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Resonant toy parameters in rad/us: every detuning zero, so dt is limited by kappa and g only.
SystemParams toy(double g, double Lambda, double gamma_phi, double eta) {
  SystemParams p;
  p.omega_a = p.omega_b = p.omega_d = 1000.0;
  p.g = g;
  p.Lambda = Lambda;
  p.kappa = 10.0;
  p.gamma = 1.0;
  p.gamma_phi = gamma_phi;
  p.eta = eta;
  return p;
}

Vec4c exact_linear(const SystemParams& p, const Vec4c& z0, double t) {
  Eigen::Matrix<cplx, 5, 5> aug = Eigen::Matrix<cplx, 5, 5>::Zero();
  aug.topLeftCorner<4, 4>() = jacobian(Vec4c::Zero(), p);
  aug.topRightCorner<4, 1>() = drift(Vec4c::Zero(), p);
  Eigen::Matrix<cplx, 5, 1> x;
  x << z0, 1.0;
  return ((aug * t).exp() * x).head<4>();
}

FilteredCorrelation synthetic_trace(double t_coh_us, double f_hz, double dt_us, double span_us) {
  FilteredCorrelation fc;
  for (double t = 0.0; t <= span_us + 1e-12; t += dt_us) {
    fc.tau.push_back(t);
    fc.value.push_back(std::exp(-t / t_coh_us) * std::cos(2.0 * std::numbers::pi * f_hz * 1e-6 * t));
  }
  fc.smooth = fc.value;
  fc.smooth_err.assign(fc.value.size(), 0.0);
  return fc;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stochastic engine

TEST_CASE("zero-noise trajectories follow the deterministic solution", "[sde]") {
  SystemParams p = toy(8.0, 0.0, 0.0, 30.0);
  p.omega_b = 1003.0;
  EnsembleSpec spec;
  spec.n_traj = 2;
  spec.t_ss = 0.0;
  spec.t_w = 0.5;
  spec.z0 = PhaseState::classical(cplx(0.2, 0.1), cplx(-0.3, 0.4));
  const Vec4c exact = exact_linear(p, spec.z0.zeta, spec.t_w);

  SECTION("exponential Euler is exact for a linear drift") {
    spec.dt = 1e-3;
    spec.sample_dt = 0.05;
    const auto w = simulate_trajectory(p, spec, 0, 1e9);
    CHECK((w.samples.back() - exact).norm() < 1e-10 * exact.norm());
  }
  SECTION("explicit Euler-Maruyama converges at first order") {
    spec.scheme = SdeScheme::EulerMaruyama;
    spec.sample_dt = 0.05;
    std::vector<double> err;
    for (double dt : {1e-3, 5e-4, 2.5e-4}) {
      spec.dt = dt;
      err.push_back((simulate_trajectory(p, spec, 0, 1e9).samples.back() - exact).norm());
    }
    CHECK(err[0] < 1e-2 * exact.norm());
    CHECK(err[0] / err[1] > 1.7);
    CHECK(err[0] / err[1] < 2.3);
    CHECK(err[1] / err[2] > 1.7);
    CHECK(err[1] / err[2] < 2.3);
  }
  SECTION("identical across trajectories when there is no noise") {
    spec.dt = 1e-3;
    spec.sample_dt = 0.05;
    const auto a = simulate_trajectory(p, spec, 0, 1e9), b = simulate_trajectory(p, spec, 1, 1e9);
    CHECK((a.samples.back() - b.samples.back()).norm() == 0.0);
  }
}

TEST_CASE("free decay of both modes matches the analytic moments", "[sde]") {
  // decoupled modes; the Kerr and dephasing noise act on b only
  SystemParams p = toy(0.0, 0.5, 0.5, 0.0);
  EnsembleSpec spec;
  spec.n_traj = 4000;
  spec.dt = 2e-3;
  spec.sample_dt = 0.05;
  spec.t_ss = 0.0;
  spec.t_w = 0.6;
  spec.seed = 5;
  const cplx a0(2.0, 1.0), b0(1.5, -0.5);
  spec.z0 = PhaseState::classical(a0, b0);
  const auto ens = simulate_ensemble(p, spec);
  REQUIRE(ens.n_spiked == 0);
  const auto m = ensemble_moments(ens);
  int beyond = 0;
  for (std::size_t k = 0; k < m.t.size(); ++k) {
    const double t = m.t[k];
    const double na = std::norm(a0) * std::exp(-p.kappa * t);
    CHECK_THAT(m.n_a[k], WithinAbs(na, 3.0 * m.n_a_err[k] + 1e-12 * std::norm(a0)));
    // photon number of b decays at gamma alone; the Ito term of the dephasing noise cancels gamma_phi
    const double nb = std::norm(b0) * std::exp(-p.gamma * t);
    if (std::abs(m.n_b[k] - nb) > 3.0 * m.n_b_err[k]) ++beyond;
  }
  CHECK(beyond <= 1);
  CHECK(m.n_b_err.back() > 0.0);
}

TEST_CASE("moment error bars shrink as one over root N", "[sde][property]") {
  SystemParams p = toy(0.0, 0.5, 2.0, 0.0);
  EnsembleSpec spec;
  spec.dt = 2e-3;
  spec.sample_dt = 0.1;
  spec.t_ss = 0.0;
  spec.t_w = 0.4;
  spec.z0 = PhaseState::classical(0.0, cplx(1.5, -0.5));
  spec.n_traj = 500;
  const double e1 = ensemble_moments(simulate_ensemble(p, spec)).n_b_err.back();
  spec.n_traj = 2000;
  const double e2 = ensemble_moments(simulate_ensemble(p, spec)).n_b_err.back();
  CHECK_THAT(e1 / e2, WithinRel(2.0, 0.2));
}

TEST_CASE("driven linear cavity reaches a coherent state", "[sde]") {
  SystemParams p = toy(0.0, 0.0, 1.0, 40.0);
  p.omega_a = 1004.0;
  EnsembleSpec spec;
  spec.n_traj = 200;
  spec.dt = 2e-3;
  spec.sample_dt = 0.01;
  spec.t_ss = 6.0;
  spec.t_w = 0.5;
  spec.z0 = PhaseState::classical(0.0, cplx(0.5, 0.5));
  CorrelationOptions opt;
  opt.t_a = 0.3;
  opt.batches = 10;
  const auto cs = simulate_correlations(p, spec, opt);
  const cplx expected = -I * p.eta * p.chi_a();
  CHECK(std::abs(cs.mean_alpha - expected) < 1e-9 * std::abs(expected));
  for (std::size_t k = 0; k < cs.tau.size(); ++k) {
    CHECK(std::abs(cs.N[k]) <= 3.0 * cs.N_err[k] + 1e-9 * std::norm(expected));
    CHECK(std::abs(cs.A[k]) <= 3.0 * cs.A_err[k] + 1e-9 * std::norm(expected));
  }
}

TEST_CASE("ensembles are reproducible from the seed", "[sde][property]") {
  SystemParams p = device_a().params();
  p.set_detunings(units::hz_to_rad_us(-47.8e6), units::hz_to_rad_us(25.2e6));
  p.eta = PowerCalibration{}.eta(-73.0, p);
  const SystemParams s = scale_params(p, 0.01);
  EnsembleSpec spec;
  spec.n_traj = 60;
  spec.sample_dt = 5e-4;
  spec.dt = spec.sample_dt / std::ceil(spec.sample_dt / max_resolved_dt(s));
  spec.t_ss = 0.02;
  spec.t_w = 0.05;
  spec.seed = 99;
  CorrelationOptions opt;
  opt.t_a = 0.03;
  opt.batches = 6;
  const auto a = simulate_correlations(s, spec, opt, 1, false);
  const auto b = simulate_correlations(s, spec, opt, 3, false);
  REQUIRE(a.N.size() == b.N.size());
  for (std::size_t k = 0; k < a.N.size(); ++k) {
    CHECK(std::abs(a.N[k] - b.N[k]) <= 1e-12 * std::abs(a.N[0]));
    CHECK(std::abs(a.A[k] - b.A[k]) <= 1e-12 * std::abs(a.N[0]));
  }
  spec.seed = 100;
  const auto c = simulate_correlations(s, spec, opt, 1, false);
  CHECK(std::abs(c.N[0] - a.N[0]) > 0.0);
}

TEST_CASE("divergent trajectories are flagged and excluded", "[sde]") {
  SystemParams p = toy(5.0, 0.5, 1.0, 20.0);
  EnsembleSpec spec;
  spec.n_traj = 20;
  spec.dt = 2e-3;
  spec.sample_dt = 0.01;
  spec.t_ss = 0.1;
  spec.t_w = 0.2;
  spec.divergence_factor = 1e-6;
  const auto ens = simulate_ensemble(p, spec);
  CHECK(ens.n_spiked == 20);
  CHECK(ens.weak_noise_violated());
  CorrelationOptions opt;
  opt.t_a = 0.1;
  CHECK_THROWS_AS(simulate_correlations(p, spec, opt), Error);
}

TEST_CASE("spec validation", "[sde]") {
  const SystemParams p = toy(5.0, 0.5, 1.0, 20.0);
  EnsembleSpec spec;
  spec.dt = 0.1;  // far above 0.05 / kappa
  CHECK_THROWS_AS(simulate_ensemble(p, spec), Error);
  spec.dt = 1e-3;
  spec.n_traj = 0;
  CHECK_THROWS_AS(simulate_ensemble(p, spec), Error);
  spec.n_traj = 4;
  CorrelationOptions opt;
  opt.t_a = spec.t_w * 2.0;
  CHECK_THROWS_AS(simulate_correlations(p, spec, opt), Error);
}

TEST_CASE("transient inside the window fails the steadiness check", "[sde]") {
  SystemParams p = toy(0.0, 0.0, 0.5, 0.0);
  p.kappa = 10.0;
  EnsembleSpec spec;
  spec.n_traj = 50;
  spec.dt = 2e-3;
  spec.sample_dt = 0.01;
  spec.t_ss = 0.0;
  spec.t_w = 0.6;
  spec.z0 = PhaseState::classical(cplx(5.0, 0.0), 0.0);
  CorrelationOptions opt;
  opt.t_a = 0.2;
  opt.batches = 5;
  CHECK_THROWS_AS(simulate_correlations(p, spec, opt), Error);
  const auto cs = simulate_correlations(p, spec, opt, 1, false);
  CHECK_FALSE(cs.steady);
}

TEST_CASE("noise-free periodic ensemble gives a non-decaying autocovariance", "[sde]") {
  SystemParams p = device_a().params();
  p.set_detunings(units::hz_to_rad_us(-47.8e6), units::hz_to_rad_us(25.2e6));
  p.eta = PowerCalibration{}.eta(-73.0, p);
  LimitCycleSearch s;
  s.drive_freq_hz = units::rad_us_to_hz(p.omega_d);
  const auto lc = find_limit_cycle(p, PhaseState{}, s);
  const std::size_t per = 64;
  const double h = lc.period / per;
  EnsembleResult ens;
  for (std::size_t j = 0; j < 16; ++j) {
    const PhaseState start = advance_classical(p, lc.start, lc.period * static_cast<double>(j) / 16.0, 1e-12);
    const auto tr = integrate_classical(p, start, 4.0 * lc.period + 0.5 * h, 1e-12, h);
    TrajectoryWindow w;
    w.spacing = h;
    w.samples = tr.states;
    ens.windows.push_back(w);
  }
  CorrelationOptions opt;
  opt.t_a = 2.0 * lc.period;
  opt.start_spacing = h;
  opt.batches = 4;
  opt.check_steady = false;
  const auto cs = steady_correlations(ens, opt);
  CHECK(std::abs(cs.N[0]) > 0.0);
  CHECK_THAT(std::abs(cs.N[per]), WithinRel(std::abs(cs.N[0]), 0.02));
  CHECK_THAT(std::abs(cs.N[2 * per]), WithinRel(std::abs(cs.N[0]), 0.02));
}

// ---------------------------------------------------------------------------
// Output correlation, filtering and G1

TEST_CASE("output correlation scales the normal and anomalous parts", "[coherence]") {
  CorrelationSet cs;
  const double tau0 = 0.05, w = 60.0, kappa = 7.0;
  for (int k = 0; k < 200; ++k) {
    const double t = 1e-3 * k;
    cs.tau.push_back(t);
    cs.N.push_back(std::exp(-t / tau0) * std::cos(w * t));
    cs.A.push_back(cplx(0.3, -0.2) * std::exp(-t / tau0));
    cs.N_err.push_back(0.0);
    cs.A_err.push_back(0.0);
  }
  const auto oc = output_correlation(cs, kappa);
  for (std::size_t k = 0; k < cs.tau.size(); ++k) {
    const double t = cs.tau[k];
    const double closed = kappa * std::exp(-t / tau0) * (std::cos(w * t) + 0.3);
    CHECK_THAT(oc.smooth(k), WithinAbs(closed, 1e-12));
  }
  CHECK(oc.delta_weight == 0.5);
}

TEST_CASE("all-pass filter keeps the smooth part and turns the delta into an impulse", "[coherence]") {
  OutputCorrelation oc;
  for (int k = 0; k < 100; ++k) {
    oc.tau.push_back(1e-3 * k);
    oc.normal.push_back(cplx(std::exp(-0.01 * k), 0.0));
    oc.anomalous.push_back(cplx(0.1, 0.0));
    oc.normal_err.push_back(0.0);
    oc.anomalous_err.push_back(0.0);
  }
  const auto f = apply_filter(oc, FilterSpec::all_pass(0.0, 1e-3));
  REQUIRE(f.tau.size() == oc.tau.size());
  for (std::size_t k = 0; k < f.tau.size(); ++k) {
    CHECK(f.smooth[k] == oc.smooth(k));
    CHECK(f.value[k] == oc.smooth(k) + (k == 0 ? 0.5 / 1e-3 : 0.0));
  }
  SECTION("zero input leaves only the delta term") {
    OutputCorrelation z = oc;
    std::fill(z.normal.begin(), z.normal.end(), cplx(0.0));
    std::fill(z.anomalous.begin(), z.anomalous.end(), cplx(0.0));
    const auto g = apply_filter(z, FilterSpec::all_pass(0.0, 2e-3));
    CHECK(g.value[0] == 0.5 / 2e-3);
    for (std::size_t k = 1; k < g.value.size(); ++k) CHECK(g.value[k] == 0.0);
  }
}

TEST_CASE("heterodyne shift multiplies by a phase before the real part", "[coherence]") {
  OutputCorrelation oc;
  const double fsb = 37e6;
  for (int k = 0; k < 400; ++k) {
    const double t = 1e-3 * k;
    oc.tau.push_back(t);
    oc.normal.push_back(std::polar(std::exp(-t), 2.0 * std::numbers::pi * fsb * 1e-6 * t));
    oc.anomalous.push_back(cplx(5.0, 5.0));  // discarded by the single-sideband detection
    oc.normal_err.push_back(0.0);
    oc.anomalous_err.push_back(0.0);
  }
  FilterSpec f = FilterSpec::all_pass(100e6, 1e-3);
  f.sideband_hz = fsb;
  const auto r = apply_filter(oc, f);
  for (std::size_t k = 0; k < r.tau.size(); ++k) {
    const double t = r.tau[k];
    const double expected = std::exp(-t) * std::cos(2.0 * std::numbers::pi * 100e6 * 1e-6 * t);
    CHECK_THAT(r.smooth[k], WithinAbs(expected, 1e-9));
  }
  f.sideband_hz = std::numeric_limits<double>::quiet_NaN();
  CHECK_THAT(apply_filter(oc, f).sideband_hz, WithinAbs(fsb, 0.5e6));
}

TEST_CASE("Gaussian filter attenuates a tone by its transfer function", "[coherence]") {
  OutputCorrelation oc;
  const double f0 = 80e6, h = 2e-4;
  for (int k = 0; k < 20000; ++k) {
    const double t = h * k;
    oc.tau.push_back(t);
    oc.normal.push_back(std::cos(2.0 * std::numbers::pi * f0 * 1e-6 * t));
    oc.anomalous.push_back(0.0);
    oc.normal_err.push_back(0.0);
    oc.anomalous_err.push_back(0.0);
  }
  FilterSpec f;
  f.f_dc_hz = 0.0;
  const auto r = apply_filter(oc, f);
  const double sigma_f = f.bandwidth_hz;
  const double gain = std::exp(-0.5 * (f0 / sigma_f) * (f0 / sigma_f));
  for (std::size_t k = 0; k < r.tau.size(); k += 97) {
    const double expected = gain * std::cos(2.0 * std::numbers::pi * f0 * 1e-6 * r.tau[k]);
    CHECK_THAT(r.smooth[k], WithinAbs(expected, 1e-6));
  }
  FilterSpec bad = f;
  bad.bandwidth_hz = 300e6;  // above Nyquist of the 2 ns digitizer
  CHECK_THROWS_AS(apply_filter(oc, bad), Error);
}

TEST_CASE("coherence time of a synthetic decaying tone", "[coherence]") {
  const auto fc = synthetic_trace(20.0, 100e6, 1e-3, 60.0);
  const auto r = g1_and_coherence(fc);
  CHECK(r.g1[0] == 1.0);
  CHECK_FALSE(r.fit_poor);
  CHECK_THAT(r.t_coh, WithinRel(20.0, 0.01));
  for (double v : r.g1) CHECK(std::abs(v) <= 1.0 + 1e-12);
}

TEST_CASE("coherence-time law fit", "[coherence]") {
  const double gp = units::hz_to_rad_us(2e3);
  const TcohLaw truth{1.19, 0.55, gp, 0.0};
  std::vector<TcohPoint> pts;
  for (double lam_hz : {1e3, 3e3, 6e3, 2e4, 6e4}) {
    const double lam = units::hz_to_rad_us(lam_hz);
    pts.push_back({lam, truth(lam)});
  }
  const auto law = fit_tcoh_law(pts, gp);
  CHECK_THAT(law.a, WithinRel(1.19, 1e-6));
  CHECK_THAT(law.b, WithinRel(0.55, 1e-6));
  CHECK_THAT(law(0.0), WithinRel(1.19 / gp, 1e-6));
  CHECK_THROWS_AS(fit_tcoh_law({pts.begin(), pts.begin() + 3}, gp), Error);
  CHECK_THROWS_AS(fit_tcoh_law(pts, 0.0), Error);
}

TEST_CASE("dephasing-rate estimate from a coherence curve", "[coherence]") {
  const std::vector<double> lambdas = {0.02, 0.04, 0.08, 0.16};
  auto curve = [&](double gp) {
    std::vector<double> t;
    for (double l : lambdas) t.push_back(TcohLaw{1.19, 0.55, gp, 0.0}(l));
    return t;
  };
  std::vector<DephasingCandidate> cands;
  for (double khz = 0.0; khz <= 5.0 + 1e-9; khz += 0.5) {
    const double gp = units::hz_to_rad_us(khz * 1e3);
    cands.push_back({gp, curve(gp)});
  }
  const auto e = estimate_gamma_phi(cands, curve(units::hz_to_rad_us(2e3)));
  const double khz = units::rad_us_to_hz(e.gamma_phi) / 1e3;
  CHECK(khz >= 1.0);
  CHECK(khz <= 3.0);
  CHECK_THAT(units::rad_us_to_hz(e.grid_gamma_phi), WithinAbs(2e3, 1e-6));
  const auto zero = estimate_gamma_phi(cands, curve(0.0));
  CHECK(zero.best == 0);
  std::vector<DephasingCandidate> flat = {{0.0, curve(0.0)}, {0.1, curve(0.0)}, {0.2, curve(0.0)}};
  CHECK_THROWS_AS(estimate_gamma_phi(flat, curve(0.0)), Error);
}
