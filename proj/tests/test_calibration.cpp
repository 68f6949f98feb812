#include <catch_amalgamated.hpp>

#include <random>

#include "kerrcomb/calibration.hpp"

using namespace kerrcomb;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

SystemParams ringdown_params(double delta_ab_over_g) {
  SystemParams p = device_a().params();
  p.gamma = units::hz_to_rad_us(20e3);
  p.gamma_phi = units::hz_to_rad_us(50e3);
  p.omega_b = p.omega_a - delta_ab_over_g * p.g;
  p.omega_d = polariton_modes(p).nu_a;
  p.eta = 1.0;
  return p;
}

double log_slope(const std::vector<double>& t, const std::vector<double>& y) {
  return -(std::log(y.back()) - std::log(y.front())) / (t.back() - t.front());
}

}  // namespace

TEST_CASE("polariton basis", "[calibration]") {
  SECTION("uncoupled modes") {
    SystemParams p = device_a().params();
    p.g = 0.0;
    const auto pb = polariton_modes(p);
    CHECK(pb.nu_a == p.omega_a);
    CHECK(pb.nu_b == p.omega_b);
    CHECK((pb.P - Eigen::Matrix2d::Identity()).norm() == 0.0);
  }
  SECTION("resonant splitting") {
    SystemParams p = device_a().params();
    p.omega_b = p.omega_a;
    const auto pb = polariton_modes(p);
    CHECK_THAT(std::abs(pb.nu_b - pb.nu_a), WithinRel(2.0 * p.g, 1e-12));
  }
  SECTION("detuning sweep against the closed-form 2x2 solution") {
    SystemParams p = device_a().params();
    for (double x = -30.0; x <= 30.0; x += 0.7) {
      p.omega_b = p.omega_a - x * p.g;
      const auto pb = polariton_modes(p);
      const double mean = 0.5 * (p.omega_a + p.omega_b);
      const double half = std::hypot(0.5 * (p.omega_a - p.omega_b), p.g);
      const double a_like = p.omega_a >= p.omega_b ? mean + half : mean - half;
      const double b_like = p.omega_a >= p.omega_b ? mean - half : mean + half;
      CHECK_THAT(pb.nu_a, WithinAbs(a_like, 1e-12 * p.omega_a));
      CHECK_THAT(pb.nu_b, WithinAbs(b_like, 1e-12 * p.omega_a));
      CHECK(std::min(pb.nu_a, pb.nu_b) <= std::min(p.omega_a, p.omega_b));
      CHECK(std::max(pb.nu_a, pb.nu_b) >= std::max(p.omega_a, p.omega_b));
      Eigen::Matrix2d H;
      H << p.omega_a, p.g, p.g, p.omega_b;
      const Eigen::Matrix2d D = pb.P_inv * H * pb.P;
      CHECK(std::abs(D(0, 1)) < 1e-10 * p.omega_a);
      CHECK((pb.P_inv * pb.P - Eigen::Matrix2d::Identity()).norm() < 1e-14);
      CHECK(std::abs(pb.P(1, 1)) >= std::abs(pb.P(1, 0)));
    }
  }
}

TEST_CASE("diluted Kerr constant", "[calibration]") {
  const SystemParams base = device_a().params();
  SECTION("uncoupled") {
    SystemParams p = base;
    p.g = 1e-6 * base.g;
    const auto pb = polariton_modes(p);
    CHECK_THAT(pb.A(2, 2, 2, 2), WithinAbs(1.0, 1e-6));
    // the pumped amplitude ratio grows as 1/g, leaving a cross term of order gamma/Delta_ab
    const double bound = 10.0 * p.gamma_total() / std::abs(p.omega_a - p.omega_b);
    CHECK_THAT(lambda_b(p, PumpSpec{}, 0.0).value.real(), WithinRel(p.Lambda, bound));
    p.g = 0.0;
    CHECK_THROWS_AS(lambda_b(p), Error);
  }
  SECTION("large detuning recovers the bare value") {
    CHECK_THAT(lambda_b_at(base, 20.0 * base.g).value.real(), WithinRel(base.Lambda, 0.01));
    CHECK_THAT(lambda_b_at(base, -20.0 * base.g).value.real(), WithinRel(base.Lambda, 0.01));
  }
  SECTION("dilution grows with hybridization") {
    double prev = std::numeric_limits<double>::infinity();
    for (double x : {40.0, 20.0, 10.0, 5.0, 3.0, 2.0, 1.0}) {
      const double v = lambda_b_at(base, x * base.g).value.real();
      CHECK(v < prev);
      CHECK(v > 0.0);
      prev = v;
    }
    CHECK(prev < 0.8 * base.Lambda);
  }
  SECTION("unoccupied mode") {
    PumpSpec pump;
    pump.eta = 0.0;
    CHECK_THROWS_AS(lambda_b(base, pump), Error);
    try {
      lambda_b(base, pump);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroOccupation);
    }
  }
}

TEST_CASE("bare Kerr fit", "[calibration]") {
  const SystemParams base = device_a().params();
  std::vector<KerrPoint> clean;
  for (double x : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0})
    clean.push_back({x * base.g, lambda_b_at(base, x * base.g).value.real()});

  SECTION("noiseless data is recovered exactly") {
    const auto f = fit_bare_kerr(clean, base);
    CHECK_THAT(f.lambda, WithinRel(base.Lambda, 1e-10));
    CHECK(f.sigma < 1e-9 * base.Lambda);
  }
  SECTION("interval width scales with the noise level") {
    std::mt19937_64 rng(81);
    std::normal_distribution<double> nd;
    std::vector<double> eps(clean.size());
    for (auto& e : eps) e = nd(rng);
    double width_prev = 0.0;
    for (double level : {0.01, 0.1}) {
      auto noisy = clean;
      for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i].lambda_b *= 1.0 + level * eps[i];
      const auto f = fit_bare_kerr(noisy, base);
      CHECK(f.ci_low <= base.Lambda);
      CHECK(base.Lambda <= f.ci_high);
      if (width_prev > 0.0) CHECK_THAT((f.ci_high - f.ci_low) / width_prev, WithinRel(10.0, 0.05));
      width_prev = f.ci_high - f.ci_low;
    }
  }
  SECTION("Monte-Carlo spread of refits matches the reported sigma") {
    std::mt19937_64 rng(82);
    std::normal_distribution<double> nd;
    const int reps = 200;
    double s1 = 0.0, s2 = 0.0, sig = 0.0;
    for (int r = 0; r < reps; ++r) {
      auto noisy = clean;
      for (auto& d : noisy) d.lambda_b += 0.02 * base.Lambda * nd(rng);
      const auto f = fit_bare_kerr(noisy, base);
      s1 += f.lambda;
      s2 += f.lambda * f.lambda;
      sig += f.sigma;
    }
    const double spread = std::sqrt(s2 / reps - (s1 / reps) * (s1 / reps));
    CHECK_THAT(sig / reps, WithinRel(spread, 0.25));
  }
  SECTION("degenerate inputs") {
    CHECK_THROWS_AS(fit_bare_kerr({clean[0], clean[1]}, base), Error);
    std::vector<KerrPoint> far;
    for (double x : {1e5, 1.1e5, 1.2e5}) far.push_back({x * base.g, base.Lambda});
    CHECK_THROWS_AS(fit_bare_kerr(far, base), Error);
  }
}

TEST_CASE("pump photon number", "[calibration]") {
  const double wp = 2.0 * std::numbers::pi * 4.9e9, kb = 2.0 * std::numbers::pi * 1e5;
  CHECK(photon_number(0.0, wp, kb, 5.0 * kb) == 0.0);
  CHECK_THAT(photon_number(1e-15, wp, kb, 0.0), WithinRel(4.0 * 1e-15 / (units::hbar * wp * kb), 1e-12));
  const double n5 = photon_number(1e-15, wp, kb, 5.0 * kb), n10 = photon_number(1e-15, wp, kb, 10.0 * kb);
  CHECK_THAT(n5 / n10, WithinRel((100.0 + 0.25) / (25.0 + 0.25), 1e-12));
  CHECK_THAT(n5 / n10, WithinRel(4.0, 0.02));
  CHECK_THROWS_AS(photon_number(-1.0, wp, kb, 0.0), Error);
  CHECK_THROWS_AS(photon_number(1.0, wp, 0.0, 0.0), Error);
}

TEST_CASE("optical Kerr reference", "[calibration]") {
  const double w = 2.0 * std::numbers::pi * 100e12;
  const double lambda = 2.0 * std::numbers::pi * units::speed_of_light / w;
  const double v0 = std::pow(lambda / 2.0, 3);
  const double expected = 1.054571817e-34 * w * w * 299792458.0 * 2.5e-19 / (4.0 * v0);
  CHECK_THAT(optical_kerr_reference(w, 2.0, 2.5e-19, v0), WithinRel(expected, 1e-12));
  CHECK(optical_kerr_reference(w, 2.0, 0.0, v0) == 0.0);
  CHECK_THROWS_AS(optical_kerr_reference(w, 0.0, 2.5e-19, v0), Error);
}

TEST_CASE("ringdown moment system", "[calibration]") {
  SECTION("block structure") {
    SystemParams p = ringdown_params(5.0);
    p.eta = 0.0;
    const auto rs = ringdown_system(p);
    CHECK(rs.N().norm() == 0.0);
    CHECK(rs.M.topRightCorner<4, 4>().norm() == 0.0);
    CHECK(rs.d.norm() == 0.0);
    p.g = 0.0;
    const auto r0 = ringdown_system(p);
    const Eigen::Matrix4cd m1 = r0.M1(), m2 = r0.M2();
    CHECK((m1 - Eigen::Matrix4cd(m1.diagonal().asDiagonal())).norm() == 0.0);
    CHECK((m2 - Eigen::Matrix4cd(m2.diagonal().asDiagonal())).norm() == 0.0);
  }
  SECTION("uncoupled modes decay at their bare rates") {
    SystemParams p = ringdown_params(5.0);
    p.g = 0.0;
    const auto tr = ringdown_simulate(p);
    std::vector<double> a, na;
    for (std::size_t k = 0; k < tr.t.size(); ++k) {
      a.push_back(std::abs(tr.alpha(k)));
      na.push_back(tr.n_a(k));
    }
    CHECK_THAT(log_slope(tr.t, a), WithinRel(0.5 * p.kappa, 1e-9));
    CHECK_THAT(log_slope(tr.t, na), WithinRel(p.kappa, 1e-9));

    Vec8c v0 = Vec8c::Zero();
    v0[2] = cplx(0.6, 0.8);
    v0[3] = std::conj(v0[2]);
    v0[5] = 1.0;
    std::vector<double> t{0.0, 1.0, 5.0};
    const auto v = ringdown_closed_form(p, v0, t);
    for (std::size_t k = 0; k < t.size(); ++k) {
      CHECK_THAT(std::abs(v[k][2]), WithinRel(std::exp(-0.5 * p.gamma_total() * t[k]), 1e-9));
      CHECK_THAT(v[k][5].real(), WithinRel(std::exp(-p.gamma * t[k]), 1e-9));
    }
  }
  SECTION("closed form matches the stepped propagation") {
    const SystemParams p = ringdown_params(3.0);
    const auto tr = ringdown_simulate(p);
    const auto cf = ringdown_closed_form(p, tr.v.front(), tr.t);
    double worst = 0.0;
    for (std::size_t k = 0; k < tr.t.size(); ++k) worst = std::max(worst, (cf[k] - tr.v[k]).norm() / tr.v.front().norm());
    CHECK(worst < 1e-9);
  }
  SECTION("bad schedule") {
    RingdownSchedule s;
    s.sample_dt = 0.0;
    CHECK_THROWS_AS(ringdown_simulate(ringdown_params(5.0), s), Error);
  }
}

TEST_CASE("dephasing inherited by the linear mode", "[calibration]") {
  SECTION("no dephasing in, none out") {
    SystemParams p = ringdown_params(3.0);
    p.gamma_phi = 0.0;
    const auto d = extract_dephasing(ringdown_simulate(p));
    CHECK_THAT(d.gamma_phi_a, WithinAbs(0.0, 1e-9 * p.kappa));
    CHECK_THAT(ringdown_rates(p).gamma_phi_a, WithinAbs(0.0, 1e-9 * p.kappa));
  }
  SECTION("grows as the modes hybridize") {
    double prev = -1.0;
    for (double x : {20.0, 10.0, 5.0, 3.0, 2.0}) {
      const SystemParams p = ringdown_params(x);
      const auto d = extract_dephasing(ringdown_simulate(p));
      const auto r = ringdown_rates(p);
      if (x == 20.0) CHECK(d.gamma_phi_a < 0.01 * p.gamma_phi);
      CHECK(d.gamma_phi_a > prev);
      prev = d.gamma_phi_a;
      CHECK(r.gamma_phi_a >= 0.0);
      CHECK(r.gamma_phi_a < p.gamma_phi);
      CHECK_THAT(d.lambda1, WithinRel(r.lambda1, 0.01));
      CHECK_THAT(d.lambda2, WithinRel(r.lambda2, 0.01));
    }
  }
}
