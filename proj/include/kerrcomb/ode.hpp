#pragma once

// Thin wrappers over Boost.Odeint's Dormand-Prince 5(4) stepper with dense
// output, operating on fixed-size real state arrays.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"

namespace kerrcomb::ode {

template <std::size_t N>
using State = std::array<double, N>;

struct Options {
  double abs_tol = 1e-9;
  double rel_tol = 1e-9;
  double initial_dt = 1e-5;          // us
  double divergence_norm = 1e8;      // abort when the state norm exceeds this
  std::size_t max_steps = 200'000'000;
};

struct Stats {
  std::size_t steps = 0;
};

template <std::size_t N>
double norm(const State<N>& x, std::size_t count = N) {
  double s = 0.0;
  for (std::size_t i = 0; i < count; ++i) s += x[i] * x[i];
  return std::sqrt(s);
}

namespace detail {

template <std::size_t N>
void check_state(const State<N>& x, double t, const Options& opt, std::size_t guarded) {
  const double n = norm(x, guarded);
  if (!(n <= opt.divergence_norm))
    throw Error(ErrorCode::Diverged, "trajectory diverged at t = " + std::to_string(t) + " us");
}

}  // namespace detail

/// Integrate from t0 and call obs(t, x) at each requested time (ascending,
/// all >= t0) using dense-output interpolation. `guarded` selects how many
/// leading components enter the divergence check.
template <std::size_t N, class Rhs, class Obs>
Stats integrate_sampled(Rhs&& rhs, State<N> x, double t0, const std::vector<double>& times, const Options& opt,
                        Obs&& obs, std::size_t guarded = N) {
  namespace oi = boost::numeric::odeint;
  Stats st;
  if (times.empty()) return st;
  if (opt.abs_tol <= 0.0 || opt.rel_tol < 0.0) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
  auto stepper = oi::make_dense_output(opt.abs_tol, opt.rel_tol, oi::runge_kutta_dopri5<State<N>>());
  stepper.initialize(x, t0, opt.initial_dt);
  std::size_t k = 0;
  while (k < times.size() && times[k] <= t0) {
    obs(times[k], x);
    ++k;
  }
  State<N> xi;
  while (k < times.size()) {
    stepper.do_step(rhs);
    ++st.steps;
    if (st.steps > opt.max_steps) throw Error(ErrorCode::Diverged, "step budget exhausted");
    detail::check_state(stepper.current_state(), stepper.current_time(), opt, guarded);
    while (k < times.size() && times[k] <= stepper.current_time()) {
      stepper.calc_state(times[k], xi);
      obs(times[k], xi);
      ++k;
    }
  }
  return st;
}

/// Integrate x in place from t0 to t1 (no sampling).
template <std::size_t N, class Rhs>
Stats integrate_to(Rhs&& rhs, State<N>& x, double t0, double t1, const Options& opt, std::size_t guarded = N) {
  namespace oi = boost::numeric::odeint;
  Stats st;
  if (t1 <= t0) return st;
  auto stepper = oi::make_controlled(opt.abs_tol, opt.rel_tol, oi::runge_kutta_dopri5<State<N>>());
  double t = t0;
  double dt = std::min(opt.initial_dt, t1 - t0);
  while (t < t1) {
    if (t + dt > t1) dt = t1 - t;
    const auto res = stepper.try_step(rhs, x, t, dt);
    if (res == oi::success) {
      ++st.steps;
      detail::check_state(x, t, opt, guarded);
    }
    if (st.steps > opt.max_steps) throw Error(ErrorCode::Diverged, "step budget exhausted");
    if (dt < 1e-15 * std::max(1.0, std::abs(t))) throw Error(ErrorCode::Diverged, "step size underflow");
  }
  return st;
}

/// Classical phase-space point <-> real coordinates (Re, Im of all four components).
inline State<8> pack(const Vec4c& z) {
  State<8> x;
  for (int i = 0; i < 4; ++i) {
    x[2 * i] = z[i].real();
    x[2 * i + 1] = z[i].imag();
  }
  return x;
}

template <std::size_t N>
Vec4c unpack(const State<N>& x, std::size_t offset = 0) {
  Vec4c z;
  for (int i = 0; i < 4; ++i) z[i] = cplx(x[offset + 2 * i], x[offset + 2 * i + 1]);
  return z;
}

template <std::size_t N>
void store(State<N>& x, const Vec4c& z, std::size_t offset = 0) {
  for (int i = 0; i < 4; ++i) {
    x[offset + 2 * i] = z[i].real();
    x[offset + 2 * i + 1] = z[i].imag();
  }
}

}  // namespace kerrcomb::ode
