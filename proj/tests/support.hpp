#pragma once

#include <random>

#include "kerrcomb/model.hpp"

namespace test_support {

using kerrcomb::cplx;
using kerrcomb::SystemParams;
using kerrcomb::Vec4c;

/// Random but physically sensible parameter draw (internal units).
inline SystemParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  SystemParams p;
  p.omega_d = 30000.0;
  p.set_detunings(-800.0 + 1600.0 * u(rng), -800.0 + 1600.0 * u(rng));
  p.g = 50.0 + 600.0 * u(rng);
  p.Lambda = 1e-3 + 2.0 * u(rng);
  p.kappa = 5.0 + 150.0 * u(rng);
  p.gamma = 0.5 * u(rng);
  p.gamma_phi = 0.5 * u(rng);
  p.eta = 2000.0 * u(rng);
  return p;
}

/// Random phase-space point, deliberately off the classical manifold.
inline Vec4c random_state(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Vec4c z;
  for (int i = 0; i < 4; ++i) z[i] = cplx(n(rng), n(rng));
  return z;
}

}  // namespace test_support
