#pragma once

// End-to-end coherence measurement at one operating point: scale the
// nonlinearity, seed the ensemble on the classical attractor, estimate the
// steady correlations, filter them as the detector does and fit G1.

#include <cmath>
#include <optional>
#include <vector>

#include "kerrcomb/coherence.hpp"
#include "kerrcomb/dynamics.hpp"
#include "kerrcomb/floquet.hpp"
#include "kerrcomb/sde.hpp"
#include "kerrcomb/steady.hpp"

namespace kerrcomb {

struct CoherenceProtocol {
  double scale = 0.01;                 // k: Lambda -> Lambda / k
  EnsembleSpec ensemble{};             // dt <= 0 picks the largest resolved step dividing sample_dt
  CorrelationOptions correlation{};
  FilterSpec filter{};
  CoherenceOptions coherence{};
  bool orbit_start = true;             // draw initial states from the classical attractor
  std::size_t orbit_samples = 256;
  double settle_time = 20.0;           // us, classical transient used to locate the attractor
  bool throw_if_not_steady = false;
};

struct CoherenceRun {
  SystemParams scaled;
  CorrelationSet corr;
  FilteredCorrelation filtered;
  CoherenceResult g1;
  bool on_limit_cycle = false;
  double spacing_hz = std::numeric_limits<double>::quiet_NaN();
  double t_coh_scaled = std::numeric_limits<double>::quiet_NaN();    // us
  double t_coh_unscaled = std::numeric_limits<double>::quiet_NaN();  // us, mapped back with the 1/Lambda law

  double excluded_fraction() const { return corr.excluded_fraction(); }
  bool weak_noise_violated() const { return excluded_fraction() > 0.01; }
};

/// Largest step that satisfies the resolution rule and divides the sample spacing.
inline double resolved_step(const SystemParams& p, double sample_dt) {
  const double cap = max_resolved_dt(p);
  const double n = std::ceil(sample_dt / cap * (1.0 - 1e-12));
  return sample_dt / std::max(1.0, n);
}

/// Attractor of the unscaled classical dynamics: the lowest stable fixed point,
/// a sampled limit cycle, or (if neither is found) the state after the transient.
struct Attractor {
  std::vector<Vec4c> states;
  std::optional<LimitCycle> cycle;
  double spacing_hz = std::numeric_limits<double>::quiet_NaN();
};

inline Attractor find_attractor(const SystemParams& p, double settle_time, std::size_t samples) {
  Attractor a;
  const auto ss = steady_states(p);
  for (const auto& fp : ss.points)
    if (fp.stable()) {
      a.states.push_back(fp.state().zeta);
      return a;
    }
  try {
    LimitCycleSearch s;
    s.settle_time = settle_time;
    s.drive_freq_hz = units::rad_us_to_hz(p.omega_d);
    const auto lc = find_limit_cycle(p, PhaseState::classical(0.0, 0.0), s);
    a.cycle = lc;
    a.spacing_hz = lc.spacing_hz();
    for (const auto& z : sample_orbit(p, lc, samples, 1e-11).states) a.states.push_back(z);
  } catch (const Error&) {
    a.states.push_back(advance_classical(p, PhaseState::classical(0.0, 0.0), settle_time, 1e-10).zeta);
  }
  return a;
}

inline CoherenceRun run_coherence(const SystemParams& p, const CoherenceProtocol& pr, unsigned workers = 1,
                                  const Attractor* known = nullptr) {
  CoherenceRun run;
  run.scaled = scale_params(p, pr.scale);
  EnsembleSpec spec = pr.ensemble;
  if (!(spec.dt > 0.0)) spec.dt = resolved_step(run.scaled, spec.sample_dt);

  Attractor local;
  if (!known) local = find_attractor(p, pr.settle_time, pr.orbit_samples);
  const Attractor& att = known ? *known : local;
  run.on_limit_cycle = att.cycle.has_value();
  run.spacing_hz = att.spacing_hz;
  const double root_k = std::sqrt(pr.scale);
  spec.initial_states.clear();
  if (pr.orbit_start && att.states.size() > 1) {
    for (const auto& z : att.states) spec.initial_states.push_back(root_k * z);
  } else {
    spec.z0 = PhaseState(root_k * att.states.front());
  }

  run.corr = simulate_correlations(run.scaled, spec, pr.correlation, workers, pr.throw_if_not_steady);
  run.filtered = apply_filter(run.corr, run.scaled.kappa, pr.filter);
  run.g1 = g1_and_coherence(run.filtered, pr.coherence);
  run.t_coh_scaled = run.g1.t_coh;
  run.t_coh_unscaled = run.g1.t_coh / pr.scale;
  return run;
}

/// Floquet phase-diffusion estimate at an unscaled comb point.
struct FloquetEstimate {
  LimitCycle cycle;
  FloquetSystem system;
  PhaseDiffusion diffusion;
};

inline FloquetEstimate floquet_estimate(const SystemParams& p, double settle_time = 20.0,
                                        const FloquetOptions& opt = {}) {
  LimitCycleSearch s;
  s.settle_time = settle_time;
  s.drive_freq_hz = units::rad_us_to_hz(p.omega_d);
  FloquetEstimate e;
  e.cycle = find_limit_cycle(p, PhaseState::classical(0.0, 0.0), s);
  e.system = floquet_eigensystem(fundamental_matrix(p, e.cycle, opt), p);
  e.diffusion = phase_diffusion(e.system, p);
  return e;
}

}  // namespace kerrcomb
