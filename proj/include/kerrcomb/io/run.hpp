#pragma once

// Subcommand dispatch: each subcommand maps the configured sweep onto one
// analysis module and writes a result bundle (CSV artifacts, result.json,
// errors.csv, manifest.json, optional SVG plots) into the output directory.

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerrcomb/calibration.hpp"
#include "kerrcomb/coherence.hpp"
#include "kerrcomb/dynamics.hpp"
#include "kerrcomb/floquet.hpp"
#include "kerrcomb/io/config.hpp"
#include "kerrcomb/io/csv.hpp"
#include "kerrcomb/io/svg.hpp"
#include "kerrcomb/parallel.hpp"
#include "kerrcomb/protocol.hpp"
#include "kerrcomb/steady.hpp"

namespace kerrcomb::io {

inline constexpr const char* kVersion = "1.0.0";

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> s = {"fixed-points", "phase-diagram", "spectrum", "lyapunov", "sde-g1",
                                             "tcoh-sweep",   "floquet",       "kerr-fit", "ringdown"};
  return s;
}

struct Bundle {
  std::string subcommand;
  std::map<std::string, CsvTable> tables;  // artifact name (without extension) -> table
  json result = json::object();
  CsvTable errors{{"cell", "power_dbm", "delta_da_hz", "delta_db_hz", "code", "message"}, {}};

  CsvTable& table(const std::string& name, std::vector<std::string> header) {
    auto [it, fresh] = tables.try_emplace(name);
    if (fresh) it->second.header = std::move(header);
    return it->second;
  }
};

struct CellPoint {
  std::size_t index = 0;
  double power_dbm = 0.0, delta_da_hz = 0.0, delta_db_hz = 0.0;
};

inline std::vector<CellPoint> cells(const RunConfig& rc) {
  std::vector<CellPoint> out;
  for (double pw : rc.powers_dbm)
    for (double da : rc.deltas_da_hz)
      for (double db : rc.deltas_db_hz) out.push_back({out.size(), pw, da, db});
  return out;
}

/// Optional per-cell progress hook, called as (cells done, total cells).
inline std::function<void(std::size_t, std::size_t)>& progress_hook() {
  static std::function<void(std::size_t, std::size_t)> hook;
  return hook;
}

namespace detail {

inline std::string code_of(const std::exception& e) {
  if (const auto* k = dynamic_cast<const Error*>(&e)) return std::string(to_string(k->code()));
  return "INTERNAL";
}

/// Per-cell evaluation with failures collected instead of aborting the sweep.
/// Rows are appended in cell order so the output does not depend on scheduling.
template <class Fn>
void sweep(const RunConfig& rc, Bundle& b, unsigned workers, Fn&& fn) {
  const auto cs = cells(rc);
  std::vector<std::vector<std::pair<std::string, std::vector<Cell>>>> rows(cs.size());
  std::vector<std::string> err_code(cs.size()), err_msg(cs.size());
  std::atomic<std::size_t> done{0};
  std::mutex report;
  parallel_for(cs.size(), workers, [&](std::size_t i) {
    try {
      fn(cs[i], rc.cell(cs[i].power_dbm, cs[i].delta_da_hz, cs[i].delta_db_hz), rows[i]);
    } catch (const std::exception& e) {
      err_code[i] = code_of(e);
      err_msg[i] = e.what();
    }
    const std::size_t k = ++done;
    if (progress_hook()) {
      std::lock_guard lock(report);
      progress_hook()(k, cs.size());
    }
  });
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (!err_code[i].empty()) {
      b.errors.add({static_cast<long long>(i), cs[i].power_dbm, cs[i].delta_da_hz, cs[i].delta_db_hz, err_code[i],
                    err_msg[i]});
      continue;
    }
    for (auto& [name, row] : rows[i]) b.tables.at(name).add(std::move(row));
  }
}

inline std::vector<Cell> cell_prefix(const CellPoint& c) {
  return {static_cast<long long>(c.index), c.power_dbm, c.delta_da_hz, c.delta_db_hz};
}

inline std::vector<std::string> with_prefix(std::vector<std::string> tail) {
  std::vector<std::string> h = {"cell", "power_dbm", "delta_da_hz", "delta_db_hz"};
  h.insert(h.end(), tail.begin(), tail.end());
  return h;
}

inline std::vector<Cell> join(std::vector<Cell> a, const std::vector<Cell>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

inline EnsembleSpec ensemble_from(const json& s, std::uint64_t seed) {
  EnsembleSpec e;
  e.n_traj = s.value("n_traj", 2000);
  e.dt = s.value("dt_us", 0.0);
  e.t_ss = s.value("t_ss_us", 0.03);
  e.t_w = s.value("t_w_us", 0.25);
  e.sample_dt = s.value("sample_dt_us", 5e-4);
  e.seed = seed;
  e.divergence_factor = s.value("divergence_factor", 1e3);
  e.scheme = s.value("scheme", std::string("exponential-euler")) == "euler-maruyama" ? SdeScheme::EulerMaruyama
                                                                                    : SdeScheme::ExponentialEuler;
  return e;
}

inline CoherenceProtocol protocol_from(const RunConfig& rc) {
  const json& s = rc.section("sde");
  const json& f = rc.section("filter");
  const json& c = rc.section("coherence");
  CoherenceProtocol pr;
  pr.scale = s.value("scale", 0.01);
  pr.ensemble = ensemble_from(s, rc.seed);
  pr.correlation.t_a = s.value("t_a_us", 0.2);
  pr.correlation.start_spacing = s.value("start_spacing_us", 0.0);
  pr.correlation.batches = s.value("batches", 20);
  pr.correlation.check_steady = s.value("steady_check", true);
  pr.orbit_start = s.value("orbit_start", true);
  if (f.value("all_pass", false)) {
    pr.filter = FilterSpec::all_pass(f.value("f_dc_hz", 0.0), f.value("output_dt_us", pr.ensemble.sample_dt));
  } else {
    pr.filter.f_dc_hz = f.value("f_dc_hz", pr.filter.f_dc_hz);
    pr.filter.bandwidth_hz = f.value("bandwidth_hz", pr.filter.bandwidth_hz);
    pr.filter.output_dt_us = f.value("output_dt_us", pr.filter.output_dt_us);
  }
  if (f.contains("sideband_hz")) pr.filter.sideband_hz = f.at("sideband_hz").get<double>();
  pr.coherence.model = c.value("model", std::string("exp")) == "exp+gauss" ? EnvelopeModel::ExpPlusGauss
                                                                          : EnvelopeModel::Exponential;
  pr.coherence.skip_sigmas = c.value("skip_sigmas", pr.coherence.skip_sigmas);
  pr.coherence.floor = c.value("floor", pr.coherence.floor);
  pr.coherence.r2_min = c.value("r2_min", pr.coherence.r2_min);
  return pr;
}

inline CombSpectrum spectrum_at(const SystemParams& p, const json& s) {
  const double settle = s.value("settle_us", 20.0), record = s.value("record_us", 4.0);
  const double dt = s.value("sample_dt_us", 1e-3), tol = s.value("tol", 1e-10);
  const auto tr = integrate_classical(p, PhaseState::classical(0.0, 0.0), settle + record, tol, dt, settle);
  return comb_spectrum(tr, settle, units::rad_us_to_hz(p.omega_d));
}

// ---------------------------------------------------------------------------
// subcommands

inline void run_fixed_points(const RunConfig& rc, Bundle& b, unsigned workers) {
  b.table("fixed_points", with_prefix({"eta", "root", "n", "alpha_re", "alpha_im", "beta_re", "beta_im", "stable",
                                       "max_re_eig"}));
  sweep(rc, b, workers, [](const CellPoint& c, const SystemParams& p, auto& rows) {
    const auto ss = steady_states(p);
    long long k = 0;
    for (const auto& fp : ss.points)
      rows.push_back({"fixed_points", join(cell_prefix(c), {p.eta, k++, fp.n, fp.alpha_bar.real(), fp.alpha_bar.imag(),
                                                            fp.beta_bar.real(), fp.beta_bar.imag(),
                                                            static_cast<long long>(fp.stable()), fp.max_real_eig()})});
  });
}

inline void run_phase_diagram(const RunConfig& rc, Bundle& b, unsigned workers) {
  DetuningGrid g;
  g.da_min_hz = rc.deltas_da_hz.front();
  g.da_max_hz = rc.deltas_da_hz.back();
  g.da_count = static_cast<int>(rc.deltas_da_hz.size());
  g.db_min_hz = rc.deltas_db_hz.front();
  g.db_max_hz = rc.deltas_db_hz.back();
  g.db_count = static_cast<int>(rc.deltas_db_hz.size());
  g.powers_dbm = rc.powers_dbm;
  auto grid_cells = phase_diagram(g, rc.base, rc.calibration, workers);
  const json& opt = rc.section("phase_diagram");
  if (opt.value("comb_spacing", false)) {
    json spec = rc.section("spectrum");
    if (opt.contains("settle_us")) spec["settle_us"] = opt.at("settle_us");
    parallel_for(grid_cells.size(), workers, [&](std::size_t i) {
      auto& c = grid_cells[i];
      if (!c.error.empty() || c.cls.label != PhaseLabel::NoSfpSubset) return;
      // spacing at the strongest drive of the sweep that leaves no stable fixed point
      for (auto it = rc.powers_dbm.rbegin(); it != rc.powers_dbm.rend(); ++it) {
        SystemParams p = rc.base;
        p.set_detunings(units::hz_to_rad_us(c.delta_da_hz), units::hz_to_rad_us(c.delta_db_hz));
        p.eta = rc.calibration.eta(*it, p);
        if (steady_states(p).stable_count() > 0) continue;
        try {
          const auto s = spectrum_at(p, spec);
          if (s.is_comb()) c.comb_spacing_hz = s.spacing_hz;
        } catch (const std::exception&) {
        }
        break;
      }
    });
  }
  auto& t = b.table("phase_diagram", {"i", "j", "delta_da_hz", "delta_db_hz", "power_dbm_min", "power_dbm_max", "label",
                                      "fp_min", "fp_max", "sfp_min", "sfp_max", "comb_spacing_hz"});
  std::map<std::string, long long> counts;
  for (const auto& c : grid_cells) {
    if (!c.error.empty()) {
      b.errors.add({static_cast<long long>(c.i * g.db_count + c.j), std::numeric_limits<double>::quiet_NaN(),
                    c.delta_da_hz, c.delta_db_hz, "CELL_FAILED", c.error});
      continue;
    }
    const std::string label(to_string(c.cls.label));
    ++counts[label];
    t.add({static_cast<long long>(c.i), static_cast<long long>(c.j), c.delta_da_hz, c.delta_db_hz,
           c.cls.power_dbm_min, c.cls.power_dbm_max, label, static_cast<long long>(c.cls.fp_min), static_cast<long long>(c.cls.fp_max),
           static_cast<long long>(c.cls.sfp_min), static_cast<long long>(c.cls.sfp_max), c.comb_spacing_hz});
  }
  b.result["label_counts"] = counts;
}

inline void run_spectrum(const RunConfig& rc, Bundle& b, unsigned workers) {
  b.table("spectrum_summary", with_prefix({"is_comb", "spacing_hz", "offset_hz", "peaks", "confidence"}));
  b.table("spectrum_peaks", with_prefix({"freq_hz", "power_db", "order"}));
  b.table("spectrum", with_prefix({"freq_hz", "power_db"}));
  const json spec = rc.section("spectrum");
  sweep(rc, b, workers, [&](const CellPoint& c, const SystemParams& p, auto& rows) {
    const auto s = spectrum_at(p, spec);
    rows.push_back({"spectrum_summary", join(cell_prefix(c), {static_cast<long long>(s.is_comb()), s.spacing_hz,
                                                              s.offset_hz, static_cast<long long>(s.peaks.size()),
                                                              s.confidence})});
    for (const auto& pk : s.peaks)
      rows.push_back({"spectrum_peaks", join(cell_prefix(c), {pk.freq_hz, pk.power_db, static_cast<long long>(pk.order)})});
    for (std::size_t k = 0; k < s.freq_hz.size(); ++k)
      rows.push_back({"spectrum", join(cell_prefix(c), {s.freq_hz[k], s.power_db[k]})});
  });
}

inline void run_lyapunov(const RunConfig& rc, Bundle& b, unsigned workers) {
  b.table("lyapunov", with_prefix({"lambda_m", "lambda_m_over_kappa", "class", "converged", "epsilon"}));
  const json& s = rc.section("lyapunov");
  LyapunovOptions o;
  o.delta_tau = s.value("delta_tau_us", 0.0);
  o.n_p = s.value("n_p", 2000);
  o.transient = s.value("transient_us", 0.0);
  o.tol = s.value("tol", 1e-10);
  sweep(rc, b, workers, [&](const CellPoint& c, const SystemParams& p, auto& rows) {
    const auto r = max_lyapunov(p, PhaseState::classical(0.0, 0.0), o);
    rows.push_back({"lyapunov", join(cell_prefix(c), {r.lambda_m, r.lambda_m / p.kappa, std::string(to_string(r.cls)),
                                                      static_cast<long long>(r.converged), r.epsilon})});
  });
}

inline void run_sde_g1(const RunConfig& rc, Bundle& b, unsigned workers) {
  b.table("g1", with_prefix({"tau_us", "g1", "envelope_fit"}));
  b.table("sde_summary", with_prefix({"scale", "t_coh_scaled_us", "t_coh_us", "r2", "fit_poor", "fit_peaks",
                                      "excluded_fraction", "n_used", "n_spiked", "steady", "steady_score",
                                      "sideband_hz", "on_limit_cycle"}));
  const auto pr = protocol_from(rc);
  // trajectories are the parallel dimension here; cells run one after another
  sweep(rc, b, 1, [&](const CellPoint& c, const SystemParams& p, auto& rows) {
    const auto run = run_coherence(p, pr, workers);
    const auto& g = run.g1;
    double a0 = 0.0;
    if (g.fit_count >= 1 && std::isfinite(g.t_coh)) a0 = std::log(g.peak_abs.front()) + g.peak_tau.front() / g.t_coh;
    for (std::size_t k = 0; k < g.tau.size(); ++k) {
      const double env = std::isfinite(g.t_coh) && g.fit_count > 0 ? std::exp(a0 - g.tau[k] / g.t_coh)
                                                                   : std::numeric_limits<double>::quiet_NaN();
      rows.push_back({"g1", join(cell_prefix(c), {g.tau[k], g.g1[k], env})});
    }
    rows.push_back({"sde_summary",
                    join(cell_prefix(c), {pr.scale, run.t_coh_scaled, run.t_coh_unscaled, g.r2,
                                          static_cast<long long>(g.fit_poor), static_cast<long long>(g.fit_count),
                                          run.excluded_fraction(), static_cast<long long>(run.corr.n_used),
                                          static_cast<long long>(run.corr.n_spiked),
                                          static_cast<long long>(run.corr.steady), run.corr.steady_score,
                                          run.filtered.sideband_hz, static_cast<long long>(run.on_limit_cycle)})});
  });
}

inline void run_tcoh_sweep(const RunConfig& rc, Bundle& b, unsigned workers) {
  const json& s = rc.section("tcoh_sweep");
  const auto scales = s.at("scales").get<std::vector<double>>();
  const auto c0 = cells(rc).front();
  SystemParams p = rc.cell(c0.power_dbm, c0.delta_da_hz, c0.delta_db_hz);
  if (s.contains("gamma_phi_hz")) p.gamma_phi = units::hz_to_rad_us(s.at("gamma_phi_hz").get<double>());
  auto pr = protocol_from(rc);
  const auto att = find_attractor(p, pr.settle_time, pr.orbit_samples);
  auto& t = b.table("tcoh_sweep", {"scale", "lambda_hz", "t_coh_us", "r2", "fit_poor", "excluded_fraction"});
  std::vector<TcohPoint> pts;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    pr.scale = scales[i];
    try {
      const auto run = run_coherence(p, pr, workers, &att);
      const double lam = run.scaled.Lambda;
      t.add({scales[i], units::rad_us_to_hz(lam), run.t_coh_scaled, run.g1.r2,
             static_cast<long long>(run.g1.fit_poor), run.excluded_fraction()});
      if (std::isfinite(run.t_coh_scaled) && run.t_coh_scaled > 0.0) pts.push_back({lam, run.t_coh_scaled});
    } catch (const std::exception& e) {
      b.errors.add({static_cast<long long>(i), c0.power_dbm, c0.delta_da_hz, c0.delta_db_hz, code_of(e), e.what()});
    }
  }
  try {
    const auto law = fit_tcoh_law(pts, p.gamma_phi);
    b.result["law"] = {{"a", law.a}, {"b", law.b}, {"gamma_phi", law.gamma_phi},
                       {"rms_rel_residual", law.rms_rel_residual}};
  } catch (const std::exception& e) {
    b.result["law"] = {{"error", code_of(e)}, {"message", e.what()}};
  }
}

inline void run_floquet(const RunConfig& rc, Bundle& b, unsigned workers) {
  b.table("floquet", with_prefix({"period_us", "spacing_hz", "mu1_re", "mu1_im", "mu2_re", "mu2_im", "mu3_re",
                                  "mu3_im", "mu0_t", "biorthogonality_error", "max_velocity_angle", "r_eff",
                                  "delta_n", "t_coh_us", "delta_n_modulus", "t_coh_modulus_us", "imag_fraction"}));
  const json& s = rc.section("floquet");
  FloquetOptions fo;
  fo.samples = s.value("samples", 2000);
  fo.tol = s.value("tol", 1e-12);
  const double settle = s.value("settle_us", 20.0);
  sweep(rc, b, workers, [&](const CellPoint& c, const SystemParams& p, auto& rows) {
    if (steady_states(p).stable_count() > 0) throw Error(ErrorCode::NoComb, "stable fixed point present");
    const auto e = floquet_estimate(p, settle, fo);
    const auto& fs = e.system;
    const auto& d = e.diffusion;
    rows.push_back({"floquet", join(cell_prefix(c), {fs.period, 1e6 / fs.period, fs.mu[1].real(), fs.mu[1].imag(),
                                                     fs.mu[2].real(), fs.mu[2].imag(), fs.mu[3].real(), fs.mu[3].imag(),
                                                     fs.phase_exponent_error(), fs.biorthogonality_error,
                                                     fs.max_velocity_angle, d.r_eff, d.delta_n, d.t_coh,
                                                     d.delta_n_modulus, d.t_coh_modulus, d.imag_fraction})});
  });
}

inline void run_kerr_fit(const RunConfig& rc, Bundle& b, unsigned) {
  const json& s = rc.section("kerr_fit");
  const SystemParams base = rc.base;
  PumpSpec pump;
  pump.eta = s.value("pump_eta", 5.0);
  pump.detuning_linewidths = s.value("pump_detuning_linewidths", 5.0);
  std::vector<double> dab_hz;
  if (s.contains("delta_ab_hz")) {
    dab_hz = s.at("delta_ab_hz").get<std::vector<double>>();
  } else {
    for (double r : {1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0}) dab_hz.push_back(r * units::rad_us_to_hz(base.g));
  }
  std::vector<KerrPoint> data;
  std::mt19937_64 rng(rc.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double rel = s.value("noise_rel", 0.0);
  for (std::size_t i = 0; i < dab_hz.size(); ++i) {
    const double dab = units::hz_to_rad_us(dab_hz[i]);
    double lb;
    if (s.contains("lambda_b_hz")) {
      lb = units::hz_to_rad_us(s.at("lambda_b_hz")[i].get<double>());
    } else {
      lb = lambda_b_at(base, dab, pump).value.real();
      lb *= 1.0 + rel * noise(rng);
    }
    data.push_back({dab, lb});
  }
  auto& t = b.table("lambda_b", {"delta_ab_hz", "lambda_b_hz", "model_hz", "n_b"});
  const auto fit = fit_bare_kerr(data, base, pump);
  SystemParams fitted = base;
  fitted.Lambda = fit.lambda;
  for (const auto& d : data) {
    const auto m = lambda_b_at(fitted, d.delta_ab, pump);
    t.add({units::rad_us_to_hz(d.delta_ab), units::rad_us_to_hz(d.lambda_b), units::rad_us_to_hz(m.value.real()), m.n_b});
  }
  b.result["lambda_hz"] = units::rad_us_to_hz(fit.lambda);
  b.result["sigma_hz"] = units::rad_us_to_hz(fit.sigma);
  b.result["ci_2sigma_hz"] = {units::rad_us_to_hz(fit.ci_low), units::rad_us_to_hz(fit.ci_high)};
}

inline void run_ringdown(const RunConfig& rc, Bundle& b, unsigned workers) {
  const json& s = rc.section("ringdown");
  SystemParams base = rc.base;
  base.gamma = units::hz_to_rad_us(s.value("gamma_hz", 20e3));
  base.gamma_phi = units::hz_to_rad_us(s.value("gamma_phi_hz", 50e3));
  base.eta = s.value("eta", 1.0);
  RingdownSchedule sch;
  sch.drive_duration = s.value("drive_duration_us", sch.drive_duration);
  sch.ringdown = s.value("ringdown_us", sch.ringdown);
  sch.sample_dt = s.value("sample_dt_us", sch.sample_dt);
  std::vector<double> dab_hz;
  if (s.contains("delta_ab_hz")) {
    dab_hz = s.at("delta_ab_hz").get<std::vector<double>>();
  } else {
    for (double r : {20.0, 10.0, 5.0, 3.0, 2.0, 1.0}) dab_hz.push_back(r * units::rad_us_to_hz(base.g));
  }
  struct Out {
    RingdownTraces tr;
    DephasingFit fit;
    RingdownRates eig;
    std::string err;
  };
  std::vector<Out> out(dab_hz.size());
  parallel_for(dab_hz.size(), workers, [&](std::size_t i) {
    try {
      SystemParams p = base;
      p.omega_b = p.omega_a - units::hz_to_rad_us(dab_hz[i]);
      p.omega_d = polariton_modes(p).nu_a;  // drive the cavity-like polariton on resonance
      out[i].tr = ringdown_simulate(p, sch);
      out[i].fit = extract_dephasing(out[i].tr);
      out[i].eig = ringdown_rates(p);
    } catch (const std::exception& e) {
      out[i].err = e.what();
    }
  });
  auto& tr = b.table("ringdown_traces", {"delta_ab_hz", "t_us", "i_a", "a_re", "a_im", "n_a", "n_b"});
  auto& rt = b.table("ringdown_rates", {"delta_ab_hz", "lambda1", "lambda2", "gamma_phi_a_hz", "lambda1_eig",
                                        "lambda2_eig", "gamma_phi_a_eig_hz", "fit_poor"});
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!out[i].err.empty()) {
      b.errors.add({static_cast<long long>(i), std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0, "RINGDOWN", out[i].err});
      continue;
    }
    const auto& o = out[i];
    for (std::size_t k = 0; k < o.tr.t.size(); ++k)
      tr.add({dab_hz[i], o.tr.t[k], o.tr.i_a(k), o.tr.alpha(k).real(), o.tr.alpha(k).imag(), o.tr.n_a(k),
              o.tr.v[k][5].real()});
    rt.add({dab_hz[i], o.fit.lambda1, o.fit.lambda2, units::rad_us_to_hz(o.fit.gamma_phi_a), o.eig.lambda1,
            o.eig.lambda2, units::rad_us_to_hz(o.eig.gamma_phi_a), static_cast<long long>(o.fit.fit_poor)});
  }
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Evaluate a subcommand in memory.
inline Bundle compute(const std::string& subcommand, const RunConfig& rc) {
  Bundle b;
  b.subcommand = subcommand;
  const unsigned w = rc.workers;
  if (subcommand == "fixed-points") detail::run_fixed_points(rc, b, w);
  else if (subcommand == "phase-diagram") detail::run_phase_diagram(rc, b, w);
  else if (subcommand == "spectrum") detail::run_spectrum(rc, b, w);
  else if (subcommand == "lyapunov") detail::run_lyapunov(rc, b, w);
  else if (subcommand == "sde-g1") detail::run_sde_g1(rc, b, w);
  else if (subcommand == "tcoh-sweep") detail::run_tcoh_sweep(rc, b, w);
  else if (subcommand == "floquet") detail::run_floquet(rc, b, w);
  else if (subcommand == "kerr-fit") detail::run_kerr_fit(rc, b, w);
  else if (subcommand == "ringdown") detail::run_ringdown(rc, b, w);
  else throw ConfigError("/", "unknown subcommand '" + subcommand + "'");
  return b;
}

// ---------------------------------------------------------------------------
// Plots

/// Render the SVG analogue of a bundle from the CSV artifacts in `dir`.
inline std::vector<std::string> emit_plots(const std::string& dir, const std::string& subcommand) {
  namespace fs = std::filesystem;
  auto path = [&](const std::string& n) { return (fs::path(dir) / n).string(); };
  std::vector<std::string> written;
  auto save = [&](const std::string& name, const std::string& svg) {
    svg::write_file(path(name), svg);
    written.push_back(name);
  };
  auto by_cell = [](const CsvData& d, const std::string& xcol, const std::string& ycol) {
    std::vector<svg::Series> out;
    if (d.rows.empty()) return out;
    const auto cell = d.numbers("cell");
    const auto x = d.numbers(xcol), y = d.numbers(ycol);
    for (std::size_t i = 0; i < cell.size(); ++i) {
      if (out.empty() || out.back().name != "cell " + std::to_string(static_cast<long long>(cell[i])))
        out.push_back({"cell " + std::to_string(static_cast<long long>(cell[i])), {}, {}});
      out.back().x.push_back(x[i]);
      out.back().y.push_back(y[i]);
    }
    return out;
  };
  auto vs_power = [&](const CsvData& d, const std::string& ycol) {
    svg::Series s{ycol, {}, {}};
    if (!d.rows.empty()) {
      s.x = d.numbers("power_dbm");
      s.y = d.numbers(ycol);
    }
    return std::vector<svg::Series>{s};
  };

  if (subcommand == "phase-diagram") {
    const auto d = read_csv(path("phase_diagram.csv"));
    svg::Heatmap h;
    h.colorbar_label = "spacing (MHz)";
    if (!d.rows.empty()) {
      const auto i = d.numbers("i"), j = d.numbers("j"), da = d.numbers("delta_da_hz"), db = d.numbers("delta_db_hz");
      const auto sp = d.numbers("comb_spacing_hz");
      const auto lab = d.strings("label");
      std::size_t ni = 0, nj = 0;
      for (std::size_t k = 0; k < i.size(); ++k) {
        ni = std::max(ni, static_cast<std::size_t>(i[k]) + 1);
        nj = std::max(nj, static_cast<std::size_t>(j[k]) + 1);
      }
      h.x.assign(ni, std::numeric_limits<double>::quiet_NaN());
      h.y.assign(nj, std::numeric_limits<double>::quiet_NaN());
      h.value.assign(ni * nj, std::numeric_limits<double>::quiet_NaN());
      h.category.assign(ni * nj, "");
      for (std::size_t k = 0; k < i.size(); ++k) {
        const auto a = static_cast<std::size_t>(i[k]), c = static_cast<std::size_t>(j[k]);
        h.x[a] = da[k] / 1e6;
        h.y[c] = db[k] / 1e6;
        h.value[a * nj + c] = sp[k] / 1e6;
        h.category[a * nj + c] = lab[k];
      }
    }
    save("phase_diagram.svg", svg::heatmap(h, "Phase diagram", "Delta_da/2pi (MHz)", "Delta_db/2pi (MHz)"));
  } else if (subcommand == "fixed-points") {
    const auto d = read_csv(path("fixed_points.csv"));
    save("fixed_points.svg", svg::line_plot(vs_power(d, "n"), "Fixed points", "P (dBm)", "|beta|^2"));
  } else if (subcommand == "spectrum") {
    const auto d = read_csv(path("spectrum.csv"));
    save("spectrum.svg", svg::line_plot(by_cell(d, "freq_hz", "power_db"), "Output spectrum", "f (Hz)", "dB"));
  } else if (subcommand == "lyapunov") {
    const auto d = read_csv(path("lyapunov.csv"));
    save("lyapunov.svg", svg::line_plot(vs_power(d, "lambda_m_over_kappa"), "Maximal Lyapunov exponent", "P (dBm)",
                                        "lambda_M / kappa"));
  } else if (subcommand == "sde-g1") {
    const auto d = read_csv(path("g1.csv"));
    save("g1.svg", svg::line_plot(by_cell(d, "tau_us", "g1"), "G1(tau)", "tau (us)", "G1"));
  } else if (subcommand == "tcoh-sweep") {
    const auto d = read_csv(path("tcoh_sweep.csv"));
    svg::Series s{"T_coh", {}, {}};
    if (!d.rows.empty()) {
      s.x = d.numbers("lambda_hz");
      s.y = d.numbers("t_coh_us");
    }
    save("tcoh_sweep.svg", svg::line_plot({s}, "Coherence time vs nonlinearity", "Lambda/2pi (Hz)", "T_coh (us)"));
  } else if (subcommand == "floquet") {
    const auto d = read_csv(path("floquet.csv"));
    save("floquet.svg", svg::line_plot(vs_power(d, "t_coh_us"), "Floquet coherence time", "P (dBm)", "T_coh (us)"));
  } else if (subcommand == "kerr-fit") {
    const auto d = read_csv(path("lambda_b.csv"));
    svg::Series m{"data", {}, {}}, f{"model", {}, {}};
    if (!d.rows.empty()) {
      m.x = f.x = d.numbers("delta_ab_hz");
      m.y = d.numbers("lambda_b_hz");
      f.y = d.numbers("model_hz");
    }
    save("lambda_b.svg", svg::line_plot({m, f}, "Effective Kerr constant", "Delta_ab/2pi (Hz)", "Lambda_b/2pi (Hz)"));
  } else if (subcommand == "ringdown") {
    const auto d = read_csv(path("ringdown_traces.csv"));
    std::vector<svg::Series> s;
    if (!d.rows.empty()) {
      const auto dab = d.numbers("delta_ab_hz"), t = d.numbers("t_us"), n = d.numbers("n_a");
      for (std::size_t i = 0; i < dab.size(); ++i) {
        char name[48];
        std::snprintf(name, sizeof name, "Delta_ab %.4g MHz", dab[i] / 1e6);
        if (s.empty() || s.back().name != name) s.push_back({name, {}, {}});
        s.back().x.push_back(t[i]);
        s.back().y.push_back(n[i] > 0 ? std::log10(n[i]) : std::numeric_limits<double>::quiet_NaN());
      }
    }
    save("ringdown.svg", svg::line_plot(s, "Ringdown of <a^dag a>", "t (us)", "log10 <a^dag a>"));
  } else {
    throw Error(ErrorCode::MissingArtifact, "no plot defined for '" + subcommand + "'");
  }
  return written;
}

// ---------------------------------------------------------------------------
// Bundle output

struct RunReport {
  std::vector<std::string> artifacts;
  std::size_t failures = 0;
};

/// Compute and persist a bundle. The manifest records what is needed to rerun it.
inline RunReport run(const std::string& subcommand, const RunConfig& rc, const std::string& out_dir, bool plot) {
  namespace fs = std::filesystem;
  const std::string started = detail::utc_now();
  fs::create_directories(out_dir);
  const Bundle b = compute(subcommand, rc);
  RunReport rep;
  json files = json::object();
  for (const auto& [name, table] : b.tables) {
    const std::string file = name + ".csv";
    const std::string text = table.str();
    svg::write_file((fs::path(out_dir) / file).string(), text);
    files[file] = fnv1a_hex(text);
    rep.artifacts.push_back(file);
  }
  {
    const std::string text = b.errors.str();
    svg::write_file((fs::path(out_dir) / "errors.csv").string(), text);
    files["errors.csv"] = fnv1a_hex(text);
    rep.failures = b.errors.rows.size();
  }
  {
    const std::string text = b.result.dump(2) + "\n";
    svg::write_file((fs::path(out_dir) / "result.json").string(), text);
    files["result.json"] = fnv1a_hex(text);
  }
  if (plot)
    for (const auto& f : emit_plots(out_dir, subcommand)) {
      std::ifstream in(fs::path(out_dir) / f, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      files[f] = fnv1a_hex(ss.str());
      rep.artifacts.push_back(f);
    }
  json manifest = {{"tool", "kerrcomb"},
                   {"version", kVersion},
                   {"subcommand", subcommand},
                   {"config", rc.doc},
                   {"config_hash", fnv1a_hex(rc.doc.dump())},
                   {"seed", rc.seed},
                   {"workers", rc.workers},
                   {"started_utc", started},
                   {"finished_utc", detail::utc_now()},
                   {"failures", rep.failures},
                   {"artifacts", files}};
  svg::write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
  return rep;
}

/// Machine-readable error record.
inline json error_json(const std::exception& e) {
  json j = {{"error", {{"code", detail::code_of(e)}, {"message", e.what()}}}};
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) j["error"]["path"] = c->path();
  return j;
}

}  // namespace kerrcomb::io
