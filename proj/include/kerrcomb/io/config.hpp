#pragma once

// Run configuration: a JSON document with nested tables, validated against a
// fixed schema before any computation. Frequencies are in Hz, powers in dBm,
// times in microseconds.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerrcomb/error.hpp"
#include "kerrcomb/model.hpp"
#include "kerrcomb/steady.hpp"
#include "kerrcomb/units.hpp"

namespace kerrcomb::io {

using json = nlohmann::json;

/// Validation failure with the JSON-pointer path of the offending value.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(ErrorCode::Config, path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// ---------------------------------------------------------------------------
// Schema

enum class Kind { Number, Integer, Boolean, String, Object, NumberArray, Axis };

struct Field {
  Kind kind;
  bool required = false;
  double min = -std::numeric_limits<double>::infinity();
  double max = std::numeric_limits<double>::infinity();
  std::vector<std::string> choices = {};
  const std::map<std::string, Field>* table = nullptr;
};

using Table = std::map<std::string, Field>;

namespace detail {

inline std::string kind_name(Kind k) {
  switch (k) {
    case Kind::Number: return "number";
    case Kind::Integer: return "integer";
    case Kind::Boolean: return "boolean";
    case Kind::String: return "string";
    case Kind::Object: return "object";
    case Kind::NumberArray: return "array of numbers";
    case Kind::Axis: return "axis ({min, max, count} or {values} or a number)";
  }
  return "?";
}

inline void check_range(const std::string& path, double v, const Field& f) {
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  if (v < f.min || v > f.max) {
    std::ostringstream os;
    os << "value " << v << " outside [" << f.min << ", " << f.max << "]";
    throw ConfigError(path, os.str());
  }
}

inline void validate_axis(const std::string& path, const json& v, const Field& f) {
  if (v.is_number()) return check_range(path, v.get<double>(), f);
  if (!v.is_object()) throw ConfigError(path, "expected " + kind_name(Kind::Axis));
  if (v.contains("values")) {
    if (v.size() != 1) throw ConfigError(path, "'values' excludes other keys");
    const auto& a = v.at("values");
    if (!a.is_array() || a.empty()) throw ConfigError(path + "/values", "expected a non-empty array of numbers");
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (!a[i].is_number()) throw ConfigError(path + "/values/" + std::to_string(i), "expected number");
      check_range(path + "/values/" + std::to_string(i), a[i].get<double>(), f);
    }
    return;
  }
  for (const auto& [k, _] : v.items())
    if (k != "min" && k != "max" && k != "count") throw ConfigError(path + "/" + k, "unknown key");
  for (const char* k : {"min", "max", "count"})
    if (!v.contains(k)) throw ConfigError(path + "/" + k, "required");
  if (!v.at("min").is_number() || !v.at("max").is_number())
    throw ConfigError(path, "min and max must be numbers");
  if (!v.at("count").is_number_integer() || v.at("count").get<long>() < 1)
    throw ConfigError(path + "/count", "expected integer >= 1");
  const double lo = v.at("min").get<double>(), hi = v.at("max").get<double>();
  check_range(path + "/min", lo, f);
  check_range(path + "/max", hi, f);
  if (v.at("count").get<long>() > 1 && !(hi > lo)) throw ConfigError(path, "degenerate range: max must exceed min");
}

inline void validate_table(const std::string& path, const json& v, const Table& t) {
  if (!v.is_object()) throw ConfigError(path.empty() ? "/" : path, "expected object");
  for (const auto& [k, _] : v.items())
    if (!t.count(k)) throw ConfigError(path + "/" + k, "unknown key");
  for (const auto& [k, f] : t) {
    const std::string p = path + "/" + k;
    if (!v.contains(k)) {
      if (f.required) throw ConfigError(p, "required");
      continue;
    }
    const json& x = v.at(k);
    switch (f.kind) {
      case Kind::Number:
        if (!x.is_number()) throw ConfigError(p, "expected number");
        check_range(p, x.get<double>(), f);
        break;
      case Kind::Integer:
        if (!x.is_number_integer()) throw ConfigError(p, "expected integer");
        check_range(p, static_cast<double>(x.get<long long>()), f);
        break;
      case Kind::Boolean:
        if (!x.is_boolean()) throw ConfigError(p, "expected boolean");
        break;
      case Kind::String:
        if (!x.is_string()) throw ConfigError(p, "expected string");
        if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), x.get<std::string>()) == f.choices.end()) {
          std::string all;
          for (const auto& c : f.choices) all += (all.empty() ? "" : ", ") + c;
          throw ConfigError(p, "expected one of {" + all + "}");
        }
        break;
      case Kind::Object:
        validate_table(p, x, *f.table);
        break;
      case Kind::NumberArray:
        if (!x.is_array() || x.empty()) throw ConfigError(p, "expected a non-empty array of numbers");
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (!x[i].is_number()) throw ConfigError(p + "/" + std::to_string(i), "expected number");
          check_range(p + "/" + std::to_string(i), x[i].get<double>(), f);
        }
        break;
      case Kind::Axis:
        validate_axis(p, x, f);
        break;
    }
  }
}

}  // namespace detail

constexpr double kInf = std::numeric_limits<double>::infinity();

inline const Table& params_schema() {
  static const Table t = {
      {"omega_a_hz", {Kind::Number, true, 0.0}},  {"omega_b_hz", {Kind::Number, true, 0.0}},
      {"omega_d_hz", {Kind::Number, true, 0.0}},  {"g_hz", {Kind::Number, true, 0.0}},
      {"Lambda_hz", {Kind::Number, true, 0.0}},   {"kappa_hz", {Kind::Number, true, 0.0}},
      {"gamma_hz", {Kind::Number, false, 0.0}},   {"gamma_phi_hz", {Kind::Number, false, 0.0}},
  };
  return t;
}

inline const Table& sweep_schema() {
  static const Table t = {
      {"power_dbm", {Kind::Axis, false, -250.0, 50.0}},
      {"delta_da_hz", {Kind::Axis}},
      {"delta_db_hz", {Kind::Axis}},
      {"eta", {Kind::Number, false, 0.0}},  // fixed drive amplitude replacing the power axis
  };
  return t;
}

inline const Table& spectrum_schema() {
  static const Table t = {
      {"settle_us", {Kind::Number, false, 0.0}},
      {"record_us", {Kind::Number, false, 1e-3}},
      {"sample_dt_us", {Kind::Number, false, 1e-6, 1.0}},
      {"tol", {Kind::Number, false, 1e-15, 1e-3}},
  };
  return t;
}

inline const Table& lyapunov_schema() {
  static const Table t = {
      {"delta_tau_us", {Kind::Number, false, 0.0}},
      {"n_p", {Kind::Integer, false, 10.0, 1e7}},
      {"transient_us", {Kind::Number, false, 0.0}},
      {"tol", {Kind::Number, false, 1e-15, 1e-3}},
  };
  return t;
}

inline const Table& phase_diagram_schema() {
  static const Table t = {
      {"comb_spacing", {Kind::Boolean}},
      {"settle_us", {Kind::Number, false, 0.0}},
  };
  return t;
}

inline const Table& sde_schema() {
  static const Table t = {
      {"scale", {Kind::Number, false, 1e-9, 1.0}},
      {"n_traj", {Kind::Integer, false, 1.0, 1e8}},
      {"dt_us", {Kind::Number, false, 1e-9, 1.0}},
      {"t_ss_us", {Kind::Number, false, 0.0}},
      {"t_w_us", {Kind::Number, false, 1e-6}},
      {"t_a_us", {Kind::Number, false, 1e-6}},
      {"sample_dt_us", {Kind::Number, false, 1e-9}},
      {"start_spacing_us", {Kind::Number, false, 0.0}},
      {"batches", {Kind::Integer, false, 2.0, 1e6}},
      {"scheme", {Kind::String, false, -kInf, kInf, {"exponential-euler", "euler-maruyama"}}},
      {"orbit_start", {Kind::Boolean}},
      {"steady_check", {Kind::Boolean}},
      {"divergence_factor", {Kind::Number, false, 1.0}},
  };
  return t;
}

inline const Table& filter_schema() {
  static const Table t = {
      {"f_dc_hz", {Kind::Number, false, 0.0}},
      {"bandwidth_hz", {Kind::Number, false, 1.0}},
      {"all_pass", {Kind::Boolean}},
      {"output_dt_us", {Kind::Number, false, 1e-9}},
      {"sideband_hz", {Kind::Number}},
  };
  return t;
}

inline const Table& coherence_schema() {
  static const Table t = {
      {"model", {Kind::String, false, -kInf, kInf, {"exp", "exp+gauss"}}},
      {"skip_sigmas", {Kind::Number, false, 0.0}},
      {"floor", {Kind::Number, false, 0.0, 1.0}},
      {"r2_min", {Kind::Number, false, 0.0, 1.0}},
  };
  return t;
}

inline const Table& tcoh_sweep_schema() {
  static const Table t = {
      {"scales", {Kind::NumberArray, true, 1e-9, 1.0}},
      {"gamma_phi_hz", {Kind::Number, false, 0.0}},
  };
  return t;
}

inline const Table& floquet_schema() {
  static const Table t = {
      {"samples", {Kind::Integer, false, 16.0, 1e6}},
      {"tol", {Kind::Number, false, 1e-15, 1e-6}},
      {"settle_us", {Kind::Number, false, 0.0}},
  };
  return t;
}

inline const Table& kerr_fit_schema() {
  static const Table t = {
      {"delta_ab_hz", {Kind::NumberArray}},
      {"lambda_b_hz", {Kind::NumberArray, false, 0.0}},
      {"noise_rel", {Kind::Number, false, 0.0, 1.0}},
      {"pump_eta", {Kind::Number, false, 0.0}},
      {"pump_detuning_linewidths", {Kind::Number}},
  };
  return t;
}

inline const Table& ringdown_schema() {
  static const Table t = {
      {"delta_ab_hz", {Kind::NumberArray}},
      {"gamma_hz", {Kind::Number, false, 0.0}},
      {"gamma_phi_hz", {Kind::Number, false, 0.0}},
      {"eta", {Kind::Number, false, 0.0}},
      {"drive_duration_us", {Kind::Number, false, 0.0}},
      {"ringdown_us", {Kind::Number, false, 1e-6}},
      {"sample_dt_us", {Kind::Number, false, 1e-9}},
  };
  return t;
}

inline const Table& root_schema() {
  static const Table t = {
      {"device", {Kind::String, false, -kInf, kInf, {"A", "B"}}},
      {"params", {Kind::Object, false, -kInf, kInf, {}, &params_schema()}},
      {"gamma_phi_hz", {Kind::Number, false, 0.0}},
      {"power_offset_db", {Kind::Number}},
      {"seed", {Kind::Integer, false, 0.0, 1.8e19}},
      {"workers", {Kind::Integer, false, 1.0, 4096.0}},
      {"output", {Kind::String}},
      {"sweep", {Kind::Object, false, -kInf, kInf, {}, &sweep_schema()}},
      {"spectrum", {Kind::Object, false, -kInf, kInf, {}, &spectrum_schema()}},
      {"lyapunov", {Kind::Object, false, -kInf, kInf, {}, &lyapunov_schema()}},
      {"phase_diagram", {Kind::Object, false, -kInf, kInf, {}, &phase_diagram_schema()}},
      {"sde", {Kind::Object, false, -kInf, kInf, {}, &sde_schema()}},
      {"filter", {Kind::Object, false, -kInf, kInf, {}, &filter_schema()}},
      {"coherence", {Kind::Object, false, -kInf, kInf, {}, &coherence_schema()}},
      {"tcoh_sweep", {Kind::Object, false, -kInf, kInf, {}, &tcoh_sweep_schema()}},
      {"floquet", {Kind::Object, false, -kInf, kInf, {}, &floquet_schema()}},
      {"kerr_fit", {Kind::Object, false, -kInf, kInf, {}, &kerr_fit_schema()}},
      {"ringdown", {Kind::Object, false, -kInf, kInf, {}, &ringdown_schema()}},
  };
  return t;
}

/// Full validation of a parsed document, including cross-field rules.
inline void validate_config(const json& doc) {
  if (doc.is_object() && doc.contains("device") == doc.contains("params"))
    throw ConfigError("/", "exactly one of 'device' or 'params' is required");
  detail::validate_table("", doc, root_schema());
  if (doc.contains("sde")) {
    const auto& s = doc.at("sde");
    const double tw = s.value("t_w_us", 4.0), ta = s.value("t_a_us", 1.0);
    if (ta > tw) throw ConfigError("/sde/t_a_us", "correlation span must not exceed the retained window t_w_us");
  }
  if (doc.contains("sweep") && doc.at("sweep").contains("eta") && doc.at("sweep").contains("power_dbm"))
    throw ConfigError("/sweep/eta", "give either eta or power_dbm, not both");
  if (doc.contains("kerr_fit")) {
    const auto& k = doc.at("kerr_fit");
    if (k.contains("lambda_b_hz")) {
      if (!k.contains("delta_ab_hz")) throw ConfigError("/kerr_fit/delta_ab_hz", "required with lambda_b_hz");
      if (k.at("lambda_b_hz").size() != k.at("delta_ab_hz").size())
        throw ConfigError("/kerr_fit/lambda_b_hz", "length must match delta_ab_hz");
    }
  }
}

// ---------------------------------------------------------------------------
// Typed view

/// Axis values from a validated axis node.
inline std::vector<double> axis_values(const json& v) {
  if (v.is_number()) return {v.get<double>()};
  if (v.contains("values")) return v.at("values").get<std::vector<double>>();
  const double lo = v.at("min").get<double>(), hi = v.at("max").get<double>();
  const long n = v.at("count").get<long>();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

struct RunConfig {
  json doc;                    // validated document, with command-line overrides applied
  SystemParams base;           // drive amplitude left at zero; detunings from the preset
  PowerCalibration calibration;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::string output = "out";
  std::vector<double> powers_dbm;
  std::vector<double> deltas_da_hz;
  std::vector<double> deltas_db_hz;
  std::optional<double> eta;   // overrides the power calibration when set

  /// Section accessor that yields an empty object when absent.
  const json& section(const std::string& name) const {
    static const json empty = json::object();
    return doc.contains(name) ? doc.at(name) : empty;
  }

  /// Params for one sweep cell; the drive frequency of the base parameters is held fixed.
  SystemParams cell(double power_dbm, double delta_da_hz, double delta_db_hz) const {
    SystemParams p = base;
    p.set_detunings(units::hz_to_rad_us(delta_da_hz), units::hz_to_rad_us(delta_db_hz));
    p.eta = eta ? *eta : calibration.eta(power_dbm, p);
    return p;
  }
};

inline SystemParams params_from_json(const json& j) {
  SystemParams p;
  p.omega_a = units::hz_to_rad_us(j.at("omega_a_hz").get<double>());
  p.omega_b = units::hz_to_rad_us(j.at("omega_b_hz").get<double>());
  p.omega_d = units::hz_to_rad_us(j.at("omega_d_hz").get<double>());
  p.g = units::hz_to_rad_us(j.at("g_hz").get<double>());
  p.Lambda = units::hz_to_rad_us(j.at("Lambda_hz").get<double>());
  p.kappa = units::hz_to_rad_us(j.at("kappa_hz").get<double>());
  p.gamma = units::hz_to_rad_us(j.value("gamma_hz", 0.0));
  p.gamma_phi = units::hz_to_rad_us(j.value("gamma_phi_hz", 0.0));
  return p;
}

/// Validate and interpret a configuration document.
inline RunConfig load_config(json doc) {
  validate_config(doc);
  RunConfig rc;
  rc.base = doc.contains("device") ? device_preset(doc.at("device").get<std::string>()).params()
                                   : params_from_json(doc.at("params"));
  if (doc.contains("gamma_phi_hz")) rc.base.gamma_phi = units::hz_to_rad_us(doc.at("gamma_phi_hz").get<double>());
  rc.calibration.offset_db = doc.value("power_offset_db", 0.0);
  rc.seed = doc.value("seed", std::uint64_t{1});
  rc.workers = doc.value("workers", 1u);
  rc.output = doc.value("output", std::string("out"));
  const json sweep = doc.value("sweep", json::object());
  const double da0 = units::rad_us_to_hz(rc.base.delta_da()), db0 = units::rad_us_to_hz(rc.base.delta_db());
  if (sweep.contains("eta")) rc.eta = sweep.at("eta").get<double>();
  rc.powers_dbm = sweep.contains("power_dbm") ? axis_values(sweep.at("power_dbm")) : std::vector<double>{-132.0};
  rc.deltas_da_hz = sweep.contains("delta_da_hz") ? axis_values(sweep.at("delta_da_hz")) : std::vector<double>{da0};
  rc.deltas_db_hz = sweep.contains("delta_db_hz") ? axis_values(sweep.at("delta_db_hz")) : std::vector<double>{db0};
  rc.doc = std::move(doc);
  return rc;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open configuration file");
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, std::string("parse error: ") + e.what());
  }
}

/// 64-bit FNV-1a digest, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = hex[h & 0xf];
  return out;
}

}  // namespace kerrcomb::io
