#pragma once

// Internal unit system: time in microseconds, angular frequencies in rad/us.
// Configuration files and CSV outputs use ordinary frequency in Hz.

#include <cmath>
#include <numbers>

namespace kerrcomb::units {

inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double hbar = 1.054571817e-34;     // J s
inline constexpr double speed_of_light = 299792458.0; // m/s

/// Ordinary frequency (Hz) to internal angular frequency (rad/us).
constexpr double hz_to_rad_us(double f_hz) { return two_pi * f_hz * 1e-6; }

/// Internal angular frequency (rad/us) to ordinary frequency (Hz).
constexpr double rad_us_to_hz(double w) { return w * 1e6 / two_pi; }

constexpr double mhz(double f) { return hz_to_rad_us(f * 1e6); }
constexpr double khz(double f) { return hz_to_rad_us(f * 1e3); }
constexpr double ghz(double f) { return hz_to_rad_us(f * 1e9); }

inline double dbm_to_watts(double p_dbm) { return 1e-3 * std::pow(10.0, p_dbm / 10.0); }

}  // namespace kerrcomb::units
