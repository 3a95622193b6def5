#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace qlink {

inline constexpr double kSpeedOfLight_m_per_s = 299792458.0;

// FWHM = 2*sqrt(2*ln 2) * sigma for a Gaussian.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

inline double fwhm_to_sigma(double fwhm) { return fwhm / kFwhmPerSigma; }
inline double sigma_to_fwhm(double sigma) { return sigma * kFwhmPerSigma; }

// Parse a time quantity with an optional unit suffix (fs, ps, ns, us, ms, s)
// into picoseconds. A bare number is taken as picoseconds.
inline double parse_time_ps(const std::string& text) {
  size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a time quantity: '" + text + "'");
  }
  std::string unit = text.substr(pos);
  while (!unit.empty() && (unit.front() == ' ' || unit.front() == '\t')) unit.erase(0, 1);
  while (!unit.empty() && (unit.back() == ' ' || unit.back() == '\t')) unit.pop_back();
  if (unit.empty() || unit == "ps") return value;
  if (unit == "fs") return value * 1e-3;
  if (unit == "ns") return value * 1e3;
  if (unit == "us") return value * 1e6;
  if (unit == "ms") return value * 1e9;
  if (unit == "s") return value * 1e12;
  throw std::invalid_argument("unknown time unit '" + unit + "' in '" + text + "'");
}

// Parse a duration into seconds; bare numbers are seconds.
inline double parse_duration_s(const std::string& text) {
  size_t pos = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("not a duration: '" + text + "'");
  }
  std::string unit = text.substr(pos);
  while (!unit.empty() && (unit.front() == ' ' || unit.front() == '\t')) unit.erase(0, 1);
  while (!unit.empty() && (unit.back() == ' ' || unit.back() == '\t')) unit.pop_back();
  if (unit.empty() || unit == "s") return value;
  return parse_time_ps(text) * 1e-12;
}

}  // namespace qlink
