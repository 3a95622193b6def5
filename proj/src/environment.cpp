#include "qlink/environment.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qlink/units.hpp"

namespace qlink {

double delay_sensitivity_ps_per_K(const ThermalConstants& k) {
  return (k.length_m / kSpeedOfLight_m_per_s) *
         (k.dn_dT_per_K + (k.group_index - 1.0) * k.alpha_per_K) * 1e12;
}

double delay_shift_from_temperature_ps(double dT_K, const ThermalConstants& k) {
  return delay_sensitivity_ps_per_K(k) * dT_K;
}

double temperature_from_delay_shift_K(double dtau_ps, const ThermalConstants& k) {
  return dtau_ps / delay_sensitivity_ps_per_K(k);
}

double length_change_mm(double dT_K, const ThermalConstants& k) {
  return k.length_m * k.alpha_per_K * dT_K * 1e3;
}

double TemperatureProfile::temperature_at(double t_s) const {
  if (points.empty()) return 0.0;
  if (t_s <= points.front().first) return points.front().second;
  if (t_s >= points.back().first) return points.back().second;
  auto it = std::upper_bound(points.begin(), points.end(), t_s,
                             [](double t, const std::pair<double, double>& p) {
                               return t < p.first;
                             });
  const auto& hi = *it;
  const auto& lo = *(it - 1);
  const double span = hi.first - lo.first;
  if (span <= 0.0) return hi.second;
  const double w = (t_s - lo.first) / span;
  return lo.second + w * (hi.second - lo.second);
}

double TemperatureProfile::delay_offset_ps(double t_s, const ThermalConstants& k) const {
  if (points.empty()) return 0.0;
  return delay_shift_from_temperature_ps(temperature_at(t_s), k);
}

TemperatureProfile load_temperature_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open temperature profile: " + path);
  TemperatureProfile profile;
  std::string line;
  bool first = true;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (first) {
      first = false;
      if (line.find("time_s") != std::string::npos) continue;  // header
    }
    std::istringstream ss(line);
    std::string t, temp;
    if (!std::getline(ss, t, ',') || !std::getline(ss, temp)) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'time_s,temp_offset_K'");
    }
    double ts, tk;
    try {
      ts = std::stod(t);
      tk = std::stod(temp);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-numeric entry");
    }
    if (!profile.points.empty() && ts < profile.points.back().first) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": profile times must be non-decreasing");
    }
    profile.points.emplace_back(ts, tk);
  }
  return profile;
}

void save_temperature_profile_csv(const TemperatureProfile& profile, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write temperature profile: " + path);
  out << "time_s,temp_offset_K\n";
  out.precision(12);
  for (const auto& [t, k] : profile.points) out << t << "," << k << "\n";
}

}  // namespace qlink
