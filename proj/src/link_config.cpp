#include "qlink/link_config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "qlink/units.hpp"

namespace qlink {

LinkConfig::LinkConfig() : schedule(default_schedule()) {}

double LinkConfig::total_duration_s() const {
  double total = 0.0;
  for (const auto& b : schedule) total += b.duration_s;
  return total * static_cast<double>(schedule_repeat);
}

TemperatureProfile LinkConfig::make_temperature_profile() const {
  if (!thermal_profile_csv.empty()) return load_temperature_profile_csv(thermal_profile_csv);
  TemperatureProfile profile;
  if (thermal_ramp_K != 0.0) {
    profile.points = {{0.0, 0.0}, {total_duration_s(), thermal_ramp_K}};
  }
  return profile;
}

BasisSetting LinkConfig::remote_physical_basis(const BasisSetting& label) const {
  if (!conjugate_remote_labels) return label;
  return BasisSetting::from_angle(90.0 - label.angle_deg);
}

std::vector<ScheduleBlock> default_schedule() {
  const auto h = BasisSetting::h(), v = BasisSetting::v();
  const auto d = BasisSetting::d(), a = BasisSetting::a();
  return {
      {h, v, 100.0}, {v, h, 100.0}, {h, h, 100.0}, {v, v, 100.0},
      {d, a, 100.0}, {a, d, 100.0}, {d, d, 100.0}, {a, a, 100.0},
  };
}

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw std::invalid_argument(field + " " + what);
}

void check_detector(const DetectorConfig& det, const std::string& field) {
  if (det.efficiency < 0.0 || det.efficiency > 1.0) fail(field + ".efficiency", "must lie in [0, 1]");
  if (det.dark_rate < 0.0) fail(field + ".dark_rate", "must be non-negative");
  if (det.jitter_fwhm_ps < 0.0) fail(field + ".jitter_fwhm_ps", "must be non-negative");
}

}  // namespace

void validate(const LinkConfig& cfg) {
  if (!(cfg.source.pair_rate >= 0.0) || !std::isfinite(cfg.source.pair_rate)) {
    fail("source.pair_rate", "must be finite and non-negative");
  }
  if (cfg.source.local_fidelity < 0.25 || cfg.source.local_fidelity > 1.0) {
    fail("source.local_fidelity", "must lie in [0.25, 1]");
  }
  if (cfg.source.local_coupling < 0.0 || cfg.source.local_coupling > 1.0) {
    fail("source.local_coupling", "must lie in [0, 1]");
  }
  if (cfg.source.remote_coupling < 0.0 || cfg.source.remote_coupling > 1.0) {
    fail("source.remote_coupling", "must lie in [0, 1]");
  }
  if (cfg.source.signal_channel.fwhm_nm < 0.0) fail("source.signal_fwhm_nm", "must be non-negative");
  if (cfg.source.idler_channel.fwhm_nm < 0.0) fail("source.idler_fwhm_nm", "must be non-negative");

  if (!(cfg.channel.length_m > 0.0)) fail("channel.length_m", "must be positive");
  if (cfg.channel.loss_db < 0.0) fail("channel.loss_db", "must be non-negative");
  if (cfg.channel.base_delay_ps < 0.0) fail("channel.base_delay_ps", "must be non-negative");
  if (cfg.channel.dispersion_fwhm_ps < 0.0) fail("channel.dispersion_fwhm_ps", "must be non-negative");
  if (cfg.channel.dispersion_fwhm_ps > 0.0 && !(cfg.source.signal_channel.fwhm_nm > 0.0)) {
    fail("source.signal_fwhm_nm", "must be positive when channel.dispersion_fwhm_ps > 0");
  }
  if (cfg.channel.dispersion_sign != 1.0 && cfg.channel.dispersion_sign != -1.0) {
    fail("channel.dispersion_sign", "must be +1 or -1");
  }
  if (!(cfg.channel.group_index >= 1.0)) fail("channel.group_index", "must be at least 1");
  const auto& bir = cfg.channel.birefringence;
  if (bir.mode == BirefringenceSpec::Mode::random_walk) {
    if (!(bir.walk_step_deg >= 0.0)) fail("channel.birefringence.walk_step_deg", "must be non-negative");
    if (!(bir.walk_cap_deg > 0.0)) fail("channel.birefringence.walk_cap_deg", "must be positive");
    if (!(bir.walk_interval_s > 0.0)) fail("channel.birefringence.walk_interval_s", "must be positive");
  }
  if (bir.mode == BirefringenceSpec::Mode::constant) {
    const auto& ax = bir.constant_rotation.axis;
    const double norm = std::sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
    if (std::abs(norm - 1.0) > 1e-9) fail("channel.birefringence.constant_axis", "must be a unit vector");
  }

  check_detector(cfg.detector_local, "detector_local");
  check_detector(cfg.detector_remote, "detector_remote");

  if (!(cfg.tagger.bin_width_ps > 0.0)) fail("tagger.bin_width_ps", "must be positive");
  if (cfg.tagger.sync_jitter_fwhm_ps < 0.0) fail("tagger.sync_jitter_fwhm_ps", "must be non-negative");

  if (!(cfg.thermal.length_m > 0.0)) fail("thermal.length_m", "must be positive");
  if (!(cfg.thermal.group_index >= 1.0)) fail("thermal.group_index", "must be at least 1");
  if (!std::isfinite(cfg.thermal_ramp_K)) fail("thermal.ramp_K", "must be finite");

  if (cfg.schedule.empty()) fail("schedule", "must contain at least one block");
  if (cfg.schedule_repeat < 1) fail("schedule.repeat", "must be at least 1");
  for (size_t i = 0; i < cfg.schedule.size(); ++i) {
    if (!(cfg.schedule[i].duration_s > 0.0)) {
      fail("schedule.block[" + std::to_string(i) + "].duration", "must be positive");
    }
  }

  if (!(cfg.window_ps > 0.0)) fail("window_ps", "must be positive");
  if (!(cfg.rate_scale > 0.0)) fail("rate_scale", "must be positive");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& value, const std::string& key, int line) {
  size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (used != value.size()) {
    throw std::invalid_argument("config line " + std::to_string(line) + ": " + key +
                                " expects a number, got '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& value, const std::string& key, int line) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + key +
                              " expects true/false, got '" + value + "'");
}

std::vector<std::string> split_csv(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) parts.push_back(trim(item));
  return parts;
}

ScheduleBlock parse_schedule_block(const std::string& value, int line) {
  const auto parts = split_csv(value);
  if (parts.size() != 3) {
    throw std::invalid_argument("config line " + std::to_string(line) +
                                ": schedule.block expects 'basis_a,basis_b,duration'");
  }
  ScheduleBlock block;
  try {
    block.basis_a = BasisSetting::from_label(parts[0]);
    block.basis_b = BasisSetting::from_label(parts[1]);
    block.duration_s = parse_duration_s(parts[2]);
  } catch (const std::exception& e) {
    throw std::invalid_argument("config line " + std::to_string(line) + ": " + e.what());
  }
  return block;
}

std::array<double, 3> parse_axis(const std::string& value, int line) {
  const auto parts = split_csv(value);
  if (parts.size() != 3) {
    throw std::invalid_argument("config line " + std::to_string(line) +
                                ": constant_axis expects 's1,s2,s3'");
  }
  std::array<double, 3> v{};
  for (int i = 0; i < 3; ++i) v[i] = parse_double(parts[i], "constant_axis", line);
  const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(norm > 0.0)) {
    throw std::invalid_argument("config line " + std::to_string(line) +
                                ": constant_axis must be non-zero");
  }
  for (auto& x : v) x /= norm;
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LinkConfig parse_link_config_text(const std::string& text) {
  LinkConfig cfg;
  bool schedule_cleared = false;
  double constant_angle = cfg.channel.birefringence.constant_rotation.angle_deg;
  std::array<double, 3> constant_axis = cfg.channel.birefringence.constant_rotation.axis;

  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto hash = s.find('#');
    if (hash != std::string::npos) s.erase(hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line) + ": expected key = value");
    }
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line) + ": expected key = value");
    }

    auto num = [&] { return parse_double(value, key, line); };

    if (key == "source.pair_rate") cfg.source.pair_rate = num();
    else if (key == "source.local_fidelity") cfg.source.local_fidelity = num();
    else if (key == "source.local_coupling") cfg.source.local_coupling = num();
    else if (key == "source.remote_coupling") cfg.source.remote_coupling = num();
    else if (key == "source.signal_label") cfg.source.signal_channel.label = value;
    else if (key == "source.signal_centre_nm") cfg.source.signal_channel.centre_nm = num();
    else if (key == "source.signal_fwhm_nm") cfg.source.signal_channel.fwhm_nm = num();
    else if (key == "source.idler_label") cfg.source.idler_channel.label = value;
    else if (key == "source.idler_centre_nm") cfg.source.idler_channel.centre_nm = num();
    else if (key == "source.idler_fwhm_nm") cfg.source.idler_channel.fwhm_nm = num();
    else if (key == "channel.length_m") cfg.channel.length_m = num();
    else if (key == "channel.loss_db") cfg.channel.loss_db = num();
    else if (key == "channel.base_delay_ps") cfg.channel.base_delay_ps = parse_time_ps(value);
    else if (key == "channel.dispersion_fwhm_ps") cfg.channel.dispersion_fwhm_ps = parse_time_ps(value);
    else if (key == "channel.dispersion_sign") cfg.channel.dispersion_sign = num();
    else if (key == "channel.group_index") cfg.channel.group_index = num();
    else if (key == "channel.birefringence.mode") {
      if (value == "none") cfg.channel.birefringence.mode = BirefringenceSpec::Mode::none;
      else if (value == "constant") cfg.channel.birefringence.mode = BirefringenceSpec::Mode::constant;
      else if (value == "random_walk") cfg.channel.birefringence.mode = BirefringenceSpec::Mode::random_walk;
      else {
        throw std::invalid_argument("config line " + std::to_string(line) +
                                    ": birefringence.mode must be none|constant|random_walk");
      }
    } else if (key == "channel.birefringence.constant_axis") constant_axis = parse_axis(value, line);
    else if (key == "channel.birefringence.constant_angle_deg") constant_angle = num();
    else if (key == "channel.birefringence.walk_step_deg") cfg.channel.birefringence.walk_step_deg = num();
    else if (key == "channel.birefringence.walk_cap_deg") cfg.channel.birefringence.walk_cap_deg = num();
    else if (key == "channel.birefringence.walk_interval_s") cfg.channel.birefringence.walk_interval_s = num();
    else if (key == "detector_local.efficiency") cfg.detector_local.efficiency = num();
    else if (key == "detector_local.dark_rate") cfg.detector_local.dark_rate = num();
    else if (key == "detector_local.jitter_fwhm_ps") cfg.detector_local.jitter_fwhm_ps = parse_time_ps(value);
    else if (key == "detector_remote.efficiency") cfg.detector_remote.efficiency = num();
    else if (key == "detector_remote.dark_rate") cfg.detector_remote.dark_rate = num();
    else if (key == "detector_remote.jitter_fwhm_ps") cfg.detector_remote.jitter_fwhm_ps = parse_time_ps(value);
    else if (key == "tagger.bin_width_ps") cfg.tagger.bin_width_ps = parse_time_ps(value);
    else if (key == "tagger.sync_jitter_fwhm_ps") cfg.tagger.sync_jitter_fwhm_ps = parse_time_ps(value);
    else if (key == "thermal.alpha_per_K") cfg.thermal.alpha_per_K = num();
    else if (key == "thermal.dn_dT_per_K") cfg.thermal.dn_dT_per_K = num();
    else if (key == "thermal.group_index") cfg.thermal.group_index = num();
    else if (key == "thermal.length_m") cfg.thermal.length_m = num();
    else if (key == "thermal.profile_csv") cfg.thermal_profile_csv = value;
    else if (key == "thermal.ramp_K") cfg.thermal_ramp_K = num();
    else if (key == "schedule.block") {
      if (!schedule_cleared) {
        cfg.schedule.clear();
        schedule_cleared = true;
      }
      cfg.schedule.push_back(parse_schedule_block(value, line));
    } else if (key == "schedule.repeat") {
      const double r = num();
      if (r != std::floor(r)) {
        throw std::invalid_argument("config line " + std::to_string(line) +
                                    ": schedule.repeat expects an integer");
      }
      cfg.schedule_repeat = static_cast<int>(r);
    } else if (key == "window_ps") cfg.window_ps = parse_time_ps(value);
    else if (key == "conjugate_remote_labels") cfg.conjugate_remote_labels = parse_bool(value, key, line);
    else if (key == "rate_scale") cfg.rate_scale = num();
    else if (key == "engine") {
      if (value == "decomposition") cfg.engine = EngineKind::decomposition;
      else if (value == "per_pair") cfg.engine = EngineKind::per_pair;
      else {
        throw std::invalid_argument("config line " + std::to_string(line) +
                                    ": engine must be decomposition|per_pair");
      }
    } else {
      throw std::invalid_argument("config line " + std::to_string(line) + ": unknown key '" + key + "'");
    }
  }

  if (cfg.channel.birefringence.mode == BirefringenceSpec::Mode::constant ||
      constant_angle != 0.0) {
    cfg.channel.birefringence.constant_rotation =
        PoincareRotation{constant_axis, constant_angle};
  }
  validate(cfg);
  return cfg;
}

LinkConfig load_link_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_link_config_text(buf.str());
}

std::string link_config_to_text(const LinkConfig& cfg) {
  std::ostringstream out;
  auto put = [&out](const std::string& key, const std::string& value) {
    out << key << " = " << value << "\n";
  };
  auto putd = [&put](const std::string& key, double v) { put(key, format_double(v)); };

  putd("source.pair_rate", cfg.source.pair_rate);
  putd("source.local_fidelity", cfg.source.local_fidelity);
  putd("source.local_coupling", cfg.source.local_coupling);
  putd("source.remote_coupling", cfg.source.remote_coupling);
  put("source.signal_label", cfg.source.signal_channel.label);
  putd("source.signal_centre_nm", cfg.source.signal_channel.centre_nm);
  putd("source.signal_fwhm_nm", cfg.source.signal_channel.fwhm_nm);
  put("source.idler_label", cfg.source.idler_channel.label);
  putd("source.idler_centre_nm", cfg.source.idler_channel.centre_nm);
  putd("source.idler_fwhm_nm", cfg.source.idler_channel.fwhm_nm);
  putd("channel.length_m", cfg.channel.length_m);
  putd("channel.loss_db", cfg.channel.loss_db);
  putd("channel.base_delay_ps", cfg.channel.base_delay_ps);
  putd("channel.dispersion_fwhm_ps", cfg.channel.dispersion_fwhm_ps);
  putd("channel.dispersion_sign", cfg.channel.dispersion_sign);
  putd("channel.group_index", cfg.channel.group_index);
  switch (cfg.channel.birefringence.mode) {
    case BirefringenceSpec::Mode::none: put("channel.birefringence.mode", "none"); break;
    case BirefringenceSpec::Mode::constant: put("channel.birefringence.mode", "constant"); break;
    case BirefringenceSpec::Mode::random_walk: put("channel.birefringence.mode", "random_walk"); break;
  }
  {
    const auto& r = cfg.channel.birefringence.constant_rotation;
    put("channel.birefringence.constant_axis", format_double(r.axis[0]) + "," +
                                                   format_double(r.axis[1]) + "," +
                                                   format_double(r.axis[2]));
    putd("channel.birefringence.constant_angle_deg", r.angle_deg);
  }
  putd("channel.birefringence.walk_step_deg", cfg.channel.birefringence.walk_step_deg);
  putd("channel.birefringence.walk_cap_deg", cfg.channel.birefringence.walk_cap_deg);
  putd("channel.birefringence.walk_interval_s", cfg.channel.birefringence.walk_interval_s);
  putd("detector_local.efficiency", cfg.detector_local.efficiency);
  putd("detector_local.dark_rate", cfg.detector_local.dark_rate);
  putd("detector_local.jitter_fwhm_ps", cfg.detector_local.jitter_fwhm_ps);
  putd("detector_remote.efficiency", cfg.detector_remote.efficiency);
  putd("detector_remote.dark_rate", cfg.detector_remote.dark_rate);
  putd("detector_remote.jitter_fwhm_ps", cfg.detector_remote.jitter_fwhm_ps);
  putd("tagger.bin_width_ps", cfg.tagger.bin_width_ps);
  putd("tagger.sync_jitter_fwhm_ps", cfg.tagger.sync_jitter_fwhm_ps);
  putd("thermal.alpha_per_K", cfg.thermal.alpha_per_K);
  putd("thermal.dn_dT_per_K", cfg.thermal.dn_dT_per_K);
  putd("thermal.group_index", cfg.thermal.group_index);
  putd("thermal.length_m", cfg.thermal.length_m);
  if (!cfg.thermal_profile_csv.empty()) put("thermal.profile_csv", cfg.thermal_profile_csv);
  putd("thermal.ramp_K", cfg.thermal_ramp_K);
  for (const auto& b : cfg.schedule) {
    put("schedule.block",
        b.basis_a.label() + "," + b.basis_b.label() + "," + format_double(b.duration_s) + "s");
  }
  put("schedule.repeat", std::to_string(cfg.schedule_repeat));
  putd("window_ps", cfg.window_ps);
  put("conjugate_remote_labels", cfg.conjugate_remote_labels ? "true" : "false");
  putd("rate_scale", cfg.rate_scale);
  put("engine", cfg.engine == EngineKind::decomposition ? "decomposition" : "per_pair");
  return out.str();
}

void save_link_config(const LinkConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open config output file: " + path);
  out << link_config_to_text(cfg);
  if (!out) throw std::runtime_error("failed writing config file: " + path);
}

LinkConfig apply_rate_scale(const LinkConfig& cfg) {
  LinkConfig out = cfg;
  const double k = cfg.rate_scale;
  if (k == 1.0) return out;
  out.source.pair_rate /= k;
  out.detector_local.dark_rate /= k;
  out.detector_remote.dark_rate /= k;
  for (auto& b : out.schedule) b.duration_s *= k;
  out.channel.birefringence.walk_interval_s *= k;
  out.rate_scale = 1.0;
  return out;
}

}  // namespace qlink
