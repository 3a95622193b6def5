#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "qlink/environment.hpp"

using namespace qlink;

namespace {
const ThermalConstants kDefaults{};

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("delay sensitivity combines index change and weighted elongation") {
  // Independent evaluation of (L/c)*(dn/dT + (n_g - 1)*alpha).
  const double c_m_per_ps = 2.99792458e8 * 1e-12;
  const double want = kDefaults.length_m / c_m_per_ps *
                      (kDefaults.dn_dT_per_K + (kDefaults.group_index - 1.0) * kDefaults.alpha_per_K);
  const double got = delay_sensitivity_ps_per_K(kDefaults);
  CHECK(got == doctest::Approx(want).epsilon(1e-12));
  CHECK(got == doctest::Approx(5603.89).epsilon(1e-5));
}

TEST_CASE("millikelvin drifts map to the documented picosecond shifts") {
  CHECK(delay_shift_from_temperature_ps(0.022, kDefaults) == doctest::Approx(123.2856).epsilon(1e-4));
  CHECK(temperature_from_delay_shift_K(124.0, kDefaults) == doctest::Approx(0.0221275).epsilon(1e-4));
  // Sensitivity is linear: sign and scaling.
  CHECK(delay_shift_from_temperature_ps(-0.022, kDefaults) ==
        doctest::Approx(-delay_shift_from_temperature_ps(0.022, kDefaults)).epsilon(1e-12));
  CHECK(delay_shift_from_temperature_ps(1.0, kDefaults) ==
        doctest::Approx(delay_sensitivity_ps_per_K(kDefaults)).epsilon(1e-12));
}

TEST_CASE("inverse round-trips to high relative accuracy") {
  for (double dT : {1e-3, 0.022, 0.5, -0.37, 4.0}) {
    const double tau = delay_shift_from_temperature_ps(dT, kDefaults);
    CHECK(temperature_from_delay_shift_K(tau, kDefaults) == doctest::Approx(dT).epsilon(1e-9));
  }
  for (double tau : {1.0, 124.0, -500.0}) {
    const double dT = temperature_from_delay_shift_K(tau, kDefaults);
    CHECK(delay_shift_from_temperature_ps(dT, kDefaults) == doctest::Approx(tau).epsilon(1e-9));
  }
}

TEST_CASE("thermal expansion gives millimetre-scale elongation") {
  CHECK(length_change_mm(0.022, kDefaults) == doctest::Approx(2.37555).epsilon(1e-4));
  CHECK(length_change_mm(1.0, kDefaults) == doctest::Approx(107.979).epsilon(1e-4));
  CHECK(length_change_mm(0.0, kDefaults) == 0.0);
}

TEST_CASE("temperature profiles interpolate linearly and clamp at the ends") {
  TemperatureProfile p;
  p.points = {{0.0, 0.0}, {100.0, 0.010}, {300.0, 0.010}, {400.0, -0.006}};

  CHECK(p.temperature_at(-50.0) == doctest::Approx(0.0));
  CHECK(p.temperature_at(0.0) == doctest::Approx(0.0));
  CHECK(p.temperature_at(50.0) == doctest::Approx(0.005));
  CHECK(p.temperature_at(200.0) == doctest::Approx(0.010));
  CHECK(p.temperature_at(350.0) == doctest::Approx(0.002));
  CHECK(p.temperature_at(400.0) == doctest::Approx(-0.006));
  CHECK(p.temperature_at(1000.0) == doctest::Approx(-0.006));

  // Delay offsets are the same curve scaled by the sensitivity.
  const double sens = delay_sensitivity_ps_per_K(kDefaults);
  CHECK(p.delay_offset_ps(50.0, kDefaults) == doctest::Approx(0.005 * sens).epsilon(1e-12));

  const TemperatureProfile empty;
  CHECK(empty.empty());
  CHECK(empty.temperature_at(123.0) == 0.0);
  CHECK(empty.delay_offset_ps(123.0, kDefaults) == 0.0);
}

TEST_CASE("a 22 mK ramp spans 124 ps of delay drift") {
  // Linear ramp reaching 22 mK: the delay offset series spans the quoted
  // shift between its start and end.
  TemperatureProfile ramp;
  ramp.points = {{0.0, 0.0}, {14400.0, 0.022}};
  const double span = ramp.delay_offset_ps(14400.0, kDefaults) - ramp.delay_offset_ps(0.0, kDefaults);
  CHECK(span == doctest::Approx(123.2856).epsilon(0.05));  // 124 ps +- 5%
  CHECK(std::abs(span - 124.0) / 124.0 < 0.05);
}

TEST_CASE("profile CSV round-trips") {
  TemperatureProfile p;
  p.points = {{0.0, 0.0}, {60.5, 0.0125}, {3600.0, -0.0042}};
  const std::string path = temp_path("qlink_profile_roundtrip.csv");
  save_temperature_profile_csv(p, path);
  const TemperatureProfile back = load_temperature_profile_csv(path);
  REQUIRE(back.points.size() == p.points.size());
  for (size_t i = 0; i < p.points.size(); ++i) {
    CHECK(back.points[i].first == doctest::Approx(p.points[i].first).epsilon(1e-12));
    CHECK(back.points[i].second == doctest::Approx(p.points[i].second).epsilon(1e-12));
  }
  std::remove(path.c_str());

  CHECK_THROWS(load_temperature_profile_csv(temp_path("qlink_no_such_profile.csv")));
}
