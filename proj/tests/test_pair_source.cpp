#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "qlink/pair_source.hpp"
#include "qlink/units.hpp"

using namespace qlink;

namespace {

SourceConfig scaled_source(double rate_hz) {
  SourceConfig cfg;
  cfg.pair_rate = rate_hz;
  return cfg;
}

}  // namespace

TEST_CASE("generation is deterministic and strictly monotone in time") {
  const SourceConfig cfg = scaled_source(2.0e6);
  const auto a = generate_pairs(cfg, 0.25, 99);
  const auto b = generate_pairs(cfg, 0.25, 99);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].emission_ps == b[i].emission_ps);
    CHECK(a[i].signal_wl_offset_nm == b[i].signal_wl_offset_nm);
    CHECK(a[i].born_u == b[i].born_u);
  }
  for (size_t i = 1; i < a.size(); ++i) CHECK(a[i].emission_ps > a[i - 1].emission_ps);
  CHECK(a.front().emission_ps >= 0);
  CHECK(a.back().emission_ps < std::int64_t(0.25 * 1e12));

  // A different seed produces a different stream.
  const auto c = generate_pairs(cfg, 0.25, 100);
  CHECK(c.size() != a.size());  // Poisson counts collide rarely; sizes differ here
}

TEST_CASE("any chunking of the cell range concatenates to the same sequence") {
  const SourceConfig cfg = scaled_source(5.0e5);
  const std::int64_t n_cells = 200;  // 200 ms

  std::vector<PairEvent> whole;
  std::int64_t last = -1;
  generate_pairs_cells(cfg, 7, 0, n_cells, whole, last);

  for (const auto& splits : std::vector<std::vector<std::int64_t>>{
           {0, 50, 200}, {0, 1, 2, 3, 200}, {0, 199, 200}, {0, 40, 80, 120, 160, 200}}) {
    std::vector<PairEvent> chunked;
    std::int64_t carry = -1;
    for (size_t i = 0; i + 1 < splits.size(); ++i)
      generate_pairs_cells(cfg, 7, splits[i], splits[i + 1], chunked, carry);
    REQUIRE(chunked.size() == whole.size());
    for (size_t i = 0; i < whole.size(); ++i) {
      CHECK(chunked[i].emission_ps == whole[i].emission_ps);
      CHECK(chunked[i].signal_wl_offset_nm == whole[i].signal_wl_offset_nm);
      CHECK(chunked[i].born_u == whole[i].born_u);
    }
  }

  // A sub-range equals the same slice of the full run.
  std::vector<PairEvent> middle;
  std::int64_t carry = -1;
  generate_pairs_cells(cfg, 7, 50, 60, middle, carry);
  size_t offset = 0;
  while (offset < whole.size() && whole[offset].emission_ps < 50 * kGenerationCellPs) ++offset;
  REQUIRE(offset + middle.size() <= whole.size());
  for (size_t i = 0; i < middle.size(); ++i)
    CHECK(middle[i].emission_ps == whole[offset + i].emission_ps);
}

TEST_CASE("emission counts are Poisson at the configured rate") {
  const double rate = 3.0e6;
  const double duration = 0.5;
  const auto events = generate_pairs(scaled_source(rate), duration, 2024);
  const double mean = rate * duration;
  CHECK(std::abs(double(events.size()) - mean) < 4.5 * std::sqrt(mean));

  // Inter-arrival gaps are exponential: mean 1/rate, variance 1/rate^2.
  double sum = 0.0, sum2 = 0.0;
  for (size_t i = 1; i < events.size(); ++i) {
    const double gap = double(events[i].emission_ps - events[i - 1].emission_ps) * 1e-12;
    sum += gap;
    sum2 += gap * gap;
  }
  const double n = double(events.size() - 1);
  const double gap_mean = sum / n;
  const double gap_var = sum2 / n - gap_mean * gap_mean;
  CHECK(gap_mean == doctest::Approx(1.0 / rate).epsilon(0.01));
  CHECK(gap_var == doctest::Approx(1.0 / (rate * rate)).epsilon(0.05));
}

TEST_CASE("zero rate emits nothing") {
  CHECK(generate_pairs(scaled_source(0.0), 1.0, 5).empty());
}

TEST_CASE("spectral offsets are Gaussian with the channel FWHM") {
  SourceConfig cfg = scaled_source(1.0e6);
  cfg.signal_channel.fwhm_nm = 0.6;
  const auto events = generate_pairs(cfg, 0.4, 31);
  REQUIRE(events.size() > 100000);

  double sum = 0.0, sum2 = 0.0;
  for (const auto& e : events) {
    sum += e.signal_wl_offset_nm;
    sum2 += e.signal_wl_offset_nm * e.signal_wl_offset_nm;
  }
  const double n = double(events.size());
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double sigma = fwhm_to_sigma(0.6);
  CHECK(std::abs(mean) < 5.0 * sigma / std::sqrt(n));
  CHECK(var == doctest::Approx(sigma * sigma).epsilon(0.02));
}

TEST_CASE("born_u is uniform on [0,1) and independent across events") {
  const auto events = generate_pairs(scaled_source(1.0e6), 0.3, 77);
  REQUIRE(events.size() > 100000);
  double sum = 0.0, sum2 = 0.0;
  double corr = 0.0;  // lag-1 serial correlation accumulator
  for (size_t i = 0; i < events.size(); ++i) {
    const double u = events[i].born_u;
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
    sum2 += u * u;
    if (i > 0) corr += (u - 0.5) * (events[i - 1].born_u - 0.5);
  }
  const double n = double(events.size());
  CHECK(sum / n == doctest::Approx(0.5).epsilon(5.0 / std::sqrt(12 * n) / 0.5));
  CHECK(sum2 / n - 0.25 == doctest::Approx(1.0 / 12).epsilon(0.02));
  // Serial correlation should vanish as 1/sqrt(n).
  CHECK(std::abs(corr / n / (1.0 / 12.0)) < 5.0 / std::sqrt(n));
}

TEST_CASE("defaults describe the calibrated deployed-link source") {
  const SourceConfig cfg;
  CHECK(cfg.pair_rate == doctest::Approx(3.680585e7).epsilon(1e-6));
  CHECK(cfg.local_fidelity == 0.98);
  CHECK(cfg.local_coupling == doctest::Approx(0.19010566).epsilon(1e-7));
  CHECK(cfg.remote_coupling == 1.0);
  CHECK(cfg.signal_channel.centre_nm == doctest::Approx(1551.72));
  CHECK(cfg.signal_channel.fwhm_nm == doctest::Approx(0.6));
  CHECK(cfg.idler_channel.centre_nm == doctest::Approx(1548.51));
}
