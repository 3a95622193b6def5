#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlink/fibre_channel.hpp"
#include "qlink/quantum_state.hpp"
#include "qlink/rng.hpp"

// Detector and time-tagger model: analyzer projection (joint Born rule),
// efficiency thinning, Gaussian timing jitter, optional clock-sync jitter,
// dark counts, and quantization onto the tagger grid.
//
// Tag times are stored as integer bin indices with a stream-level bin width
// in femtoseconds (82.3 ps = 82300 fs exactly), so quantized timestamps and
// all downstream correlation arithmetic are exact integers.
//
// Joint outcomes across two independently detected arms: each pair carries
// one shared uniform u. The local photon clicks (before efficiency) iff
// u < p_local; the travelling photon clicks iff u < q or
// p_local ≤ u < p_local + p_remote − q, where q = tr(ρ'·P_a⊗P_b) with ρ' the
// rotated state. Since q ≤ min(p_local, p_remote), the marginals are exact
// and the joint click probability is exactly q.

namespace qlink {

struct DetectorConfig {
  double efficiency = 1.0;
  double dark_rate = 0.0;        // counts per second
  double jitter_fwhm_ps = 0.0;   // detection + tagging combined, per detector
  std::string label;
};

struct TaggerConfig {
  double bin_width_ps = 82.3;
  double sync_jitter_fwhm_ps = 500.0;  // applied to the long-delay channel only

  std::uint64_t bin_width_fs() const;
};

struct TimeTagStream {
  std::uint64_t bin_width_fs = 82300;
  std::uint32_t channel_count = 2;
  std::vector<std::uint64_t> bins;      // non-decreasing
  std::vector<std::uint8_t> channels;   // parallel to bins

  size_t size() const { return bins.size(); }
  bool sorted() const;
};

// Quantize (emission + delta) onto the tagger grid. Returns -1 for times
// before t = 0 (the click is dropped).
std::int64_t quantize_to_bin(std::int64_t emission_ps, double delta_ps,
                             std::uint64_t bin_width_fs);

struct DetectionContext {
  TwoPhotonState state;            // post-source two-photon state
  BasisSetting basis_self;         // physical analyzer angle of this arm
  BasisSetting basis_partner;      // physical analyzer angle of the other arm
  Arm arm = Arm::remote;
  double path_delay_ps = 0.0;      // fixed propagation delay of this arm
  double coupling = 1.0;           // extra pre-detector coupling (local arm)
  bool apply_sync_jitter = false;  // clock-sync jitter (long-delay channel)
  double analyzer_contrast = 1.0;
};

struct DetectResult {
  TimeTagStream stream;
  std::uint64_t photon_clicks = 0;
  std::uint64_t dark_clicks = 0;
  // Emission times of the input photons whose clicks were recorded (in input
  // order); lets callers match the two arms of a pair without re-deriving the
  // thinning decisions.
  std::vector<std::int64_t> recorded_emissions;
};

// Converts photon arrivals into one detector's time-tag stream, with dark
// counts generated over [0, duration_s). Deterministic given (inputs, seed).
DetectResult detect(const std::vector<TravellingPhoton>& photons, const DetectionContext& ctx,
                    const DetectorConfig& det, const TaggerConfig& tagger, double duration_s,
                    std::uint64_t seed, std::uint8_t channel);

// Dark-count-only stream over [0, duration_s) (also used internally).
std::vector<std::uint64_t> dark_count_bins(double dark_rate, double duration_s,
                                           std::uint64_t bin_width_fs, std::uint64_t seed,
                                           StreamPurpose purpose);

}  // namespace qlink
