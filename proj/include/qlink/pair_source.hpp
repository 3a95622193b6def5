#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Timed polarization-entangled pair emission mimicking a CW-pumped SPDC
// source: a homogeneous Poisson process in time with Gaussian spectral
// offsets per pair.
//
// Determinism contract: time is partitioned into fixed 1 ms cells anchored at
// t = 0; every cell draws from independent counter-RNG streams keyed by
// (seed, purpose, cell index). Generating [0, T) in any chunking therefore
// concatenates to the identical sequence, and a sub-range [a, b) of cells
// equals the same slice of a full run.

namespace qlink {

struct ChannelSpectrum {
  std::string label;      // e.g. "ITU-32"
  double centre_nm = 0.0;
  double fwhm_nm = 0.0;
};

struct SourceConfig {
  double pair_rate = 36805850.0;  // emitted pairs per second (calibrated default)
  double local_fidelity = 0.98;
  ChannelSpectrum signal_channel{"ITU-32", 1551.72, 0.6};
  ChannelSpectrum idler_channel{"ITU-36", 1548.51, 0.6};
  double local_coupling = 0.19010566;  // fraction reaching the local analyzer
  double remote_coupling = 1.0;        // fraction entering the fibre
};

struct PairEvent {
  std::int64_t emission_ps = 0;       // strictly increasing within a sequence
  double signal_wl_offset_nm = 0.0;   // offset of the travelling photon from channel centre
  double born_u = 0.0;                // shared uniform driving both photons' outcomes
};

inline constexpr std::int64_t kGenerationCellPs = 1'000'000'000;  // 1 ms

// Pairs emitted over the half-open cell range [cell_begin, cell_end), cell i
// covering [i, i+1) ms. Appends to `out`; `last_emission_ps` carries the
// strict-monotonicity floor across calls (use -1 to start).
void generate_pairs_cells(const SourceConfig& cfg, std::uint64_t seed, std::int64_t cell_begin,
                          std::int64_t cell_end, std::vector<PairEvent>& out,
                          std::int64_t& last_emission_ps);

// Pairs over [0, duration_s); equivalent to one pass over all covered cells.
std::vector<PairEvent> generate_pairs(const SourceConfig& cfg, double duration_s,
                                      std::uint64_t seed);

}  // namespace qlink
