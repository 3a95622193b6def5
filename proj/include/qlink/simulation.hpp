#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qlink/detection.hpp"
#include "qlink/link_config.hpp"

// End-to-end link simulation.
//
// Two engines produce statistically identical streams:
//  - decomposition: splits the pair process into its independent detected
//    components (both-arms, local-only, remote-only — a Poisson process
//    thinned into categories stays a set of independent Poisson processes)
//    and generates only surviving clicks. This is what makes full-rate runs
//    (2.1e6 local clicks/s) tractable.
//  - per_pair: propagates every emitted pair through channel and detectors
//    (reference path used to cross-validate the decomposition on small runs).
//
// Both are deterministic in (config, seed) and stream their output in
// emission-time chunks, so memory stays bounded for hours-long runs.

namespace qlink {

struct BlockSummary {
  int cycle = 0;
  int index = 0;  // block within the cycle
  BasisSetting basis_a;
  BasisSetting basis_b;  // label (analysis-side); conjugation handled internally
  double start_s = 0.0;
  double duration_s = 0.0;
  std::uint64_t singles_local = 0;   // photon + dark clicks on the local channel
  std::uint64_t singles_remote = 0;
  std::uint64_t dark_local = 0;
  std::uint64_t dark_remote = 0;
  std::uint64_t joint_detected = 0;  // pairs that produced clicks on both arms
};

// Receives sorted, non-overlapping chunks of one channel's tags.
using TagSink = std::function<void(const std::uint64_t* bins, size_t count)>;

struct SimulationSummary {
  std::vector<BlockSummary> blocks;
  std::uint64_t local_tags = 0;
  std::uint64_t remote_tags = 0;
  LinkConfig effective;  // after rate scaling
};

// Core streaming run; local channel is 0, remote channel is 1.
SimulationSummary simulate_link_streamed(const LinkConfig& cfg, std::uint64_t seed,
                                         const TagSink& local_sink, const TagSink& remote_sink);

struct SimulationResult {
  TimeTagStream local;
  TimeTagStream remote;
  SimulationSummary summary;
};

// In-memory convenience wrapper (small/medium runs).
SimulationResult simulate_link(const LinkConfig& cfg, std::uint64_t seed);

struct RunPaths {
  std::string directory;
  std::string tags_local;
  std::string tags_remote;
  std::string manifest;
};

// Writes tags_local.qtt, tags_remote.qtt and manifest.json (parameters, seed,
// per-block summaries) into out_dir. Deterministic in (cfg, seed).
RunPaths run_simulation(const LinkConfig& cfg, std::uint64_t seed, const std::string& out_dir);

struct ManifestData {
  LinkConfig config;
  std::uint64_t seed = 0;
  std::string tags_local;   // paths relative to the manifest directory
  std::string tags_remote;
  std::vector<BlockSummary> blocks;
};

ManifestData load_manifest(const std::string& path);

// Mean rates implied by a config (no windowing; coincidences are the
// Gaussian-peak-area rates at perfectly correlated/uncorrelated labels).
struct ExpectedRates {
  double local_singles_hz = 0.0;    // incl. dark
  double remote_singles_hz = 0.0;   // incl. dark
  double local_dark_hz = 0.0;
  double remote_dark_hz = 0.0;
  double coincidence_corr_hz = 0.0;
  double coincidence_unc_hz = 0.0;
};

ExpectedRates expected_rates(const LinkConfig& cfg);

struct CalibrationResult {
  SourceConfig source;
  double achieved_local_singles_hz = 0.0;
  double achieved_remote_singles_hz = 0.0;
  double achieved_coincidence_hz = 0.0;
  double coincidence_shortfall = 0.0;  // fraction below target after clamping
};

// Solves pair rate and coupling fractions so the configured detectors and
// channel reproduce the target rates: local singles fix pair_rate×local
// coupling, remote singles fix pair_rate×remote coupling, and the
// coincidence target apportions the product. Couplings are clamped to [0,1];
// a clamped solution is accepted while the resulting coincidence shortfall
// stays below 25%, and rejected as unreachable beyond that.
CalibrationResult calibrate_rates(double target_local_singles_hz, double target_coincidences_hz,
                                  const LinkConfig& cfg, double target_remote_singles_hz = 55.0);

}  // namespace qlink
