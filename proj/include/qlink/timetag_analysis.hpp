#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qlink/detection.hpp"

// High-throughput coincidence analysis of two time-tag streams.
//
// All delay arithmetic is integer femtoseconds: tag times are (bin index ×
// bin width in fs) and only differences are formed, so histograms are exact
// and independent of chunking or processing order. The cross-correlator is a
// two-pointer sliding-window merge, O(N_a + N_b + matches).

namespace qlink {

struct CorrelationHistogram {
  std::int64_t start_delay_fs = 0;
  std::int64_t bin_width_fs = 1;
  std::vector<std::uint64_t> counts;
  std::uint64_t total_pairs_considered = 0;

  double start_delay_ps() const { return static_cast<double>(start_delay_fs) * 1e-3; }
  double bin_width_ps() const { return static_cast<double>(bin_width_fs) * 1e-3; }
  double bin_center_ps(size_t k) const {
    return (static_cast<double>(start_delay_fs) +
            (static_cast<double>(k) + 0.5) * static_cast<double>(bin_width_fs)) * 1e-3;
  }
};

struct PeakFit {
  double center_ps = 0.0;
  double center_stderr_ps = 0.0;
  double fwhm_ps = 0.0;
  double fwhm_stderr_ps = 0.0;
  double amplitude = 0.0;   // counts at peak above baseline
  double baseline = 0.0;    // counts per bin
  int iterations = 0;
};

// Histogram of delays (t_b − t_a) over [delay_min_ps, delay_max_ps) in fixed
// bins. The upper edge is rounded up to a whole number of bins. Streams must
// be sorted and share the same tag bin width. Empty streams give all zeros.
CorrelationHistogram cross_correlate(const TimeTagStream& a, const TimeTagStream& b,
                                     double delay_min_ps, double delay_max_ps,
                                     double bin_width_ps);

// Core used for both the whole-stream and chunked/streamed paths: accumulates
// pairs from the given tag spans into an existing histogram. `tag_bin_fs` is
// the tag grid of both spans.
void accumulate_cross_correlation(CorrelationHistogram& hist, std::span<const std::uint64_t> a,
                                  std::span<const std::uint64_t> b, std::uint64_t tag_bin_fs);

// Runs cross_correlate with stream A split into `chunks` contiguous slices,
// summing the partial histograms. Bit-identical to the single-pass result.
CorrelationHistogram cross_correlate_chunked(const TimeTagStream& a, const TimeTagStream& b,
                                             double delay_min_ps, double delay_max_ps,
                                             double bin_width_ps, unsigned chunks);

// Least-squares Gaussian + flat baseline fit (Levenberg-style damping,
// initialization from the histogram itself, ≤200 iterations, convergence at
// relative parameter change < 1e-8). Returns nullopt when no bin reaches 5×
// the median bin (no peak present).
std::optional<PeakFit> fit_gaussian_peak(const CorrelationHistogram& hist);

enum class PairingMode {
  histogram_integration,  // every (a, b) pair inside the window counts
  greedy_one_to_one,      // each tag participates in at most one pair
};

// Number of pairs with |t_b − t_a − delay| ≤ window/2 (inclusive).
std::uint64_t count_coincidences(const TimeTagStream& a, const TimeTagStream& b, double delay_ps,
                                 double window_ps,
                                 PairingMode mode = PairingMode::histogram_integration);

std::uint64_t count_coincidences_spans(std::span<const std::uint64_t> a,
                                       std::span<const std::uint64_t> b,
                                       std::uint64_t tag_bin_fs, std::int64_t delay_fs,
                                       std::int64_t window_fs, PairingMode mode);

struct DelaySearchOptions {
  double delay_min_ps = -1.2e9;     // ±1.2 ms
  double delay_max_ps = 1.2e9;
  double coarse_bin_ps = 10000.0;   // 10 ns
  double fine_bin_ps = 82.3;
  double fine_half_span_ps = 20000.0;
};

struct DelaySearchResult {
  CorrelationHistogram fine;
  std::optional<PeakFit> fit;
  double coarse_center_ps = 0.0;
  bool coarse_peak_found = false;
};

// Coarse scan over the full delay range followed by a fine histogram and
// Gaussian fit around the coarse maximum. Keeps memory bounded for wide
// search ranges.
DelaySearchResult two_stage_delay_search(const TimeTagStream& a, const TimeTagStream& b,
                                         const DelaySearchOptions& opts = {});

DelaySearchResult two_stage_delay_search_spans(std::span<const std::uint64_t> a,
                                               std::span<const std::uint64_t> b,
                                               std::uint64_t tag_bin_fs,
                                               const DelaySearchOptions& opts = {});

// "delay_ps,counts" rows.
void save_histogram_csv(const CorrelationHistogram& hist, const std::string& path);

// JSON sidecar with keys center_ps, center_stderr_ps, fwhm_ps,
// fwhm_stderr_ps, amplitude, baseline.
void save_fit_json(const std::optional<PeakFit>& fit, const std::string& path);

}  // namespace qlink
