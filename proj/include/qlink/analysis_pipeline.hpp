#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlink/detection.hpp"
#include "qlink/entanglement_metrics.hpp"
#include "qlink/link_config.hpp"
#include "qlink/tag_io.hpp"
#include "qlink/timetag_analysis.hpp"

// End-to-end evaluation of a pair of recorded tag streams against a
// measurement schedule: delay recovery, per-block singles/coincidence
// accounting, per-cycle visibilities, fidelity bound, QBER and key rate,
// and drift of the correlation peak over the run.
//
// The local stream is consumed incrementally (it can be far larger than
// memory); the remote stream is loaded up front (it is sparse after the
// high-loss channel).

namespace qlink {

// Raised when the input streams cannot be analyzed (no correlation peak,
// unsorted data, mismatched bin widths, shorter than one schedule cycle).
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pull-based tag supplier so the analyzer is agnostic to file vs. memory.
class TagSource {
 public:
  virtual ~TagSource() = default;
  virtual std::uint64_t bin_width_fs() const = 0;
  virtual void reset() = 0;
  // Appends up to max_records bins to `out`; returns the number appended
  // (0 once the stream is exhausted).
  virtual size_t next(std::vector<std::uint64_t>& out, size_t max_records) = 0;
};

class FileTagSource final : public TagSource {
 public:
  explicit FileTagSource(const std::string& path);
  std::uint64_t bin_width_fs() const override;
  void reset() override;
  size_t next(std::vector<std::uint64_t>& out, size_t max_records) override;

 private:
  TagFileReader reader_;
  std::vector<std::uint8_t> channel_scratch_;
};

class MemoryTagSource final : public TagSource {
 public:
  MemoryTagSource(std::vector<std::uint64_t> bins, std::uint64_t bin_width_fs);
  explicit MemoryTagSource(const TimeTagStream& stream);
  std::uint64_t bin_width_fs() const override { return bin_width_fs_; }
  void reset() override { pos_ = 0; }
  size_t next(std::vector<std::uint64_t>& out, size_t max_records) override;

 private:
  std::vector<std::uint64_t> bins_;
  std::uint64_t bin_width_fs_ = 82300;
  size_t pos_ = 0;
};

struct AnalyzeOptions {
  std::vector<ScheduleBlock> schedule = default_schedule();
  int schedule_repeat = 0;      // 0 = as many complete cycles as the data holds
  double window_ps = 823.0;     // coincidence window (10 tagger bins)
  double local_fidelity = 0.98;  // state fidelity fed to the ceiling model
  double ec_efficiency = 1.15;   // error-correction inefficiency factor
  DelaySearchOptions search;
};

struct BlockResult {
  int cycle = 0;
  int index = 0;
  BasisSetting basis_a;
  BasisSetting basis_b;
  double start_s = 0.0;
  double duration_s = 0.0;
  std::uint64_t singles_local = 0;
  std::uint64_t singles_remote = 0;
  std::uint64_t coincidences = 0;
  double coincidence_rate = 0.0;
};

struct CycleResult {
  int cycle = 0;
  double time_h = 0.0;  // end of the cycle, hours from the run start
  std::optional<VisibilityResult> visibility_hv;
  std::optional<VisibilityResult> visibility_da;
  double fidelity_bound = 0.0;
  double fidelity_bound_err = 0.0;
  double qber = 0.0;
  double qber_err = 0.0;
  double sifted_rate = 0.0;
  double secure_rate = 0.0;
  double corr_rate = 0.0;  // pooled in-window rate, correlated settings
  double unc_rate = 0.0;   // pooled in-window rate, uncorrelated settings
  std::optional<PeakFit> peak;  // fine fit over this cycle's correlations
};

struct AnalysisReport {
  std::uint64_t bin_width_fs = 82300;
  double window_ps = 823.0;
  double ec_efficiency = 1.15;
  double local_fidelity = 0.98;

  double initial_delay_ps = 0.0;
  PeakFit initial_fit;
  CorrelationHistogram initial_histogram;

  std::vector<BlockResult> blocks;
  std::vector<CycleResult> cycles;

  // Aggregates over complete cycles (means; NaN entries are skipped).
  double visibility_hv_mean = 0.0;
  double visibility_da_mean = 0.0;
  double fidelity_bound_mean = 0.0;
  double fidelity_bound_stderr = 0.0;
  double qber_mean = 0.0;
  double sifted_rate_mean = 0.0;
  double secure_rate_mean = 0.0;
  double corr_rate_mean = 0.0;
  double unc_rate_mean = 0.0;
  double fidelity_ceiling_measured = 0.0;

  double peak_center_mean_ps = 0.0;
  double peak_span_ps = 0.0;       // max − min fitted centre across cycles
  double peak_fwhm_mean_ps = 0.0;

  std::uint64_t total_local_tags = 0;
  std::uint64_t total_remote_tags = 0;
  double analyzed_duration_s = 0.0;
};

AnalysisReport analyze(TagSource& local, TagSource& remote, const AnalyzeOptions& options);

AnalysisReport analyze_files(const std::string& local_path, const std::string& remote_path,
                             const AnalyzeOptions& options);

// Writes report.csv, visibility.csv, blocks.csv, histogram.csv, fit.json and
// summary.txt into out_dir (created if needed).
void write_analysis_outputs(const AnalysisReport& report, const std::string& out_dir);

}  // namespace qlink
