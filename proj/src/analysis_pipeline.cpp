#include "qlink/analysis_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace qlink {

FileTagSource::FileTagSource(const std::string& path) : reader_(path) {}

std::uint64_t FileTagSource::bin_width_fs() const { return reader_.bin_width_fs(); }

void FileTagSource::reset() { reader_.reset(); }

size_t FileTagSource::next(std::vector<std::uint64_t>& out, size_t max_records) {
  channel_scratch_.clear();
  return reader_.read(out, channel_scratch_, max_records);
}

MemoryTagSource::MemoryTagSource(std::vector<std::uint64_t> bins, std::uint64_t bin_width_fs)
    : bins_(std::move(bins)), bin_width_fs_(bin_width_fs) {}

MemoryTagSource::MemoryTagSource(const TimeTagStream& stream)
    : bins_(stream.bins), bin_width_fs_(stream.bin_width_fs) {}

size_t MemoryTagSource::next(std::vector<std::uint64_t>& out, size_t max_records) {
  const size_t n = std::min(max_records, bins_.size() - pos_);
  out.insert(out.end(), bins_.begin() + pos_, bins_.begin() + pos_ + n);
  pos_ += n;
  return n;
}

namespace {

constexpr size_t kBatchRecords = size_t{1} << 22;            // 32 MB of tags per read
constexpr std::int64_t kRemoteSliceMarginFs = 1'000'000'000;  // 1 µs around each block

const double kNaN = std::numeric_limits<double>::quiet_NaN();

enum class PairKind { correlated, uncorrelated, other };

// −1 when the angle is not one of the four canonical settings.
int family_of(double angle_deg) {
  const double a = std::abs(std::remainder(angle_deg, 180.0));
  if (a < 1e-6 || std::abs(a - 90.0) < 1e-6) return 0;
  if (std::abs(a - 45.0) < 1e-6) return 1;
  return -1;
}

PairKind classify(const BasisSetting& a, const BasisSetting& b) {
  const int fa = family_of(a.angle_deg);
  const int fb = family_of(b.angle_deg);
  if (fa < 0 || fb < 0 || fa != fb) return PairKind::other;
  const double diff = std::abs(std::remainder(a.angle_deg - b.angle_deg, 180.0));
  if (diff < 1e-6) return PairKind::uncorrelated;
  if (std::abs(diff - 90.0) < 1e-6) return PairKind::correlated;
  return PairKind::other;
}

std::uint64_t ceil_bin(__int128 t_fs, std::uint64_t bin_fs) {
  if (t_fs <= 0) return 0;
  const __int128 w = static_cast<__int128>(bin_fs);
  return static_cast<std::uint64_t>((t_fs + w - 1) / w);
}

CorrelationHistogram make_fine_histogram(double center_ps, const DelaySearchOptions& search,
                                         std::uint64_t tag_bin_fs) {
  CorrelationHistogram h;
  h.bin_width_fs = std::llround(search.fine_bin_ps * 1000.0);
  // Snap the start so that tag-grid delay values fall on bin centres; delay
  // differences are exact multiples of the tag bin, and an unaligned grid
  // would displace every fitted centre by a constant sub-bin offset that
  // changes from cycle to cycle.
  const auto tag_w = static_cast<std::int64_t>(tag_bin_fs);
  const std::int64_t half = tag_w / 2;
  const std::int64_t want = std::llround((center_ps - search.fine_half_span_ps) * 1000.0);
  auto fdiv = [](std::int64_t n, std::int64_t d) {
    std::int64_t q = n / d;
    return (n % d != 0 && ((n < 0) != (d < 0))) ? q - 1 : q;
  };
  h.start_delay_fs = fdiv(want + half, tag_w) * tag_w - half;
  const std::int64_t stop_fs = std::llround((center_ps + search.fine_half_span_ps) * 1000.0);
  const std::int64_t span = stop_fs - h.start_delay_fs;
  const std::int64_t nbins = (span + h.bin_width_fs - 1) / h.bin_width_fs;
  h.counts.assign(static_cast<size_t>(std::max<std::int64_t>(nbins, 1)), 0);
  return h;
}

double mean_of_finite(const std::vector<double>& xs) {
  double sum = 0.0;
  size_t n = 0;
  for (double x : xs) {
    if (std::isfinite(x)) {
      sum += x;
      ++n;
    }
  }
  return n > 0 ? sum / static_cast<double>(n) : kNaN;
}

// Incremental analyzer state, advanced block by block as the local stream
// is consumed.
struct Analyzer {
  const AnalyzeOptions& opts;
  const std::vector<ScheduleBlock>& schedule;
  std::uint64_t bin_fs;
  const std::vector<std::uint64_t>& remote;

  std::vector<std::int64_t> prefix_ps;  // schedule offsets within one cycle
  std::int64_t cycle_ps = 0;

  AnalysisReport report;

  bool searched = false;
  std::int64_t delay_fs = 0;  // tracked local→remote delay
  std::vector<std::vector<std::uint64_t>> pending;  // blocks awaiting the delay search
  std::uint64_t pending_first_block = 0;

  CorrelationHistogram cycle_hist;
  std::vector<MeasurementRecord> cycle_records;
  double corr_coinc = 0.0, corr_dur = 0.0, unc_coinc = 0.0, unc_dur = 0.0;

  Analyzer(const AnalyzeOptions& o, const std::vector<ScheduleBlock>& sched, std::uint64_t w,
           const std::vector<std::uint64_t>& rem)
      : opts(o), schedule(sched), bin_fs(w), remote(rem) {
    prefix_ps.assign(schedule.size() + 1, 0);
    for (size_t i = 0; i < schedule.size(); ++i) {
      prefix_ps[i + 1] = prefix_ps[i] + std::llround(schedule[i].duration_s * 1e12);
    }
    cycle_ps = prefix_ps.back();
  }

  __int128 block_start_fs(std::uint64_t k) const {
    const std::uint64_t c = k / schedule.size();
    const std::uint64_t i = k % schedule.size();
    return (static_cast<__int128>(c) * cycle_ps + prefix_ps[i]) * 1000;
  }

  std::uint64_t block_start_bin(std::uint64_t k) const {
    return ceil_bin(block_start_fs(k), bin_fs);
  }

  // Remote tags whose shifted time falls in [t0_fs, t1_fs).
  std::span<const std::uint64_t> remote_slice(__int128 t0_fs, __int128 t1_fs) const {
    const std::uint64_t lo_bin = ceil_bin(t0_fs + delay_fs, bin_fs);
    const std::uint64_t hi_bin = ceil_bin(t1_fs + delay_fs, bin_fs);
    const auto lo = std::lower_bound(remote.begin(), remote.end(), lo_bin);
    const auto hi = std::lower_bound(lo, remote.end(), hi_bin);
    return {remote.data() + (lo - remote.begin()), static_cast<size_t>(hi - lo)};
  }

  void finalize_block(std::uint64_t k, std::vector<std::uint64_t>& bins) {
    if (!searched) {
      if (pending.empty()) pending_first_block = k;
      pending.push_back(std::move(bins));
      bins = {};
      DelaySearchResult sr =
          two_stage_delay_search_spans(pending.back(), remote, bin_fs, opts.search);
      if (!sr.fit) return;  // keep buffering until a block shows a peak
      searched = true;
      report.initial_delay_ps = sr.fit->center_ps;
      report.initial_fit = *sr.fit;
      report.initial_histogram = sr.fine;
      delay_fs = std::llround(sr.fit->center_ps * 1000.0);
      cycle_hist = make_fine_histogram(report.initial_delay_ps, opts.search, bin_fs);
      std::vector<std::vector<std::uint64_t>> work;
      work.swap(pending);
      for (size_t i = 0; i < work.size(); ++i) {
        process_block(pending_first_block + i, work[i]);
      }
      return;
    }
    process_block(k, bins);
  }

  void process_block(std::uint64_t k, const std::vector<std::uint64_t>& bins) {
    const size_t nb = schedule.size();
    const std::uint64_t cycle = k / nb;
    const size_t idx = k % nb;
    const ScheduleBlock& blk = schedule[idx];
    const __int128 t0 = block_start_fs(k);
    const __int128 t1 = block_start_fs(k + 1);

    BlockResult br;
    br.cycle = static_cast<int>(cycle);
    br.index = static_cast<int>(idx);
    br.basis_a = blk.basis_a;
    br.basis_b = blk.basis_b;
    br.start_s = static_cast<double>(static_cast<std::int64_t>(t0 / 1000)) * 1e-12;
    br.duration_s = blk.duration_s;
    br.singles_local = bins.size();
    br.singles_remote = remote_slice(t0, t1).size();

    const auto wide = remote_slice(t0 - kRemoteSliceMarginFs, t1 + kRemoteSliceMarginFs);
    const std::int64_t window_fs = std::llround(opts.window_ps * 1000.0);
    br.coincidences = count_coincidences_spans(bins, wide, bin_fs, delay_fs, window_fs,
                                               PairingMode::histogram_integration);
    br.coincidence_rate = blk.duration_s > 0.0
                              ? static_cast<double>(br.coincidences) / blk.duration_s
                              : 0.0;
    accumulate_cross_correlation(cycle_hist, bins, wide, bin_fs);
    report.blocks.push_back(br);

    MeasurementRecord rec;
    rec.basis_a = blk.basis_a;
    rec.basis_b = blk.basis_b;
    rec.duration_s = blk.duration_s;
    rec.coincidences = br.coincidences;
    rec.singles_a = br.singles_local;
    rec.singles_b = br.singles_remote;
    cycle_records.push_back(rec);

    switch (classify(blk.basis_a, blk.basis_b)) {
      case PairKind::correlated:
        corr_coinc += static_cast<double>(br.coincidences);
        corr_dur += blk.duration_s;
        break;
      case PairKind::uncorrelated:
        unc_coinc += static_cast<double>(br.coincidences);
        unc_dur += blk.duration_s;
        break;
      case PairKind::other:
        break;
    }

    if (idx == nb - 1) finish_cycle(static_cast<int>(cycle));
  }

  void finish_cycle(int cycle) {
    CycleResult cr;
    cr.cycle = cycle;
    cr.time_h = static_cast<double>(cycle + 1) * static_cast<double>(cycle_ps) * 1e-12 / 3600.0;

    std::vector<MeasurementRecord> recs_hv, recs_da;
    for (const auto& r : cycle_records) {
      const int fa = family_of(r.basis_a.angle_deg);
      const int fb = family_of(r.basis_b.angle_deg);
      if (fa == 0 && fb == 0) recs_hv.push_back(r);
      if (fa == 1 && fb == 1) recs_da.push_back(r);
    }
    try {
      if (recs_hv.size() == 4) cr.visibility_hv = visibility(recs_hv);
    } catch (const std::invalid_argument&) {
    }
    try {
      if (recs_da.size() == 4) cr.visibility_da = visibility(recs_da);
    } catch (const std::invalid_argument&) {
    }

    if (cr.visibility_hv && cr.visibility_da) {
      // The bound equals the mean visibility, so QBER = (1 − bound)/2.
      cr.fidelity_bound =
          fidelity_lower_bound(cr.visibility_hv->visibility, cr.visibility_da->visibility);
      cr.fidelity_bound_err = 0.5 * std::hypot(cr.visibility_hv->std_error,
                                               cr.visibility_da->std_error);
      cr.qber = qber_from_visibility(cr.fidelity_bound);
      cr.qber_err = 0.5 * cr.fidelity_bound_err;
    } else {
      cr.fidelity_bound = kNaN;
      cr.fidelity_bound_err = kNaN;
      cr.qber = kNaN;
      cr.qber_err = kNaN;
    }

    cr.sifted_rate = cycle_records.size() == 8 ? sifted_rate(cycle_records) : kNaN;
    cr.secure_rate = (std::isfinite(cr.sifted_rate) && std::isfinite(cr.qber))
                         ? secure_rate(cr.sifted_rate, cr.qber, opts.ec_efficiency)
                         : kNaN;

    cr.corr_rate = corr_dur > 0.0 ? corr_coinc / corr_dur : kNaN;
    cr.unc_rate = unc_dur > 0.0 ? unc_coinc / unc_dur : kNaN;

    cr.peak = fit_gaussian_peak(cycle_hist);
    if (cr.peak) delay_fs = std::llround(cr.peak->center_ps * 1000.0);

    report.cycles.push_back(cr);

    cycle_records.clear();
    corr_coinc = corr_dur = unc_coinc = unc_dur = 0.0;
    std::fill(cycle_hist.counts.begin(), cycle_hist.counts.end(), 0);
    cycle_hist.total_pairs_considered = 0;
  }
};

}  // namespace

AnalysisReport analyze(TagSource& local, TagSource& remote, const AnalyzeOptions& options) {
  if (options.schedule.empty()) throw std::invalid_argument("schedule must not be empty");
  for (const auto& b : options.schedule) {
    if (!(b.duration_s > 0.0)) throw std::invalid_argument("block durations must be positive");
  }
  if (!(options.window_ps > 0.0)) throw std::invalid_argument("window_ps must be positive");
  if (local.bin_width_fs() != remote.bin_width_fs()) {
    throw AnalysisError("tag streams use different bin widths");
  }
  const std::uint64_t bin_fs = local.bin_width_fs();
  if (bin_fs == 0) throw AnalysisError("tag stream bin width is zero");

  std::vector<std::uint64_t> remote_bins;
  while (remote.next(remote_bins, kBatchRecords) > 0) {
  }
  if (!std::is_sorted(remote_bins.begin(), remote_bins.end())) {
    throw AnalysisError("remote tag stream is not time-ordered");
  }

  Analyzer an(options, options.schedule, bin_fs, remote_bins);
  an.report.bin_width_fs = bin_fs;
  an.report.window_ps = options.window_ps;
  an.report.ec_efficiency = options.ec_efficiency;
  an.report.local_fidelity = options.local_fidelity;
  an.report.total_remote_tags = remote_bins.size();

  const std::uint64_t block_limit =
      options.schedule_repeat > 0
          ? static_cast<std::uint64_t>(options.schedule_repeat) * options.schedule.size()
          : std::numeric_limits<std::uint64_t>::max();

  std::vector<std::uint64_t> batch;
  std::vector<std::uint64_t> current;
  std::uint64_t k = 0;
  std::uint64_t next_bound = an.block_start_bin(1);
  std::uint64_t last_tag = 0;
  bool any_tag = false;
  bool stopped = false;

  while (!stopped) {
    batch.clear();
    if (local.next(batch, kBatchRecords) == 0) break;
    an.report.total_local_tags += batch.size();
    if (!std::is_sorted(batch.begin(), batch.end()) ||
        (any_tag && !batch.empty() && batch.front() < last_tag)) {
      throw AnalysisError("local tag stream is not time-ordered");
    }
    if (!batch.empty()) {
      last_tag = batch.back();
      any_tag = true;
    }

    size_t pos = 0;
    while (pos < batch.size()) {
      if (k >= block_limit) {
        stopped = true;
        break;
      }
      const auto split = std::lower_bound(batch.begin() + pos, batch.end(), next_bound);
      current.insert(current.end(), batch.begin() + pos, split);
      pos = static_cast<size_t>(split - batch.begin());
      if (split != batch.end()) {
        an.finalize_block(k, current);
        current.clear();
        ++k;
        next_bound = an.block_start_bin(k + 1);
      }
    }
  }
  if (!stopped && !current.empty() && k < block_limit) {
    an.finalize_block(k, current);
    current.clear();
  }

  if (!an.searched) {
    throw AnalysisError(
        "no correlation peak found between the streams (is the first schedule block a "
        "correlated setting?)");
  }

  AnalysisReport& rep = an.report;
  if (rep.cycles.empty()) {
    throw AnalysisError("tag streams do not cover one complete schedule cycle");
  }

  std::vector<double> vhv, vda, fb, fberr, qb, sift, sec, corr, unc;
  for (const auto& c : rep.cycles) {
    if (c.visibility_hv) vhv.push_back(c.visibility_hv->visibility);
    if (c.visibility_da) vda.push_back(c.visibility_da->visibility);
    fb.push_back(c.fidelity_bound);
    if (std::isfinite(c.fidelity_bound_err)) fberr.push_back(c.fidelity_bound_err);
    qb.push_back(c.qber);
    sift.push_back(c.sifted_rate);
    sec.push_back(c.secure_rate);
    corr.push_back(c.corr_rate);
    unc.push_back(c.unc_rate);
  }
  rep.visibility_hv_mean = mean_of_finite(vhv);
  rep.visibility_da_mean = mean_of_finite(vda);
  rep.fidelity_bound_mean = mean_of_finite(fb);
  if (!fberr.empty()) {
    double ss = 0.0;
    for (double e : fberr) ss += e * e;
    rep.fidelity_bound_stderr = std::sqrt(ss) / static_cast<double>(fberr.size());
  } else {
    rep.fidelity_bound_stderr = kNaN;
  }
  rep.qber_mean = mean_of_finite(qb);
  rep.sifted_rate_mean = mean_of_finite(sift);
  rep.secure_rate_mean = mean_of_finite(sec);
  rep.corr_rate_mean = mean_of_finite(corr);
  rep.unc_rate_mean = mean_of_finite(unc);
  if (std::isfinite(rep.corr_rate_mean) && std::isfinite(rep.unc_rate_mean)) {
    rep.fidelity_ceiling_measured =
        fidelity_ceiling(options.local_fidelity, rep.corr_rate_mean - rep.unc_rate_mean,
                         rep.unc_rate_mean);
  } else {
    rep.fidelity_ceiling_measured = kNaN;
  }

  std::vector<double> centers, fwhms;
  for (const auto& c : rep.cycles) {
    if (c.peak) {
      centers.push_back(c.peak->center_ps);
      fwhms.push_back(c.peak->fwhm_ps);
    }
  }
  if (centers.empty()) {
    rep.peak_center_mean_ps = rep.initial_fit.center_ps;
    rep.peak_fwhm_mean_ps = rep.initial_fit.fwhm_ps;
    rep.peak_span_ps = 0.0;
  } else {
    rep.peak_center_mean_ps = mean_of_finite(centers);
    rep.peak_fwhm_mean_ps = mean_of_finite(fwhms);
    rep.peak_span_ps = *std::max_element(centers.begin(), centers.end()) -
                       *std::min_element(centers.begin(), centers.end());
  }

  rep.analyzed_duration_s =
      static_cast<double>(rep.cycles.size()) * static_cast<double>(an.cycle_ps) * 1e-12;
  return rep;
}

AnalysisReport analyze_files(const std::string& local_path, const std::string& remote_path,
                             const AnalyzeOptions& options) {
  FileTagSource local(local_path);
  FileTagSource remote(remote_path);
  return analyze(local, remote, options);
}

namespace {

FILE* open_or_throw(const std::filesystem::path& p) {
  FILE* f = std::fopen(p.string().c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

}  // namespace

void write_analysis_outputs(const AnalysisReport& report, const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);

  {
    FILE* f = open_or_throw(dir / "report.csv");
    std::fprintf(f, "time_h,qber,qber_err,secure_rate,peak_pos_ps,peak_err_ps\n");
    for (const auto& c : report.cycles) {
      const double pos = c.peak ? c.peak->center_ps : kNaN;
      const double err = c.peak ? c.peak->center_stderr_ps : kNaN;
      std::fprintf(f, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", c.time_h, c.qber, c.qber_err,
                   c.secure_rate, pos, err);
    }
    std::fclose(f);
  }
  {
    FILE* f = open_or_throw(dir / "visibility.csv");
    std::fprintf(f, "cycle,time_h,family,visibility,std_error\n");
    for (const auto& c : report.cycles) {
      if (c.visibility_hv) {
        std::fprintf(f, "%d,%.9g,hv,%.9g,%.9g\n", c.cycle, c.time_h,
                     c.visibility_hv->visibility, c.visibility_hv->std_error);
      }
      if (c.visibility_da) {
        std::fprintf(f, "%d,%.9g,da,%.9g,%.9g\n", c.cycle, c.time_h,
                     c.visibility_da->visibility, c.visibility_da->std_error);
      }
    }
    std::fclose(f);
  }
  {
    FILE* f = open_or_throw(dir / "blocks.csv");
    std::fprintf(f,
                 "cycle,index,basis_a,basis_b,duration_s,singles_local,singles_remote,"
                 "coincidences,coincidence_rate\n");
    for (const auto& b : report.blocks) {
      std::fprintf(f, "%d,%d,%s,%s,%.9g,%llu,%llu,%llu,%.9g\n", b.cycle, b.index,
                   b.basis_a.label().c_str(), b.basis_b.label().c_str(), b.duration_s,
                   static_cast<unsigned long long>(b.singles_local),
                   static_cast<unsigned long long>(b.singles_remote),
                   static_cast<unsigned long long>(b.coincidences), b.coincidence_rate);
    }
    std::fclose(f);
  }

  save_histogram_csv(report.initial_histogram, (dir / "histogram.csv").string());
  save_fit_json(report.initial_fit, (dir / "fit.json").string());

  {
    FILE* f = open_or_throw(dir / "summary.txt");
    std::fprintf(f, "cycles = %zu\n", report.cycles.size());
    std::fprintf(f, "bin_width_fs = %llu\n",
                 static_cast<unsigned long long>(report.bin_width_fs));
    std::fprintf(f, "window_ps = %.9g\n", report.window_ps);
    std::fprintf(f, "initial_delay_ps = %.9g\n", report.initial_delay_ps);
    std::fprintf(f, "visibility_hv_mean = %.9g\n", report.visibility_hv_mean);
    std::fprintf(f, "visibility_da_mean = %.9g\n", report.visibility_da_mean);
    std::fprintf(f, "fidelity_bound_mean = %.9g\n", report.fidelity_bound_mean);
    std::fprintf(f, "fidelity_bound_stderr = %.9g\n", report.fidelity_bound_stderr);
    std::fprintf(f, "qber_mean = %.9g\n", report.qber_mean);
    std::fprintf(f, "sifted_rate_mean = %.9g\n", report.sifted_rate_mean);
    std::fprintf(f, "secure_rate_mean = %.9g\n", report.secure_rate_mean);
    std::fprintf(f, "corr_rate_mean = %.9g\n", report.corr_rate_mean);
    std::fprintf(f, "unc_rate_mean = %.9g\n", report.unc_rate_mean);
    std::fprintf(f, "fidelity_ceiling_measured = %.9g\n", report.fidelity_ceiling_measured);
    std::fprintf(f, "peak_center_mean_ps = %.9g\n", report.peak_center_mean_ps);
    std::fprintf(f, "peak_span_ps = %.9g\n", report.peak_span_ps);
    std::fprintf(f, "peak_fwhm_mean_ps = %.9g\n", report.peak_fwhm_mean_ps);
    std::fprintf(f, "ec_efficiency = %.9g\n", report.ec_efficiency);
    std::fprintf(f, "local_fidelity = %.9g\n", report.local_fidelity);
    std::fprintf(f, "total_local_tags = %llu\n",
                 static_cast<unsigned long long>(report.total_local_tags));
    std::fprintf(f, "total_remote_tags = %llu\n",
                 static_cast<unsigned long long>(report.total_remote_tags));
    std::fprintf(f, "analyzed_duration_s = %.9g\n", report.analyzed_duration_s);
    std::fclose(f);
  }
}

}  // namespace qlink
