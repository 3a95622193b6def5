// Command-line front end: simulate a link run to tag files, recover the
// delay and correlation peak, analyze a recorded run against a measurement
// schedule, and solve source settings for target count rates.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 analysis failure
// (e.g. no correlation peak found in the supplied streams).

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qlink/analysis_pipeline.hpp"
#include "qlink/link_config.hpp"
#include "qlink/simulation.hpp"
#include "qlink/timetag_analysis.hpp"
#include "qlink/units.hpp"

namespace {

struct SimulateArgs {
  std::string config;
  std::uint64_t seed = 1;
  std::string out_dir = "run";
};

struct AnalyzeArgs {
  std::string manifest;
  std::string tags_a;
  std::string tags_b;
  std::string config;
  std::string window;
  std::string out_dir = "analysis";
  int repeat = -1;  // -1 = take from config, 0 = all data
  double ec_efficiency = 1.15;
};

struct CorrelateArgs {
  std::string tags_a;
  std::string tags_b;
  std::string min_delay = "-1.2ms";
  std::string max_delay = "1.2ms";
  std::string bin = "82.3ps";
  std::string out = "histogram.csv";
  std::string fit_out;
};

struct CalibrateArgs {
  std::string config;
  double target_singles = 0.0;
  double target_coincidences = 0.0;
  double target_remote_singles = 55.0;
  std::string out;
};

struct ReportArgs {
  std::string manifest;
  std::string out_dir = "analysis";
};

std::string resolve_relative(const std::string& base_file, const std::string& name) {
  const std::filesystem::path p(name);
  if (p.is_absolute()) return name;
  return (std::filesystem::path(base_file).parent_path() / p).string();
}

void print_report_summary(const qlink::AnalysisReport& rep) {
  std::printf("cycles analyzed: %zu (%.6g s)\n", rep.cycles.size(), rep.analyzed_duration_s);
  std::printf("initial delay: %.6g ps\n", rep.initial_delay_ps);
  std::printf("peak: centre %.6g ps, fwhm %.6g ps, drift span %.6g ps\n",
              rep.peak_center_mean_ps, rep.peak_fwhm_mean_ps, rep.peak_span_ps);
  std::printf("visibility: hv %.6g, da %.6g\n", rep.visibility_hv_mean, rep.visibility_da_mean);
  std::printf("fidelity bound: %.6g +/- %.6g\n", rep.fidelity_bound_mean,
              rep.fidelity_bound_stderr);
  std::printf("fidelity ceiling (measured accidentals): %.6g\n", rep.fidelity_ceiling_measured);
  std::printf("qber: %.6g\n", rep.qber_mean);
  std::printf("sifted: %.6g /s, secure: %.6g /s\n", rep.sifted_rate_mean, rep.secure_rate_mean);
  std::printf("coincidence rates in window: correlated %.6g /s, uncorrelated %.6g /s\n",
              rep.corr_rate_mean, rep.unc_rate_mean);
}

int run_simulate(const SimulateArgs& args) {
  const qlink::LinkConfig cfg = qlink::load_link_config(args.config);
  const qlink::RunPaths paths = qlink::run_simulation(cfg, args.seed, args.out_dir);
  const qlink::ManifestData manifest = qlink::load_manifest(paths.manifest);
  std::uint64_t singles_l = 0, singles_r = 0;
  for (const auto& b : manifest.blocks) {
    singles_l += b.singles_local;
    singles_r += b.singles_remote;
  }
  std::printf("wrote %s\n", paths.manifest.c_str());
  std::printf("local tags: %llu, remote tags: %llu\n",
              static_cast<unsigned long long>(singles_l),
              static_cast<unsigned long long>(singles_r));
  return 0;
}

int run_analyze(const AnalyzeArgs& args) {
  std::string tags_a = args.tags_a;
  std::string tags_b = args.tags_b;
  std::optional<qlink::LinkConfig> cfg;
  if (!args.manifest.empty()) {
    const qlink::ManifestData manifest = qlink::load_manifest(args.manifest);
    cfg = manifest.config;
    if (tags_a.empty()) tags_a = resolve_relative(args.manifest, manifest.tags_local);
    if (tags_b.empty()) tags_b = resolve_relative(args.manifest, manifest.tags_remote);
    if (!args.config.empty()) {
      const qlink::LinkConfig other = qlink::load_link_config(args.config);
      const auto same_block = [](const qlink::ScheduleBlock& x, const qlink::ScheduleBlock& y) {
        return x.basis_a.label() == y.basis_a.label() && x.basis_b.label() == y.basis_b.label() &&
               x.duration_s == y.duration_s;
      };
      const bool match = other.schedule.size() == cfg->schedule.size() &&
                         std::equal(other.schedule.begin(), other.schedule.end(),
                                    cfg->schedule.begin(), same_block) &&
                         other.schedule_repeat == cfg->schedule_repeat;
      if (!match) {
        std::fprintf(stderr, "error: schedule in %s does not match the run manifest\n",
                     args.config.c_str());
        return 1;
      }
    }
  } else if (!args.config.empty()) {
    cfg = qlink::load_link_config(args.config);
  }
  if (tags_a.empty() || tags_b.empty()) {
    std::fprintf(stderr, "error: provide --manifest or both --tags-a and --tags-b\n");
    return 1;
  }

  qlink::AnalyzeOptions opts;
  if (cfg) {
    opts.schedule = cfg->schedule;
    opts.schedule_repeat = cfg->schedule_repeat;
    opts.window_ps = cfg->window_ps;
    opts.local_fidelity = cfg->source.local_fidelity;
  }
  if (args.repeat >= 0) opts.schedule_repeat = args.repeat;
  if (!args.window.empty()) opts.window_ps = qlink::parse_time_ps(args.window);
  opts.ec_efficiency = args.ec_efficiency;

  const qlink::AnalysisReport rep = qlink::analyze_files(tags_a, tags_b, opts);
  qlink::write_analysis_outputs(rep, args.out_dir);
  print_report_summary(rep);
  std::printf("outputs in %s\n", args.out_dir.c_str());
  return 0;
}

int run_correlate(const CorrelateArgs& args) {
  qlink::FileTagSource src_a(args.tags_a);
  qlink::FileTagSource src_b(args.tags_b);
  if (src_a.bin_width_fs() != src_b.bin_width_fs()) {
    throw qlink::AnalysisError("tag streams use different bin widths");
  }
  qlink::TimeTagStream a, b;
  a.bin_width_fs = src_a.bin_width_fs();
  b.bin_width_fs = src_b.bin_width_fs();
  while (src_a.next(a.bins, size_t{1} << 22) > 0) {
  }
  while (src_b.next(b.bins, size_t{1} << 22) > 0) {
  }
  const double min_ps = qlink::parse_time_ps(args.min_delay);
  const double max_ps = qlink::parse_time_ps(args.max_delay);
  const double bin_ps = qlink::parse_time_ps(args.bin);
  if (!(max_ps > min_ps) || !(bin_ps > 0.0)) {
    std::fprintf(stderr, "error: need max delay > min delay and positive bin\n");
    return 1;
  }

  const qlink::CorrelationHistogram hist = qlink::cross_correlate(a, b, min_ps, max_ps, bin_ps);
  qlink::save_histogram_csv(hist, args.out);
  std::printf("wrote %s (%zu bins, %llu pairs in range)\n", args.out.c_str(),
              hist.counts.size(), static_cast<unsigned long long>(hist.total_pairs_considered));

  const std::optional<qlink::PeakFit> fit = qlink::fit_gaussian_peak(hist);
  if (!args.fit_out.empty()) qlink::save_fit_json(fit, args.fit_out);
  if (fit) {
    std::printf("peak: centre %.6g +/- %.3g ps, fwhm %.6g +/- %.3g ps\n", fit->center_ps,
                fit->center_stderr_ps, fit->fwhm_ps, fit->fwhm_stderr_ps);
  } else {
    std::printf("no significant peak in the scanned range\n");
  }
  return 0;
}

int run_calibrate(const CalibrateArgs& args) {
  qlink::LinkConfig cfg = qlink::load_link_config(args.config);
  const qlink::CalibrationResult cal = qlink::calibrate_rates(
      args.target_singles, args.target_coincidences, cfg, args.target_remote_singles);
  std::printf("source.pair_rate = %.9g\n", cal.source.pair_rate);
  std::printf("source.local_coupling = %.9g\n", cal.source.local_coupling);
  std::printf("source.remote_coupling = %.9g\n", cal.source.remote_coupling);
  std::printf("achieved local singles: %.6g /s\n", cal.achieved_local_singles_hz);
  std::printf("achieved remote singles: %.6g /s\n", cal.achieved_remote_singles_hz);
  std::printf("achieved coincidences: %.6g /s (shortfall %.3g%%)\n",
              cal.achieved_coincidence_hz, 100.0 * cal.coincidence_shortfall);
  if (!args.out.empty()) {
    cfg.source = cal.source;
    qlink::save_link_config(cfg, args.out);
    std::printf("wrote %s\n", args.out.c_str());
  }
  return 0;
}

int run_report(const ReportArgs& args) {
  AnalyzeArgs a;
  a.manifest = args.manifest;
  a.out_dir = args.out_dir;
  return run_analyze(a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polarization-entanglement link simulator and tag-stream analyzer"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Simulate a run and write tag files");
  c_sim->add_option("--config", sim.config, "link configuration file")->required();
  c_sim->add_option("--seed", sim.seed, "random seed");
  c_sim->add_option("--out", sim.out_dir, "output directory");

  AnalyzeArgs ana;
  CLI::App* c_ana = app.add_subcommand("analyze", "Analyze a pair of tag streams");
  c_ana->add_option("--manifest", ana.manifest, "run manifest (provides tags and schedule)");
  c_ana->add_option("--tags-a", ana.tags_a, "local tag file");
  c_ana->add_option("--tags-b", ana.tags_b, "remote tag file");
  c_ana->add_option("--config", ana.config, "link configuration (schedule/window)");
  c_ana->add_option("--window", ana.window, "coincidence window, e.g. 823ps");
  c_ana->add_option("--repeat", ana.repeat, "schedule cycles to analyze (0 = all data)");
  c_ana->add_option("--ec-efficiency", ana.ec_efficiency, "error-correction inefficiency");
  c_ana->add_option("--out", ana.out_dir, "output directory");

  CorrelateArgs cor;
  CLI::App* c_cor = app.add_subcommand("correlate", "Cross-correlation histogram of two streams");
  c_cor->add_option("--tags-a", cor.tags_a, "first tag file")->required();
  c_cor->add_option("--tags-b", cor.tags_b, "second tag file")->required();
  c_cor->add_option("--min", cor.min_delay, "minimum delay, e.g. -1.2ms");
  c_cor->add_option("--max", cor.max_delay, "maximum delay, e.g. 1.2ms");
  c_cor->add_option("--bin", cor.bin, "histogram bin, e.g. 82.3ps");
  c_cor->add_option("--out", cor.out, "histogram CSV path");
  c_cor->add_option("--fit", cor.fit_out, "peak fit JSON path");

  CalibrateArgs cal;
  CLI::App* c_cal = app.add_subcommand("calibrate", "Solve source settings for target rates");
  c_cal->add_option("--config", cal.config, "link configuration file")->required();
  c_cal->add_option("--target-singles", cal.target_singles, "local singles target, /s")
      ->required();
  c_cal->add_option("--target-coincidences", cal.target_coincidences, "coincidence target, /s")
      ->required();
  c_cal->add_option("--target-remote-singles", cal.target_remote_singles,
                    "remote singles target, /s");
  c_cal->add_option("--out", cal.out, "write the calibrated configuration here");

  ReportArgs repa;
  CLI::App* c_rep = app.add_subcommand("report", "Re-run the analysis recorded in a manifest");
  c_rep->add_option("--manifest", repa.manifest, "run manifest")->required();
  c_rep->add_option("--out", repa.out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_ana->parsed()) return run_analyze(ana);
    if (c_cor->parsed()) return run_correlate(cor);
    if (c_cal->parsed()) return run_calibrate(cal);
    if (c_rep->parsed()) return run_report(repa);
  } catch (const qlink::AnalysisError& e) {
    std::fprintf(stderr, "analysis failed: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
