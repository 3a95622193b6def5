#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "qlink/link_config.hpp"
#include "qlink/timetag_analysis.hpp"

using namespace qlink;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string cli_binary() {
  const char* env = std::getenv("QLINK_CLI");
  REQUIRE_MESSAGE(env != nullptr, "QLINK_CLI must point at the command-line binary");
  return env;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string stamp = std::to_string(++counter);
  const std::string out_path =
      (std::filesystem::temp_directory_path() / ("qlink_cli_out_" + stamp)).string();
  const std::string err_path =
      (std::filesystem::temp_directory_path() / ("qlink_cli_err_" + stamp)).string();
  const std::string cmd = cli_binary() + " " + args + " >" + out_path + " 2>" + err_path;
  const int status = std::system(cmd.c_str());
  CliResult res;
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  res.out = slurp(out_path);
  res.err = slurp(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  return res;
}

std::filesystem::path work_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "qlink_cli_work";
  std::filesystem::create_directories(dir);
  return dir;
}

// Small run the workflow tests share: moderate loss, two-second blocks.
LinkConfig small_config() {
  LinkConfig cfg;
  cfg.source.pair_rate = 1.0e6;
  cfg.channel.loss_db = 20.0;
  cfg.channel.birefringence.mode = BirefringenceSpec::Mode::none;
  for (auto& b : cfg.schedule) b.duration_s = 2.0;
  return cfg;
}

std::string config_path() {
  static const std::string path = [] {
    const std::string p = (work_dir() / "link.cfg").string();
    save_link_config(small_config(), p);
    return p;
  }();
  return path;
}

// One shared simulated run (the CLI is slow enough to make reuse worthwhile).
std::string run_dir() {
  static const std::string dir = [] {
    const std::string d = (work_dir() / "run").string();
    const CliResult res = run_cli("simulate --config " + config_path() + " --seed 11 --out " + d);
    REQUIRE(res.code == 0);
    REQUIRE(res.out.find("wrote ") != std::string::npos);
    REQUIRE(res.out.find("local tags:") != std::string::npos);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("simulate writes a complete, reproducible run directory") {
  const std::string dir = run_dir();
  CHECK(std::filesystem::exists(dir + "/manifest.json"));
  CHECK(std::filesystem::exists(dir + "/tags_local.qtt"));
  CHECK(std::filesystem::exists(dir + "/tags_remote.qtt"));
  CHECK(std::filesystem::file_size(dir + "/tags_local.qtt") > 1000000);

  // Same seed: byte-identical tag files. Different seed: different bytes.
  const std::string again = (work_dir() / "run_again").string();
  REQUIRE(run_cli("simulate --config " + config_path() + " --seed 11 --out " + again).code == 0);
  CHECK(slurp(again + "/tags_local.qtt") == slurp(dir + "/tags_local.qtt"));
  CHECK(slurp(again + "/tags_remote.qtt") == slurp(dir + "/tags_remote.qtt"));

  const std::string other = (work_dir() / "run_other").string();
  REQUIRE(run_cli("simulate --config " + config_path() + " --seed 12 --out " + other).code == 0);
  CHECK(slurp(other + "/tags_local.qtt") != slurp(dir + "/tags_local.qtt"));

  std::filesystem::remove_all(again);
  std::filesystem::remove_all(other);
}

TEST_CASE("analyze consumes a manifest and writes the analysis outputs") {
  const std::string dir = run_dir();
  const std::string out = (work_dir() / "analysis").string();
  const CliResult res = run_cli("analyze --manifest " + dir + "/manifest.json --out " + out);
  CAPTURE(res.err);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("cycles analyzed: 1") != std::string::npos);
  CHECK(res.out.find("fidelity bound:") != std::string::npos);
  CHECK(res.out.find("secure:") != std::string::npos);
  for (const char* leaf :
       {"report.csv", "visibility.csv", "blocks.csv", "histogram.csv", "fit.json", "summary.txt"}) {
    CAPTURE(leaf);
    CHECK(std::filesystem::exists(out + "/" + std::string(leaf)));
  }

  // A config whose schedule matches the manifest is accepted.
  const CliResult ok = run_cli("analyze --manifest " + dir + "/manifest.json --config " +
                               config_path() + " --out " + out);
  CHECK(ok.code == 0);
}

TEST_CASE("report regenerates the same summary from the manifest alone") {
  const std::string dir = run_dir();
  const std::string out1 = (work_dir() / "analysis_a").string();
  const std::string out2 = (work_dir() / "analysis_b").string();
  REQUIRE(run_cli("analyze --manifest " + dir + "/manifest.json --out " + out1).code == 0);
  REQUIRE(run_cli("report --manifest " + dir + "/manifest.json --out " + out2).code == 0);
  CHECK(slurp(out1 + "/summary.txt") == slurp(out2 + "/summary.txt"));
  CHECK(slurp(out1 + "/report.csv") == slurp(out2 + "/report.csv"));
  std::filesystem::remove_all(out1);
  std::filesystem::remove_all(out2);
}

TEST_CASE("analyze rejects mismatched or missing inputs") {
  const std::string dir = run_dir();

  // A config whose schedule disagrees with the recorded run is an error.
  LinkConfig other = small_config();
  other.schedule[0].duration_s = 3.0;
  const std::string other_path = (work_dir() / "other.cfg").string();
  save_link_config(other, other_path);
  const CliResult mismatch = run_cli("analyze --manifest " + dir + "/manifest.json --config " +
                                     other_path + " --out " + (work_dir() / "x").string());
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("does not match") != std::string::npos);

  // No manifest and no tag files: usage error.
  const CliResult none = run_cli("analyze --out " + (work_dir() / "y").string());
  CHECK(none.code == 1);
  CHECK(none.err.find("provide --manifest") != std::string::npos);

  // Missing file: configuration error, not a crash.
  const CliResult missing = run_cli("analyze --manifest /nonexistent/manifest.json");
  CHECK(missing.code == 1);
}

TEST_CASE("analyze reports uncorrelated streams as an analysis failure") {
  // A source that never fires leaves darks only; there is no correlation
  // peak, which is an analysis failure (exit 2), not a usage error.
  LinkConfig dark = small_config();
  dark.source.pair_rate = 0.0;
  const std::string cfg_path = (work_dir() / "darks.cfg").string();
  save_link_config(dark, cfg_path);
  const std::string dir = (work_dir() / "darkrun").string();
  const CliResult sim = run_cli("simulate --config " + cfg_path + " --seed 2 --out " + dir);
  REQUIRE(sim.code == 0);

  const CliResult res = run_cli("analyze --manifest " + dir + "/manifest.json --out " +
                                (work_dir() / "darkout").string());
  CHECK(res.code == 2);
  CHECK(res.err.find("analysis failed") != std::string::npos);
  CHECK(res.err.find("correlated setting") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("correlate recovers the fibre delay from raw tag files") {
  const std::string dir = run_dir();
  const std::string hist_csv = (work_dir() / "cli_hist.csv").string();
  const std::string fit_json = (work_dir() / "cli_fit.json").string();
  const CliResult res = run_cli("correlate --tags-a " + dir + "/tags_local.qtt --tags-b " + dir +
                                "/tags_remote.qtt --min 0.94ms --max 0.95ms --out " + hist_csv +
                                " --fit " + fit_json);
  CAPTURE(res.err);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("peak: centre") != std::string::npos);
  CHECK(std::filesystem::exists(hist_csv));

  REQUIRE(std::filesystem::exists(fit_json));
  const nlohmann::json fit = nlohmann::json::parse(std::ifstream(fit_json));
  REQUIRE(fit.at("peak_found").get<bool>());
  CHECK(std::abs(fit.at("center_ps").get<double>() - 9.45e8) < 150.0);
  CHECK(fit.at("fwhm_ps").get<double>() > 600.0);
  CHECK(fit.at("fwhm_ps").get<double>() < 1500.0);

  // Degenerate range: usage error.
  const CliResult bad = run_cli("correlate --tags-a " + dir + "/tags_local.qtt --tags-b " + dir +
                                "/tags_remote.qtt --min 1ms --max 1ms");
  CHECK(bad.code == 1);
  std::remove(hist_csv.c_str());
  std::remove(fit_json.c_str());
}

TEST_CASE("calibrate solves and saves an operating point") {
  LinkConfig base;  // deployed-link defaults
  const std::string base_path = (work_dir() / "base.cfg").string();
  save_link_config(base, base_path);
  const std::string out_cfg = (work_dir() / "calibrated.cfg").string();

  const CliResult res =
      run_cli("calibrate --config " + base_path +
              " --target-singles 2.1e6 --target-coincidences 4.3 --out " + out_cfg);
  CAPTURE(res.err);
  REQUIRE(res.code == 0);
  CHECK(res.out.find("source.pair_rate") != std::string::npos);
  CHECK(res.out.find("achieved coincidences") != std::string::npos);
  CHECK(res.out.find("shortfall 8.4") != std::string::npos);

  const LinkConfig calibrated = load_link_config(out_cfg);
  CHECK(calibrated.source.pair_rate == doctest::Approx(3.68058e7).epsilon(1e-3));
  CHECK(calibrated.source.local_coupling == doctest::Approx(0.1901057).epsilon(1e-3));
  CHECK(calibrated.source.remote_coupling == doctest::Approx(1.0));

  // A zero coincidence target is degenerate: usage error, message says so.
  const CliResult zero = run_cli("calibrate --config " + base_path +
                                 " --target-singles 2.1e6 --target-coincidences 0");
  CHECK(zero.code == 1);
  CHECK(zero.err.find("degenerate") != std::string::npos);
  std::remove(out_cfg.c_str());
}

TEST_CASE("usage errors and help behave like a well-mannered tool") {
  CHECK(run_cli("").code == 1);                  // a subcommand is required
  CHECK(run_cli("frobnicate").code == 1);        // unknown subcommand
  CHECK(run_cli("--help").code == 0);            // help is success
  CHECK(run_cli("simulate").code == 1);          // missing required --config
  const CliResult help = run_cli("--help");
  CHECK(help.out.find("simulate") != std::string::npos);
  CHECK(help.out.find("analyze") != std::string::npos);
  std::filesystem::remove_all(work_dir());
}
