#pragma once

#include <string>
#include <vector>

#include "qlink/detection.hpp"
#include "qlink/environment.hpp"
#include "qlink/fibre_channel.hpp"
#include "qlink/pair_source.hpp"
#include "qlink/quantum_state.hpp"

// Whole-experiment configuration: source, channel, detectors, tagger,
// thermal model and the measurement schedule, with a flat key = value file
// format (dotted sections). Every default matches the deployed-link
// experiment the simulator reproduces.

namespace qlink {

struct ScheduleBlock {
  BasisSetting basis_a;  // local analyzer label
  BasisSetting basis_b;  // remote analyzer label
  double duration_s = 100.0;
};

enum class EngineKind {
  decomposition,  // stream coincidence/singles components directly (fast)
  per_pair,       // propagate every emitted pair (reference path)
};

struct LinkConfig {
  SourceConfig source;
  ChannelConfig channel;
  DetectorConfig detector_local{0.60, 900.0, 176.7766953, "local"};
  DetectorConfig detector_remote{0.12, 20.0, 176.7766953, "remote"};
  TaggerConfig tagger;
  ThermalConstants thermal;
  std::string thermal_profile_csv;  // optional: piecewise temperature offsets
  double thermal_ramp_K = 0.0;      // else: linear 0→ramp over the whole run
  std::vector<ScheduleBlock> schedule;
  int schedule_repeat = 1;  // number of passes through the schedule (cycles)
  double window_ps = 823.0;             // coincidence window
  bool conjugate_remote_labels = true;  // remote label X analyzes at 90°−X
  double rate_scale = 1.0;              // CI escape hatch, see apply_rate_scale
  EngineKind engine = EngineKind::decomposition;

  LinkConfig();

  double total_duration_s() const;
  TemperatureProfile make_temperature_profile() const;

  // Physical analyzer angle for the remote label under the conjugation flag.
  BasisSetting remote_physical_basis(const BasisSetting& label) const;
};

// The eight protocol combinations (four orthogonal-label, four equal-label),
// 100 s each.
std::vector<ScheduleBlock> default_schedule();

// Throws std::invalid_argument naming the offending field.
void validate(const LinkConfig& cfg);

LinkConfig parse_link_config_text(const std::string& text);
LinkConfig load_link_config(const std::string& path);
std::string link_config_to_text(const LinkConfig& cfg);
void save_link_config(const LinkConfig& cfg, const std::string& path);

// Folds rate_scale = k into the parameters: rates (pair rate, dark rates)
// divided by k, durations (schedule blocks, drift timescales) multiplied by
// k. Expected photon and dark counts per block are preserved; accidental
// coincidences shrink by 1/k (documented limitation of the scaled mode).
LinkConfig apply_rate_scale(const LinkConfig& cfg);

}  // namespace qlink
