#include "qlink/pair_source.hpp"

#include <cmath>
#include <stdexcept>

#include "qlink/rng.hpp"
#include "qlink/units.hpp"

namespace qlink {

void generate_pairs_cells(const SourceConfig& cfg, std::uint64_t seed, std::int64_t cell_begin,
                          std::int64_t cell_end, std::vector<PairEvent>& out,
                          std::int64_t& last_emission_ps) {
  if (cfg.pair_rate < 0.0) throw std::invalid_argument("pair_rate must be >= 0");
  if (cfg.pair_rate == 0.0) return;
  const double mean_gap_ps = 1e12 / cfg.pair_rate;
  const double sigma_nm = fwhm_to_sigma(cfg.signal_channel.fwhm_nm);

  for (std::int64_t cell = cell_begin; cell < cell_end; ++cell) {
    CounterRng times(seed, StreamPurpose::pair_times, static_cast<std::uint64_t>(cell));
    CounterRng wl(seed, StreamPurpose::pair_wavelength, static_cast<std::uint64_t>(cell));
    CounterRng outcome(seed, StreamPurpose::pair_outcome, static_cast<std::uint64_t>(cell));
    const std::int64_t cell_start = cell * kGenerationCellPs;
    const std::int64_t cell_stop = cell_start + kGenerationCellPs;
    double t_rel = 0.0;
    for (;;) {
      t_rel += times.exponential() * mean_gap_ps;
      if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
      std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
      if (t <= last_emission_ps) t = last_emission_ps + 1;  // keep times strictly increasing
      if (t >= cell_stop) continue;  // cannot spill into the next cell's range
      last_emission_ps = t;
      PairEvent ev;
      ev.emission_ps = t;
      ev.signal_wl_offset_nm = wl.gaussian() * sigma_nm;
      ev.born_u = outcome.uniform();
      out.push_back(ev);
    }
  }
}

std::vector<PairEvent> generate_pairs(const SourceConfig& cfg, double duration_s,
                                      std::uint64_t seed) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("duration must be > 0");
  const std::int64_t duration_ps = static_cast<std::int64_t>(std::llround(duration_s * 1e12));
  const std::int64_t cells = (duration_ps + kGenerationCellPs - 1) / kGenerationCellPs;
  std::vector<PairEvent> out;
  out.reserve(static_cast<size_t>(cfg.pair_rate * duration_s * 1.05) + 16);
  std::int64_t last = -1;
  generate_pairs_cells(cfg, seed, 0, cells, out, last);
  while (!out.empty() && out.back().emission_ps >= duration_ps) out.pop_back();
  return out;
}

}  // namespace qlink
