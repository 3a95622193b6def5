#include "qlink/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "qlink/rng.hpp"
#include "qlink/tag_io.hpp"
#include "qlink/units.hpp"

namespace qlink {

namespace {

constexpr std::int64_t kChunkCells = 1000;          // 1 s of emission time per chunk
constexpr std::int64_t kFlushSlackPs = 50'000'000;  // 50 µs reorder guard on flush

struct BlockSpan {
  std::int64_t start_ps = 0;
  std::int64_t stop_ps = 0;
  BasisSetting a_phys;  // physical analyzer angles
  BasisSetting b_phys;
};

// Monotone block lookup (each event stream visits blocks in time order).
struct BlockCursor {
  const std::vector<BlockSpan>* spans = nullptr;
  size_t i = 0;
  size_t at(std::int64_t t_ps) {
    while (i + 1 < spans->size() && t_ps >= (*spans)[i].stop_ps) ++i;
    return i;
  }
};

std::vector<BlockSpan> make_spans(const LinkConfig& cfg, std::vector<BlockSummary>* summaries) {
  std::vector<BlockSpan> spans;
  std::int64_t t = 0;
  for (int c = 0; c < cfg.schedule_repeat; ++c) {
    for (size_t k = 0; k < cfg.schedule.size(); ++k) {
      const ScheduleBlock& blk = cfg.schedule[k];
      BlockSpan s;
      s.start_ps = t;
      t += std::llround(blk.duration_s * 1e12);
      s.stop_ps = t;
      s.a_phys = blk.basis_a;
      s.b_phys = cfg.remote_physical_basis(blk.basis_b);
      spans.push_back(s);
      if (summaries) {
        BlockSummary bs;
        bs.cycle = c;
        bs.index = static_cast<int>(k);
        bs.basis_a = blk.basis_a;
        bs.basis_b = blk.basis_b;
        bs.start_s = static_cast<double>(s.start_ps) * 1e-12;
        bs.duration_s = blk.duration_s;
        summaries->push_back(bs);
      }
    }
  }
  return spans;
}

std::int64_t ceil_div_i64(std::int64_t n, std::int64_t d) { return (n + d - 1) / d; }

std::uint64_t bin_floor_for_ps(std::int64_t t_ps, std::uint64_t bin_fs) {
  if (t_ps <= 0) return 0;
  const __int128 fs = static_cast<__int128>(t_ps) * 1000;
  return static_cast<std::uint64_t>(fs / static_cast<__int128>(bin_fs));
}

// Poisson click stream over whole 1 ms cells [cell0, cell1), cut at
// cutoff_ps; emits via on_click(t_ps, bin). Chunk-splitting the cell range
// reproduces the identical sequence.
template <typename OnClick>
void generate_poisson_cells(double rate_hz, std::int64_t cell0, std::int64_t cell1,
                            std::int64_t cutoff_ps, std::uint64_t bin_fs, std::uint64_t seed,
                            StreamPurpose purpose, OnClick&& on_click) {
  if (rate_hz <= 0.0) return;
  const double mean_gap_ps = 1e12 / rate_hz;
  for (std::int64_t cell = cell0; cell < cell1; ++cell) {
    CounterRng rng(seed, purpose, static_cast<std::uint64_t>(cell));
    const std::int64_t cell_start = cell * kGenerationCellPs;
    double t_rel = 0.0;
    for (;;) {
      t_rel += rng.exponential() * mean_gap_ps;
      if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
      const std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
      if (t >= cutoff_ps) break;
      const std::int64_t bin = quantize_to_bin(t, 0.0, bin_fs);
      if (bin >= 0) on_click(t, static_cast<std::uint64_t>(bin));
    }
  }
}

struct EngineParams {
  TwoPhotonState werner;
  double q_cap = 0.0;
  double eta_a = 0.0;
  double eta_b = 0.0;
  double rate_joint = 0.0;
  double rate_local_only = 0.0;
  double rate_remote_only = 0.0;
  double slope_ps_per_nm = 0.0;
  double wl_sigma_nm = 0.0;
  double jitter_a_sigma = 0.0;
  double jitter_b_sigma = 0.0;
  double sync_sigma = 0.0;
  double base_delay_ps = 0.0;
  std::uint64_t bin_fs = 82300;
};

EngineParams make_engine_params(const LinkConfig& cfg) {
  EngineParams ep;
  const double p = werner_weight_for_fidelity(cfg.source.local_fidelity);
  ep.werner = werner_mix(make_phi_minus(), p);
  ep.q_cap = 0.5 * p + 0.25 * (1.0 - p);
  const double transmission = transmission_from_db(cfg.channel.loss_db);
  ep.eta_a = cfg.source.local_coupling * cfg.detector_local.efficiency;
  ep.eta_b = transmission * cfg.source.remote_coupling * cfg.detector_remote.efficiency;
  ep.rate_joint = cfg.source.pair_rate * ep.eta_a * ep.eta_b * ep.q_cap;
  ep.rate_local_only = 0.5 * cfg.source.pair_rate * ep.eta_a;
  ep.rate_remote_only = 0.5 * cfg.source.pair_rate * ep.eta_b;
  ep.slope_ps_per_nm = cfg.channel.dispersion_slope_ps_per_nm(cfg.source.signal_channel.fwhm_nm);
  ep.wl_sigma_nm = fwhm_to_sigma(cfg.source.signal_channel.fwhm_nm);
  ep.jitter_a_sigma = fwhm_to_sigma(cfg.detector_local.jitter_fwhm_ps);
  ep.jitter_b_sigma = fwhm_to_sigma(cfg.detector_remote.jitter_fwhm_ps);
  ep.sync_sigma = fwhm_to_sigma(cfg.tagger.sync_jitter_fwhm_ps);
  ep.base_delay_ps = cfg.channel.base_delay_ps;
  ep.bin_fs = cfg.tagger.bin_width_fs();
  return ep;
}

void sorted_flush(std::vector<std::uint64_t>& pending, std::vector<std::uint64_t>& fresh,
                  std::uint64_t boundary_bin, const TagSink& sink, std::uint64_t& emitted) {
  if (!fresh.empty()) {
    std::sort(fresh.begin(), fresh.end());
    const size_t mid = pending.size();
    pending.insert(pending.end(), fresh.begin(), fresh.end());
    std::inplace_merge(pending.begin(), pending.begin() + mid, pending.end());
    fresh.clear();
  }
  const auto it = std::lower_bound(pending.begin(), pending.end(), boundary_bin);
  const size_t n = static_cast<size_t>(it - pending.begin());
  if (n > 0) {
    sink(pending.data(), n);
    emitted += n;
    pending.erase(pending.begin(), it);
  }
}

SimulationSummary run_decomposition(const LinkConfig& cfg, std::uint64_t seed,
                                    const TagSink& local_sink, const TagSink& remote_sink) {
  SimulationSummary sum;
  sum.effective = cfg;
  const std::vector<BlockSpan> spans = make_spans(cfg, &sum.blocks);
  const std::int64_t duration_ps = spans.back().stop_ps;
  const double duration_s = static_cast<double>(duration_ps) * 1e-12;

  const EngineParams ep = make_engine_params(cfg);
  const BirefringenceTrajectory trajectory(cfg.channel.birefringence, seed, duration_s);
  const TemperatureProfile profile = cfg.make_temperature_profile();
  const std::int64_t base_delay_i = std::llround(ep.base_delay_ps);

  const std::int64_t n_cells = ceil_div_i64(duration_ps, kGenerationCellPs);
  // Remote dark counts cover the shifted arrival span of the remote channel.
  const std::int64_t remote_dark_cutoff_ps = duration_ps + base_delay_i + kGenerationCellPs;
  const std::int64_t n_remote_dark_cells = ceil_div_i64(remote_dark_cutoff_ps, kGenerationCellPs);

  BlockCursor cur_joint{&spans}, cur_local{&spans}, cur_remote{&spans};
  BlockCursor cur_dark_l{&spans}, cur_dark_r{&spans}, cur_q{&spans};

  std::vector<std::uint64_t> pend_l, pend_r, fresh_l, fresh_r;
  std::vector<double> q_chunk(spans.size(), 0.0);
  std::int64_t next_remote_dark_cell = 0;

  const std::int64_t total_chunks = ceil_div_i64(n_cells, kChunkCells);
  for (std::int64_t chunk = 0; chunk < total_chunks; ++chunk) {
    const std::int64_t c0 = chunk * kChunkCells;
    const std::int64_t c1 = std::min(n_cells, c0 + kChunkCells);
    const std::int64_t chunk_start = c0 * kGenerationCellPs;
    const std::int64_t chunk_stop = std::min(duration_ps, c1 * kGenerationCellPs);

    // Slowly varying quantities are sampled once per chunk: the rotation
    // drift and thermal profiles move on minute scales, so the 1 s sampling
    // error is far below every other timing effect.
    const double mid_s = static_cast<double>(chunk_start + chunk_stop) * 0.5e-12;
    const double thermal_ps =
        profile.empty() ? 0.0 : profile.delay_offset_ps(mid_s, cfg.thermal);
    const TwoPhotonState rotated = apply_one_sided_unitary(ep.werner, trajectory.at(mid_s));
    {
      const size_t b0 = cur_q.at(chunk_start);
      for (size_t b = b0; b < spans.size() && spans[b].start_ps < chunk_stop; ++b) {
        q_chunk[b] = coincidence_probability(rotated, spans[b].a_phys, spans[b].b_phys);
      }
    }

    // Pairs detected on both arms.
    if (ep.rate_joint > 0.0) {
      const double mean_gap_ps = 1e12 / ep.rate_joint;
      for (std::int64_t cell = c0; cell < c1; ++cell) {
        CounterRng rng(seed, StreamPurpose::engine_joint, static_cast<std::uint64_t>(cell));
        const std::int64_t cell_start = cell * kGenerationCellPs;
        double t_rel = 0.0;
        for (;;) {
          t_rel += rng.exponential() * mean_gap_ps;
          if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
          const std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
          if (t >= duration_ps) break;
          const size_t b = cur_joint.at(t);
          const double u = rng.uniform();
          if (u * ep.q_cap >= q_chunk[b]) continue;
          const double wl = rng.gaussian() * ep.wl_sigma_nm;
          const std::int64_t bl =
              quantize_to_bin(t, rng.gaussian() * ep.jitter_a_sigma, ep.bin_fs);
          double dr = ep.slope_ps_per_nm * wl + thermal_ps + rng.gaussian() * ep.jitter_b_sigma;
          if (ep.sync_sigma > 0.0) dr += rng.gaussian() * ep.sync_sigma;
          const std::int64_t br = quantize_to_bin(t, ep.base_delay_ps + dr, ep.bin_fs);
          if (bl >= 0) {
            fresh_l.push_back(static_cast<std::uint64_t>(bl));
            ++sum.blocks[b].singles_local;
          }
          if (br >= 0) {
            fresh_r.push_back(static_cast<std::uint64_t>(br));
            ++sum.blocks[b].singles_remote;
          }
          if (bl >= 0 && br >= 0) ++sum.blocks[b].joint_detected;
        }
      }
    }

    // Pairs whose travelling photon was lost: local clicks only.
    if (ep.rate_local_only > 0.0) {
      const double mean_gap_ps = 1e12 / ep.rate_local_only;
      for (std::int64_t cell = c0; cell < c1; ++cell) {
        CounterRng rng(seed, StreamPurpose::engine_local_only, static_cast<std::uint64_t>(cell));
        const std::int64_t cell_start = cell * kGenerationCellPs;
        double t_rel = 0.0;
        for (;;) {
          t_rel += rng.exponential() * mean_gap_ps;
          if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
          const std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
          if (t >= duration_ps) break;
          const size_t b = cur_local.at(t);
          // Remove the overlap already counted by the joint stream.
          if (rng.uniform() < 2.0 * ep.eta_b * q_chunk[b]) continue;
          const std::int64_t bl =
              quantize_to_bin(t, rng.gaussian() * ep.jitter_a_sigma, ep.bin_fs);
          if (bl < 0) continue;
          fresh_l.push_back(static_cast<std::uint64_t>(bl));
          ++sum.blocks[b].singles_local;
        }
      }
    }

    // Pairs whose local photon was not detected: remote clicks only.
    if (ep.rate_remote_only > 0.0) {
      const double mean_gap_ps = 1e12 / ep.rate_remote_only;
      for (std::int64_t cell = c0; cell < c1; ++cell) {
        CounterRng rng(seed, StreamPurpose::engine_remote_only, static_cast<std::uint64_t>(cell));
        const std::int64_t cell_start = cell * kGenerationCellPs;
        double t_rel = 0.0;
        for (;;) {
          t_rel += rng.exponential() * mean_gap_ps;
          if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
          const std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
          if (t >= duration_ps) break;
          const size_t b = cur_remote.at(t);
          if (rng.uniform() < 2.0 * ep.eta_a * q_chunk[b]) continue;
          const double wl = rng.gaussian() * ep.wl_sigma_nm;
          double dr = ep.slope_ps_per_nm * wl + thermal_ps + rng.gaussian() * ep.jitter_b_sigma;
          if (ep.sync_sigma > 0.0) dr += rng.gaussian() * ep.sync_sigma;
          const std::int64_t br = quantize_to_bin(t, ep.base_delay_ps + dr, ep.bin_fs);
          if (br < 0) continue;
          fresh_r.push_back(static_cast<std::uint64_t>(br));
          ++sum.blocks[b].singles_remote;
        }
      }
    }

    // Dark counts, local channel.
    generate_poisson_cells(cfg.detector_local.dark_rate, c0, c1, duration_ps, ep.bin_fs, seed,
                           StreamPurpose::dark_local, [&](std::int64_t t, std::uint64_t bin) {
                             fresh_l.push_back(bin);
                             const size_t b = cur_dark_l.at(t);
                             ++sum.blocks[b].singles_local;
                             ++sum.blocks[b].dark_local;
                           });

    const std::uint64_t boundary_l = bin_floor_for_ps(chunk_stop - kFlushSlackPs, ep.bin_fs);
    const std::int64_t remote_boundary_ps = chunk_stop + base_delay_i - kFlushSlackPs;

    // Dark counts, remote channel: generated up to the flush horizon so the
    // emitted stream stays sorted.
    {
      const std::int64_t needed =
          std::min(n_remote_dark_cells, ceil_div_i64(std::max<std::int64_t>(remote_boundary_ps, 0),
                                                     kGenerationCellPs) +
                                            1);
      generate_poisson_cells(cfg.detector_remote.dark_rate, next_remote_dark_cell, needed,
                             remote_dark_cutoff_ps, ep.bin_fs, seed, StreamPurpose::dark_remote,
                             [&](std::int64_t t, std::uint64_t bin) {
                               fresh_r.push_back(bin);
                               std::int64_t attr = t - base_delay_i;
                               if (attr < 0) attr = 0;
                               if (attr >= duration_ps) attr = duration_ps - 1;
                               const size_t b = cur_dark_r.at(attr);
                               ++sum.blocks[b].singles_remote;
                               ++sum.blocks[b].dark_remote;
                             });
      next_remote_dark_cell = std::max(next_remote_dark_cell, needed);
    }

    sorted_flush(pend_l, fresh_l, boundary_l, local_sink, sum.local_tags);
    sorted_flush(pend_r, fresh_r, bin_floor_for_ps(remote_boundary_ps, ep.bin_fs), remote_sink,
                 sum.remote_tags);
  }

  // Remaining remote darks beyond the last flush horizon, then drain.
  generate_poisson_cells(cfg.detector_remote.dark_rate, next_remote_dark_cell,
                         n_remote_dark_cells, remote_dark_cutoff_ps, ep.bin_fs, seed,
                         StreamPurpose::dark_remote, [&](std::int64_t t, std::uint64_t bin) {
                           fresh_r.push_back(bin);
                           std::int64_t attr = t - base_delay_i;
                           if (attr < 0) attr = 0;
                           if (attr >= duration_ps) attr = duration_ps - 1;
                           const size_t b = cur_dark_r.at(attr);
                           ++sum.blocks[b].singles_remote;
                           ++sum.blocks[b].dark_remote;
                         });
  const std::uint64_t drain = std::numeric_limits<std::uint64_t>::max();
  sorted_flush(pend_l, fresh_l, drain, local_sink, sum.local_tags);
  sorted_flush(pend_r, fresh_r, drain, remote_sink, sum.remote_tags);
  return sum;
}

SimulationSummary run_per_pair(const LinkConfig& cfg, std::uint64_t seed,
                               const TagSink& local_sink, const TagSink& remote_sink) {
  SimulationSummary sum;
  sum.effective = cfg;
  const std::vector<BlockSpan> spans = make_spans(cfg, &sum.blocks);
  const std::int64_t duration_ps = spans.back().stop_ps;
  const double duration_s = static_cast<double>(duration_ps) * 1e-12;

  const EngineParams ep = make_engine_params(cfg);
  const BirefringenceTrajectory trajectory(cfg.channel.birefringence, seed, duration_s);
  const TemperatureProfile profile = cfg.make_temperature_profile();
  const std::int64_t base_delay_i = std::llround(ep.base_delay_ps);

  // Reference path: every emitted pair is materialized, so this engine is
  // meant for short or low-rate runs (cross-validation and unit tests).
  const std::vector<PairEvent> pairs = generate_pairs(cfg.source, duration_s, seed);
  std::vector<TravellingPhoton> locals;
  locals.reserve(pairs.size());
  for (const PairEvent& pe : pairs) {
    TravellingPhoton tp;
    tp.emission_ps = pe.emission_ps;
    tp.extra_delay_ps = 0.0;
    tp.born_u = pe.born_u;
    tp.rotation = PoincareRotation::identity();
    locals.push_back(tp);
  }
  const std::vector<TravellingPhoton> remotes =
      propagate(pairs, cfg.channel, trajectory, profile, cfg.thermal,
                cfg.source.signal_channel.fwhm_nm, cfg.source.remote_coupling, seed);

  DetectorConfig det_local = cfg.detector_local;
  DetectorConfig det_remote = cfg.detector_remote;
  det_local.dark_rate = 0.0;  // darks are generated once for the whole run below
  det_remote.dark_rate = 0.0;

  std::vector<std::uint64_t> all_l, all_r;
  auto emission_less = [](const TravellingPhoton& p, std::int64_t t) { return p.emission_ps < t; };
  size_t lo_l = 0, lo_r = 0;
  for (size_t b = 0; b < spans.size(); ++b) {
    const auto& span = spans[b];
    const size_t hi_l = static_cast<size_t>(
        std::lower_bound(locals.begin() + lo_l, locals.end(), span.stop_ps, emission_less) -
        locals.begin());
    const size_t hi_r = static_cast<size_t>(
        std::lower_bound(remotes.begin() + lo_r, remotes.end(), span.stop_ps, emission_less) -
        remotes.begin());
    const std::vector<TravellingPhoton> slice_l(locals.begin() + lo_l, locals.begin() + hi_l);
    const std::vector<TravellingPhoton> slice_r(remotes.begin() + lo_r, remotes.begin() + hi_r);
    lo_l = hi_l;
    lo_r = hi_r;

    DetectionContext ctx_l;
    ctx_l.state = ep.werner;
    ctx_l.basis_self = span.a_phys;
    ctx_l.basis_partner = span.b_phys;
    ctx_l.arm = Arm::local;
    ctx_l.path_delay_ps = 0.0;
    ctx_l.coupling = cfg.source.local_coupling;
    ctx_l.apply_sync_jitter = false;

    DetectionContext ctx_r;
    ctx_r.state = ep.werner;
    ctx_r.basis_self = span.b_phys;
    ctx_r.basis_partner = span.a_phys;
    ctx_r.arm = Arm::remote;
    ctx_r.path_delay_ps = ep.base_delay_ps;
    ctx_r.coupling = 1.0;
    ctx_r.apply_sync_jitter = cfg.tagger.sync_jitter_fwhm_ps > 0.0;

    const DetectResult res_l = detect(slice_l, ctx_l, det_local, cfg.tagger, 0.0, seed, 0);
    const DetectResult res_r = detect(slice_r, ctx_r, det_remote, cfg.tagger, 0.0, seed, 1);
    sum.blocks[b].singles_local += res_l.photon_clicks;
    sum.blocks[b].singles_remote += res_r.photon_clicks;

    // A pair counts as jointly detected when both arms recorded its photon;
    // emission times identify pairs (both lists are in emission order).
    size_t il = 0;
    for (const std::int64_t er : res_r.recorded_emissions) {
      while (il < res_l.recorded_emissions.size() && res_l.recorded_emissions[il] < er) ++il;
      if (il < res_l.recorded_emissions.size() && res_l.recorded_emissions[il] == er) {
        ++sum.blocks[b].joint_detected;
        ++il;
      }
    }

    const size_t mid_l = all_l.size();
    all_l.insert(all_l.end(), res_l.stream.bins.begin(), res_l.stream.bins.end());
    std::inplace_merge(all_l.begin(), all_l.begin() + mid_l, all_l.end());
    const size_t mid_r = all_r.size();
    all_r.insert(all_r.end(), res_r.stream.bins.begin(), res_r.stream.bins.end());
    std::inplace_merge(all_r.begin(), all_r.begin() + mid_r, all_r.end());
  }

  // Dark counts over the full spans of both channels.
  BlockCursor cur_dark_l{&spans}, cur_dark_r{&spans};
  std::vector<std::uint64_t> darks_l, darks_r;
  generate_poisson_cells(cfg.detector_local.dark_rate, 0, ceil_div_i64(duration_ps, kGenerationCellPs),
                         duration_ps, ep.bin_fs, seed, StreamPurpose::dark_local,
                         [&](std::int64_t t, std::uint64_t bin) {
                           darks_l.push_back(bin);
                           const size_t b = cur_dark_l.at(t);
                           ++sum.blocks[b].singles_local;
                           ++sum.blocks[b].dark_local;
                         });
  const std::int64_t remote_dark_cutoff_ps = duration_ps + base_delay_i + kGenerationCellPs;
  generate_poisson_cells(cfg.detector_remote.dark_rate, 0,
                         ceil_div_i64(remote_dark_cutoff_ps, kGenerationCellPs),
                         remote_dark_cutoff_ps, ep.bin_fs, seed, StreamPurpose::dark_remote,
                         [&](std::int64_t t, std::uint64_t bin) {
                           darks_r.push_back(bin);
                           std::int64_t attr = t - base_delay_i;
                           if (attr < 0) attr = 0;
                           if (attr >= duration_ps) attr = duration_ps - 1;
                           const size_t b = cur_dark_r.at(attr);
                           ++sum.blocks[b].singles_remote;
                           ++sum.blocks[b].dark_remote;
                         });
  {
    const size_t mid = all_l.size();
    all_l.insert(all_l.end(), darks_l.begin(), darks_l.end());
    std::inplace_merge(all_l.begin(), all_l.begin() + mid, all_l.end());
  }
  {
    const size_t mid = all_r.size();
    all_r.insert(all_r.end(), darks_r.begin(), darks_r.end());
    std::inplace_merge(all_r.begin(), all_r.begin() + mid, all_r.end());
  }

  if (!all_l.empty()) local_sink(all_l.data(), all_l.size());
  if (!all_r.empty()) remote_sink(all_r.data(), all_r.size());
  sum.local_tags = all_l.size();
  sum.remote_tags = all_r.size();
  return sum;
}

}  // namespace

SimulationSummary simulate_link_streamed(const LinkConfig& cfg, std::uint64_t seed,
                                         const TagSink& local_sink, const TagSink& remote_sink) {
  validate(cfg);
  const LinkConfig effective = apply_rate_scale(cfg);
  if (effective.engine == EngineKind::per_pair) {
    return run_per_pair(effective, seed, local_sink, remote_sink);
  }
  return run_decomposition(effective, seed, local_sink, remote_sink);
}

SimulationResult simulate_link(const LinkConfig& cfg, std::uint64_t seed) {
  SimulationResult result;
  const std::uint64_t bin_fs = cfg.tagger.bin_width_fs();
  result.local.bin_width_fs = bin_fs;
  result.remote.bin_width_fs = bin_fs;
  result.summary = simulate_link_streamed(
      cfg, seed,
      [&result](const std::uint64_t* bins, size_t n) {
        result.local.bins.insert(result.local.bins.end(), bins, bins + n);
      },
      [&result](const std::uint64_t* bins, size_t n) {
        result.remote.bins.insert(result.remote.bins.end(), bins, bins + n);
      });
  result.local.channels.assign(result.local.bins.size(), 0);
  result.remote.channels.assign(result.remote.bins.size(), 1);
  return result;
}

namespace {

nlohmann::ordered_json block_to_json(const BlockSummary& b) {
  nlohmann::ordered_json j;
  j["cycle"] = b.cycle;
  j["index"] = b.index;
  j["basis_a"] = b.basis_a.label();
  j["basis_b"] = b.basis_b.label();
  j["start_s"] = b.start_s;
  j["duration_s"] = b.duration_s;
  j["singles_local"] = b.singles_local;
  j["singles_remote"] = b.singles_remote;
  j["dark_local"] = b.dark_local;
  j["dark_remote"] = b.dark_remote;
  j["joint_detected"] = b.joint_detected;
  return j;
}

BlockSummary block_from_json(const nlohmann::json& j) {
  BlockSummary b;
  b.cycle = j.at("cycle").get<int>();
  b.index = j.at("index").get<int>();
  b.basis_a = BasisSetting::from_label(j.at("basis_a").get<std::string>());
  b.basis_b = BasisSetting::from_label(j.at("basis_b").get<std::string>());
  b.start_s = j.at("start_s").get<double>();
  b.duration_s = j.at("duration_s").get<double>();
  b.singles_local = j.at("singles_local").get<std::uint64_t>();
  b.singles_remote = j.at("singles_remote").get<std::uint64_t>();
  b.dark_local = j.at("dark_local").get<std::uint64_t>();
  b.dark_remote = j.at("dark_remote").get<std::uint64_t>();
  b.joint_detected = j.at("joint_detected").get<std::uint64_t>();
  return b;
}

}  // namespace

RunPaths run_simulation(const LinkConfig& cfg, std::uint64_t seed, const std::string& out_dir) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  RunPaths paths;
  paths.directory = out_dir;
  paths.tags_local = (std::filesystem::path(out_dir) / "tags_local.qtt").string();
  paths.tags_remote = (std::filesystem::path(out_dir) / "tags_remote.qtt").string();
  paths.manifest = (std::filesystem::path(out_dir) / "manifest.json").string();

  const std::uint64_t bin_fs = cfg.tagger.bin_width_fs();
  TagFileWriter writer_l(paths.tags_local, bin_fs, 2, TagFileFormat::binary);
  TagFileWriter writer_r(paths.tags_remote, bin_fs, 2, TagFileFormat::binary);
  std::vector<std::uint8_t> chan_buf;
  auto sink_for = [&chan_buf](TagFileWriter& w, std::uint8_t channel) {
    return TagSink([&w, &chan_buf, channel](const std::uint64_t* bins, size_t n) {
      chan_buf.assign(n, channel);
      w.append(bins, chan_buf.data(), n);
    });
  };

  const SimulationSummary summary =
      simulate_link_streamed(cfg, seed, sink_for(writer_l, 0), sink_for(writer_r, 1));
  writer_l.close();
  writer_r.close();

  nlohmann::ordered_json j;
  j["format"] = "qlink-run";
  j["version"] = 1;
  j["seed"] = seed;
  j["rate_scale_applied"] = cfg.rate_scale;
  j["bin_width_fs"] = bin_fs;
  j["tags_local"] = "tags_local.qtt";
  j["tags_remote"] = "tags_remote.qtt";
  j["local_tags"] = summary.local_tags;
  j["remote_tags"] = summary.remote_tags;
  j["config"] = link_config_to_text(summary.effective);
  nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
  for (const auto& b : summary.blocks) blocks.push_back(block_to_json(b));
  j["blocks"] = std::move(blocks);

  std::ofstream out(paths.manifest);
  if (!out) throw std::runtime_error("cannot write manifest: " + paths.manifest);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest: " + paths.manifest);
  return paths;
}

ManifestData load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  if (!j.contains("format") || j["format"] != "qlink-run") {
    throw std::runtime_error(path + ": not a run manifest");
  }
  ManifestData m;
  m.config = parse_link_config_text(j.at("config").get<std::string>());
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tags_local = j.at("tags_local").get<std::string>();
  m.tags_remote = j.at("tags_remote").get<std::string>();
  if (j.contains("blocks")) {
    for (const auto& bj : j["blocks"]) m.blocks.push_back(block_from_json(bj));
  }
  return m;
}

namespace {

double label_pair_q(const LinkConfig& cfg, const BasisSetting& a_label,
                    const BasisSetting& b_label) {
  const double p = werner_weight_for_fidelity(cfg.source.local_fidelity);
  const TwoPhotonState state = werner_mix(make_phi_minus(), p);
  return coincidence_probability(state, a_label, cfg.remote_physical_basis(b_label));
}

}  // namespace

ExpectedRates expected_rates(const LinkConfig& cfg) {
  const LinkConfig eff = apply_rate_scale(cfg);
  const EngineParams ep = make_engine_params(eff);
  ExpectedRates r;
  r.local_dark_hz = eff.detector_local.dark_rate;
  r.remote_dark_hz = eff.detector_remote.dark_rate;
  r.local_singles_hz = 0.5 * eff.source.pair_rate * ep.eta_a + r.local_dark_hz;
  r.remote_singles_hz = 0.5 * eff.source.pair_rate * ep.eta_b + r.remote_dark_hz;
  const double pair_flux = eff.source.pair_rate * ep.eta_a * ep.eta_b;
  r.coincidence_corr_hz = pair_flux * label_pair_q(eff, BasisSetting::h(), BasisSetting::v());
  r.coincidence_unc_hz = pair_flux * label_pair_q(eff, BasisSetting::h(), BasisSetting::h());
  return r;
}

CalibrationResult calibrate_rates(double target_local_singles_hz, double target_coincidences_hz,
                                  const LinkConfig& cfg, double target_remote_singles_hz) {
  if (!(target_coincidences_hz > 0.0)) {
    throw std::invalid_argument("coincidence target must be positive (zero is degenerate)");
  }
  if (!(target_local_singles_hz > 0.0) || !(target_remote_singles_hz > 0.0)) {
    throw std::invalid_argument("singles targets must be positive");
  }
  const double dark_l = cfg.detector_local.dark_rate;
  const double dark_r = cfg.detector_remote.dark_rate;
  const double eff_l = cfg.detector_local.efficiency;
  const double eff_r = cfg.detector_remote.efficiency;
  const double transmission = transmission_from_db(cfg.channel.loss_db);
  if (!(eff_l > 0.0) || !(eff_r > 0.0)) {
    throw std::invalid_argument("calibration requires nonzero detector efficiencies");
  }
  if (target_local_singles_hz <= dark_l) {
    throw std::invalid_argument("local singles target does not exceed the dark rate");
  }
  if (target_remote_singles_hz <= dark_r) {
    throw std::invalid_argument("remote singles target does not exceed the dark rate");
  }

  const double q_corr = label_pair_q(cfg, BasisSetting::h(), BasisSetting::v());
  if (!(q_corr > 0.0)) {
    throw std::invalid_argument("configured state gives zero correlated coincidence probability");
  }

  // k1 = pair_rate × local coupling, k2 = pair_rate × remote coupling.
  const double k1 = (target_local_singles_hz - dark_l) / (0.5 * eff_l);
  const double k2 = (target_remote_singles_hz - dark_r) / (0.5 * transmission * eff_r);
  double remote_coupling =
      target_coincidences_hz / (k1 * eff_l * transmission * eff_r * q_corr);
  remote_coupling = std::min(remote_coupling, 1.0);
  const double pair_rate = k2 / remote_coupling;
  const double local_coupling = k1 / pair_rate;
  if (local_coupling > 1.0) {
    throw std::invalid_argument(
        "targets unreachable: required local coupling exceeds 1 (raise the remote target or "
        "lower the local target)");
  }

  CalibrationResult result;
  result.source = cfg.source;
  result.source.pair_rate = pair_rate;
  result.source.local_coupling = local_coupling;
  result.source.remote_coupling = remote_coupling;
  result.achieved_local_singles_hz = k1 * 0.5 * eff_l + dark_l;
  result.achieved_remote_singles_hz = k2 * 0.5 * transmission * eff_r + dark_r;
  result.achieved_coincidence_hz =
      pair_rate * local_coupling * eff_l * remote_coupling * transmission * eff_r * q_corr;
  result.coincidence_shortfall =
      std::max(0.0, 1.0 - result.achieved_coincidence_hz / target_coincidences_hz);
  if (result.coincidence_shortfall > 0.25) {
    throw std::invalid_argument(
        "targets unreachable: coincidence target misses by more than 25% with couplings "
        "clamped to 1");
  }
  return result;
}

}  // namespace qlink
