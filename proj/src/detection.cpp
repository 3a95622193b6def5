#include "qlink/detection.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "qlink/rng.hpp"
#include "qlink/units.hpp"

namespace qlink {

std::uint64_t TaggerConfig::bin_width_fs() const {
  if (!(bin_width_ps > 0.0)) throw std::invalid_argument("tagger bin width must be > 0");
  const auto fs = static_cast<std::uint64_t>(std::llround(bin_width_ps * 1000.0));
  if (fs == 0) throw std::invalid_argument("tagger bin width must be >= 1 fs");
  return fs;
}

bool TimeTagStream::sorted() const {
  for (size_t i = 1; i < bins.size(); ++i) {
    if (bins[i] < bins[i - 1]) return false;
  }
  return true;
}

std::int64_t quantize_to_bin(std::int64_t emission_ps, double delta_ps,
                             std::uint64_t bin_width_fs) {
  const __int128 fs = static_cast<__int128>(emission_ps) * 1000 +
                      static_cast<__int128>(std::llround(delta_ps * 1000.0));
  if (fs < 0) return -1;
  return static_cast<std::int64_t>(fs / static_cast<__int128>(bin_width_fs));
}

std::vector<std::uint64_t> dark_count_bins(double dark_rate, double duration_s,
                                           std::uint64_t bin_width_fs, std::uint64_t seed,
                                           StreamPurpose purpose) {
  std::vector<std::uint64_t> out;
  if (dark_rate <= 0.0 || duration_s <= 0.0) return out;
  out.reserve(static_cast<size_t>(dark_rate * duration_s * 1.1) + 16);
  const std::int64_t duration_ps = static_cast<std::int64_t>(std::llround(duration_s * 1e12));
  const std::int64_t cells = (duration_ps + kGenerationCellPs - 1) / kGenerationCellPs;
  const double mean_gap_ps = 1e12 / dark_rate;
  for (std::int64_t cell = 0; cell < cells; ++cell) {
    CounterRng rng(seed, purpose, static_cast<std::uint64_t>(cell));
    const std::int64_t cell_start = cell * kGenerationCellPs;
    double t_rel = 0.0;
    for (;;) {
      t_rel += rng.exponential() * mean_gap_ps;
      if (t_rel >= static_cast<double>(kGenerationCellPs)) break;
      const std::int64_t t = cell_start + static_cast<std::int64_t>(t_rel);
      if (t >= duration_ps) break;
      out.push_back(static_cast<std::uint64_t>(
          quantize_to_bin(t, 0.0, bin_width_fs)));
    }
  }
  return out;
}

DetectResult detect(const std::vector<TravellingPhoton>& photons, const DetectionContext& ctx,
                    const DetectorConfig& det, const TaggerConfig& tagger, double duration_s,
                    std::uint64_t seed, std::uint8_t channel) {
  if (!(det.efficiency >= 0.0 && det.efficiency <= 1.0)) {
    throw std::invalid_argument("detector efficiency must lie in [0, 1]");
  }
  if (det.dark_rate < 0.0) throw std::invalid_argument("dark rate must be >= 0");
  const std::uint64_t bin_fs = tagger.bin_width_fs();
  const double thin_prob = ctx.coupling * det.efficiency;
  const double jitter_sigma = fwhm_to_sigma(det.jitter_fwhm_ps);
  const double sync_sigma =
      ctx.apply_sync_jitter ? fwhm_to_sigma(tagger.sync_jitter_fwhm_ps) : 0.0;
  const StreamPurpose thin_purpose = (ctx.arm == Arm::local) ? StreamPurpose::detect_thin_local
                                                             : StreamPurpose::detect_thin_remote;
  const StreamPurpose jitter_purpose =
      (ctx.arm == Arm::local) ? StreamPurpose::jitter_local : StreamPurpose::jitter_remote;
  const StreamPurpose dark_purpose =
      (ctx.arm == Arm::local) ? StreamPurpose::dark_local : StreamPurpose::dark_remote;

  // Born-rule probabilities depend only on the (slowly varying) rotation, so
  // cache them between events with the same rotation.
  PoincareRotation cached_rot;
  bool have_cache = false;
  double p_self = 0.0, p_partner = 0.0, q_joint = 0.0;
  auto refresh = [&](const PoincareRotation& rot) {
    p_partner = single_sided_click_probability(ctx.state, ctx.basis_partner, rot, Arm::local,
                                               ctx.analyzer_contrast);
    if (ctx.arm == Arm::local) {
      p_self = single_sided_click_probability(ctx.state, ctx.basis_self, rot, Arm::local,
                                              ctx.analyzer_contrast);
    } else {
      p_self = single_sided_click_probability(ctx.state, ctx.basis_self, rot, Arm::remote,
                                              ctx.analyzer_contrast);
      const TwoPhotonState rotated = apply_one_sided_unitary(ctx.state, rot);
      q_joint = coincidence_probability(rotated, ctx.basis_partner, ctx.basis_self,
                                        ctx.analyzer_contrast);
      q_joint = std::min({q_joint, p_partner, p_self});
    }
    cached_rot = rot;
    have_cache = true;
  };
  auto same_rotation = [](const PoincareRotation& a, const PoincareRotation& b) {
    return a.angle_deg == b.angle_deg && a.axis == b.axis;
  };

  DetectResult result;
  result.stream.bin_width_fs = bin_fs;
  result.stream.bins.reserve(photons.size() / 4 + 64);

  for (const TravellingPhoton& ph : photons) {
    if (!have_cache || !same_rotation(ph.rotation, cached_rot)) refresh(ph.rotation);
    bool clicks;
    if (ctx.arm == Arm::local) {
      clicks = ph.born_u < p_self;
    } else {
      clicks = (ph.born_u < q_joint) ||
               (ph.born_u >= p_partner && ph.born_u < p_partner + p_self - q_joint);
    }
    if (!clicks) continue;
    CounterRng thin(seed, thin_purpose, static_cast<std::uint64_t>(ph.emission_ps));
    if (thin.uniform() >= thin_prob) continue;
    CounterRng jit(seed, jitter_purpose, static_cast<std::uint64_t>(ph.emission_ps));
    double delta = ph.extra_delay_ps + jit.gaussian() * jitter_sigma;
    if (sync_sigma > 0.0) delta += jit.gaussian() * sync_sigma;
    const std::int64_t bin =
        quantize_to_bin(ph.emission_ps, ctx.path_delay_ps + delta, bin_fs);
    if (bin < 0) continue;
    result.stream.bins.push_back(static_cast<std::uint64_t>(bin));
    result.recorded_emissions.push_back(ph.emission_ps);
    ++result.photon_clicks;
  }

  std::sort(result.stream.bins.begin(), result.stream.bins.end());
  std::vector<std::uint64_t> darks =
      dark_count_bins(det.dark_rate, duration_s, bin_fs, seed, dark_purpose);
  result.dark_clicks = darks.size();
  if (!darks.empty()) {
    const size_t mid = result.stream.bins.size();
    result.stream.bins.insert(result.stream.bins.end(), darks.begin(), darks.end());
    std::inplace_merge(result.stream.bins.begin(), result.stream.bins.begin() + mid,
                       result.stream.bins.end());
  }
  result.stream.channels.assign(result.stream.bins.size(), channel);
  return result;
}

}  // namespace qlink
