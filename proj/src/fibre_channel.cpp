#include "qlink/fibre_channel.hpp"

#include <cmath>
#include <stdexcept>

#include "qlink/rng.hpp"

namespace qlink {

namespace {

std::array<double, 3> cap_vector(const std::array<double, 3>& v, double cap) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n <= cap || n == 0.0) return v;
  const double s = cap / n;
  return {v[0] * s, v[1] * s, v[2] * s};
}

}  // namespace

BirefringenceTrajectory::BirefringenceTrajectory(const BirefringenceSpec& spec,
                                                 std::uint64_t seed, double duration_s)
    : spec_(spec) {
  if (spec_.mode != BirefringenceSpec::Mode::random_walk) return;
  if (!(spec_.walk_interval_s > 0.0)) {
    throw std::invalid_argument("birefringence walk interval must be > 0");
  }
  const size_t n = static_cast<size_t>(std::ceil(duration_s / spec_.walk_interval_s)) + 2;
  waypoints_.reserve(n);
  std::array<double, 3> v = {0.0, 0.0, 0.0};
  waypoints_.push_back(v);
  for (size_t k = 1; k < n; ++k) {
    CounterRng rng(seed, StreamPurpose::channel_walk, k);
    v[0] += spec_.walk_step_deg * rng.gaussian();
    v[1] += spec_.walk_step_deg * rng.gaussian();
    v[2] += spec_.walk_step_deg * rng.gaussian();
    v = cap_vector(v, spec_.walk_cap_deg);
    waypoints_.push_back(v);
  }
}

PoincareRotation BirefringenceTrajectory::at(double t_s) const {
  switch (spec_.mode) {
    case BirefringenceSpec::Mode::none:
      return PoincareRotation::identity();
    case BirefringenceSpec::Mode::constant:
      return spec_.constant_rotation;
    case BirefringenceSpec::Mode::random_walk:
      break;
  }
  if (waypoints_.size() < 2) return PoincareRotation::identity();
  double x = t_s / spec_.walk_interval_s;
  if (x < 0.0) x = 0.0;
  size_t k = static_cast<size_t>(x);
  if (k + 1 >= waypoints_.size()) k = waypoints_.size() - 2;
  const double w = x - static_cast<double>(k);
  const auto& lo = waypoints_[k];
  const auto& hi = waypoints_[k + 1];
  std::array<double, 3> v = {lo[0] + w * (hi[0] - lo[0]), lo[1] + w * (hi[1] - lo[1]),
                             lo[2] + w * (hi[2] - lo[2])};
  return PoincareRotation::from_rotation_vector_deg(v);
}

double ChannelConfig::dispersion_slope_ps_per_nm(double source_fwhm_nm) const {
  if (!(source_fwhm_nm > 0.0)) {
    if (dispersion_fwhm_ps == 0.0) return 0.0;
    throw std::invalid_argument("source spectral FWHM must be > 0 when dispersion is enabled");
  }
  return dispersion_sign * dispersion_fwhm_ps / source_fwhm_nm;
}

double transmission_from_db(double loss_db) {
  if (loss_db < 0.0) throw std::invalid_argument("loss_db must be >= 0");
  return std::pow(10.0, -loss_db / 10.0);
}

std::vector<TravellingPhoton> propagate(const std::vector<PairEvent>& events,
                                        const ChannelConfig& cfg,
                                        const BirefringenceTrajectory& trajectory,
                                        const TemperatureProfile& thermal_profile,
                                        const ThermalConstants& thermal_constants,
                                        double source_fwhm_nm, double extra_coupling,
                                        std::uint64_t seed) {
  if (!(extra_coupling >= 0.0 && extra_coupling <= 1.0)) {
    throw std::invalid_argument("coupling must lie in [0, 1]");
  }
  const double survival = transmission_from_db(cfg.loss_db) * extra_coupling;
  const double slope = cfg.dispersion_slope_ps_per_nm(source_fwhm_nm);
  std::vector<TravellingPhoton> out;
  out.reserve(static_cast<size_t>(static_cast<double>(events.size()) * survival * 1.2) + 16);
  for (const PairEvent& ev : events) {
    CounterRng loss(seed, StreamPurpose::channel_loss, static_cast<std::uint64_t>(ev.emission_ps));
    if (loss.uniform() >= survival) continue;
    TravellingPhoton p;
    p.emission_ps = ev.emission_ps;
    const double t_s = static_cast<double>(ev.emission_ps) * 1e-12;
    p.extra_delay_ps = slope * ev.signal_wl_offset_nm +
                       thermal_profile.delay_offset_ps(t_s, thermal_constants);
    p.born_u = ev.born_u;
    p.rotation = trajectory.at(t_s);
    out.push_back(p);
  }
  return out;
}

}  // namespace qlink
