#pragma once

#include <cstdint>
#include <vector>

#include "qlink/environment.hpp"
#include "qlink/pair_source.hpp"
#include "qlink/quantum_state.hpp"

// Deployed-fibre impairments for the travelling photon: attenuation,
// propagation delay, chromatic-dispersion time spread (a deterministic linear
// wavelength→delay map), a slowly drifting birefringence unitary, and the
// thermal delay drift supplied by the environment module.

namespace qlink {

// Slowly varying polarization rotation. `none` is the identity; `constant` a
// fixed rotation; `random_walk` a rotation-vector random walk with waypoints
// every `walk_interval_s`, step size `walk_step_deg` per waypoint (per axis,
// Gaussian), linearly interpolated and amplitude-capped at `walk_cap_deg`.
struct BirefringenceSpec {
  enum class Mode { none, constant, random_walk };
  Mode mode = Mode::random_walk;
  PoincareRotation constant_rotation = PoincareRotation::identity();
  double walk_step_deg = 1.5;
  double walk_cap_deg = 12.0;
  double walk_interval_s = 60.0;
};

// Waypoints realized for a concrete (seed, duration); evaluation is then a
// pure lookup, so chunked simulation sees one consistent trajectory.
class BirefringenceTrajectory {
 public:
  BirefringenceTrajectory() = default;
  BirefringenceTrajectory(const BirefringenceSpec& spec, std::uint64_t seed, double duration_s);

  PoincareRotation at(double t_s) const;

 private:
  BirefringenceSpec spec_;
  std::vector<std::array<double, 3>> waypoints_;  // rotation vectors, deg
};

struct ChannelConfig {
  double length_m = 192820.538;
  double loss_db = 48.0;
  double base_delay_ps = 9.45e8;          // 0.945 ms
  double dispersion_fwhm_ps = 760.0;      // arrival spread FWHM from the source spectrum
  double dispersion_sign = 1.0;           // sign of the wavelength→delay slope
  double group_index = 1.4692619;         // c·base_delay/length by default
  BirefringenceSpec birefringence;

  // Slope magnitude chosen so a source of the given spectral FWHM acquires an
  // arrival-spread FWHM of dispersion_fwhm_ps.
  double dispersion_slope_ps_per_nm(double source_fwhm_nm) const;
};

// 10^(−loss_db/10).
double transmission_from_db(double loss_db);

struct TravellingPhoton {
  std::int64_t emission_ps = 0;
  double extra_delay_ps = 0.0;   // dispersion + thermal shift (base delay kept separate)
  double born_u = 0.0;
  PoincareRotation rotation;     // birefringence at emission time
};

// Applies loss thinning (survival probability = transmission × extra_coupling,
// decided by a per-event stream keyed on the emission time), dispersion and
// thermal delay shifts, and attaches the birefringence rotation at emission.
// The thermal profile may be empty. Events must be time-ordered.
std::vector<TravellingPhoton> propagate(const std::vector<PairEvent>& events,
                                        const ChannelConfig& cfg,
                                        const BirefringenceTrajectory& trajectory,
                                        const TemperatureProfile& thermal_profile,
                                        const ThermalConstants& thermal_constants,
                                        double source_fwhm_nm, double extra_coupling,
                                        std::uint64_t seed);

}  // namespace qlink
