#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "qlink/quantum_state.hpp"

// Physics figures of merit derived from coincidence counting: polarization
// visibility, fidelity bounds, QBER, accidental-coincidence modelling and
// asymptotic secure key rates.

namespace qlink {

struct MeasurementRecord {
  BasisSetting basis_a;
  BasisSetting basis_b;
  double duration_s = 0.0;
  std::uint64_t coincidences = 0;
  std::uint64_t singles_a = 0;
  std::uint64_t singles_b = 0;

  double coincidence_rate() const { return static_cast<double>(coincidences) / duration_s; }
};

enum class BasisFamily { hv, da };

struct VisibilityResult {
  BasisFamily family = BasisFamily::hv;
  double visibility = 0.0;
  double std_error = 0.0;  // Poisson propagation through the summed counts
};

struct KeyRateEstimate {
  double sifted_rate = 0.0;   // s^-1
  double qber = 0.0;
  double secure_rate = 0.0;   // s^-1, clamped at zero
  double ec_efficiency = 1.15;
};

// Visibility of one basis family from its four measurement records (two with
// orthogonal analyzer labels — the correlated combinations — and two with
// equal labels): V = (C_corr − C_unc)/(C_corr + C_unc) on duration-normalized
// rates. Returns nullopt when every record has zero counts.
std::optional<VisibilityResult> visibility(std::span<const MeasurementRecord> records);

// Mean of the two basis visibilities; lower-bounds the state fidelity.
double fidelity_lower_bound(double v_hv, double v_da);

// (1 − V)/2, clamped to [0, 0.5].
double qber_from_visibility(double v);

// Accidental coincidence rate of two independent click streams: s1·s2·window.
double accidental_rate(double singles_1_hz, double singles_2_hz, double window_ps);

// Best achievable fidelity when accidentals (maximally mixed contributions)
// dilute true pairs: (F·C_true + 0.25·C_acc)/(C_true + C_acc).
double fidelity_ceiling(double local_fidelity, double true_rate_hz, double accidental_rate_hz);

// Same, with the accidental rate taken from the product of singles rates.
double fidelity_ceiling(double local_fidelity, double true_rate_hz, double singles_1_hz,
                        double singles_2_hz, double window_ps);

// Sifted key rate from the eight protocol measurements: (Σ rates)/4.
double sifted_rate(std::span<const MeasurementRecord> records);

// H2(x) = −x·log2(x) − (1−x)·log2(1−x), with H2(0) = H2(1) = 0.
double binary_entropy(double x);

// Asymptotic secure rate max(0, sifted·(1 − f·H2(e) − H2(e))).
double secure_rate(double sifted_hz, double qber, double ec_efficiency = 1.15);

KeyRateEstimate key_rate_estimate(double sifted_hz, double qber, double ec_efficiency = 1.15);

// Smallest QBER with zero secure rate, located by bisection to 1e-4.
double secure_rate_threshold(double ec_efficiency = 1.15);

enum class RotationConvention {
  cosine,     // θ = arccos(v_obs / v_ref)
  qber_sin2,  // θ = 2·arcsin(√((v_ref − v_obs)/2))
};

// Poincaré-sphere rotation angle (degrees) consistent with a visibility drop.
double rotation_angle_from_visibility_drop(double v_ref, double v_obs,
                                           RotationConvention convention);

}  // namespace qlink
