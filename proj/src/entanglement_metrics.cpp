#include "qlink/entanglement_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qlink {

namespace {

bool is_hv_label(const BasisSetting& b) {
  const double a = std::abs(b.angle_deg);
  return a < 1e-9 || std::abs(a - 90.0) < 1e-9;
}

bool is_da_label(const BasisSetting& b) { return std::abs(std::abs(b.angle_deg) - 45.0) < 1e-9; }

bool labels_orthogonal(const BasisSetting& a, const BasisSetting& b) {
  return std::abs(a.angle_deg - b.orthogonal().angle_deg) < 1e-9;
}

bool labels_equal(const BasisSetting& a, const BasisSetting& b) {
  return std::abs(a.angle_deg - b.angle_deg) < 1e-9;
}

void check_record(const MeasurementRecord& r) {
  if (!(r.duration_s > 0.0)) throw std::invalid_argument("measurement duration must be positive");
}

}  // namespace

std::optional<VisibilityResult> visibility(std::span<const MeasurementRecord> records) {
  if (records.size() != 4) {
    throw std::invalid_argument("visibility needs exactly four measurement records");
  }
  const bool hv = is_hv_label(records[0].basis_a);
  for (const auto& r : records) {
    check_record(r);
    const bool a_hv = is_hv_label(r.basis_a), a_da = is_da_label(r.basis_a);
    const bool b_hv = is_hv_label(r.basis_b), b_da = is_da_label(r.basis_b);
    if (!((a_hv && b_hv) || (a_da && b_da))) {
      throw std::invalid_argument("record bases are not a single H/V or D/A family");
    }
    if (a_hv != hv) throw std::invalid_argument("records mix H/V and D/A families");
  }

  double corr_rate = 0.0, unc_rate = 0.0;
  double corr_var = 0.0, unc_var = 0.0;  // variances of the summed rates
  int n_corr = 0, n_unc = 0;
  std::uint64_t total_counts = 0;
  for (const auto& r : records) {
    const double rate = r.coincidence_rate();
    const double var = static_cast<double>(r.coincidences) / (r.duration_s * r.duration_s);
    total_counts += r.coincidences;
    if (labels_orthogonal(r.basis_a, r.basis_b)) {
      corr_rate += rate;
      corr_var += var;
      ++n_corr;
    } else if (labels_equal(r.basis_a, r.basis_b)) {
      unc_rate += rate;
      unc_var += var;
      ++n_unc;
    } else {
      throw std::invalid_argument("record bases are neither equal nor orthogonal labels");
    }
  }
  if (n_corr != 2 || n_unc != 2) {
    throw std::invalid_argument("visibility needs two orthogonal-label and two equal-label records");
  }
  if (total_counts == 0) return std::nullopt;

  VisibilityResult out;
  out.family = hv ? BasisFamily::hv : BasisFamily::da;
  const double total = corr_rate + unc_rate;
  out.visibility = (corr_rate - unc_rate) / total;
  // V = (A − B)/(A + B): dV/dA = 2B/(A+B)^2, dV/dB = −2A/(A+B)^2.
  out.std_error = 2.0 / (total * total) *
                  std::sqrt(unc_rate * unc_rate * corr_var + corr_rate * corr_rate * unc_var);
  return out;
}

double fidelity_lower_bound(double v_hv, double v_da) {
  if (std::abs(v_hv) > 1.0 || std::abs(v_da) > 1.0) {
    throw std::invalid_argument("visibilities must lie in [-1, 1]");
  }
  return 0.5 * (v_hv + v_da);
}

double qber_from_visibility(double v) {
  if (std::abs(v) > 1.0) throw std::invalid_argument("visibility must lie in [-1, 1]");
  return std::clamp(0.5 * (1.0 - v), 0.0, 0.5);
}

double accidental_rate(double singles_1_hz, double singles_2_hz, double window_ps) {
  if (singles_1_hz < 0.0 || singles_2_hz < 0.0 || window_ps < 0.0) {
    throw std::invalid_argument("rates and window must be non-negative");
  }
  return singles_1_hz * singles_2_hz * window_ps * 1e-12;
}

double fidelity_ceiling(double local_fidelity, double true_rate_hz, double accidental_rate_hz) {
  if (local_fidelity < 0.0 || local_fidelity > 1.0) {
    throw std::invalid_argument("fidelity must lie in [0, 1]");
  }
  if (true_rate_hz < 0.0 || accidental_rate_hz < 0.0) {
    throw std::invalid_argument("rates must be non-negative");
  }
  const double total = true_rate_hz + accidental_rate_hz;
  if (total == 0.0) return local_fidelity;
  return (local_fidelity * true_rate_hz + 0.25 * accidental_rate_hz) / total;
}

double fidelity_ceiling(double local_fidelity, double true_rate_hz, double singles_1_hz,
                        double singles_2_hz, double window_ps) {
  return fidelity_ceiling(local_fidelity, true_rate_hz,
                          accidental_rate(singles_1_hz, singles_2_hz, window_ps));
}

double sifted_rate(std::span<const MeasurementRecord> records) {
  if (records.size() != 8) {
    throw std::invalid_argument("sifted rate needs exactly eight measurement records");
  }
  double sum = 0.0;
  for (const auto& r : records) {
    check_record(r);
    sum += r.coincidence_rate();
  }
  return sum / 4.0;
}

double binary_entropy(double x) {
  if (x <= 0.0 || x >= 1.0) return 0.0;
  return -x * std::log2(x) - (1.0 - x) * std::log2(1.0 - x);
}

double secure_rate(double sifted_hz, double qber, double ec_efficiency) {
  if (sifted_hz < 0.0) throw std::invalid_argument("sifted rate must be non-negative");
  if (qber < 0.0 || qber > 0.5) throw std::invalid_argument("qber must lie in [0, 0.5]");
  if (!(ec_efficiency > 0.0)) throw std::invalid_argument("error-correction efficiency must be positive");
  const double h = binary_entropy(qber);
  return std::max(0.0, sifted_hz * (1.0 - ec_efficiency * h - h));
}

KeyRateEstimate key_rate_estimate(double sifted_hz, double qber, double ec_efficiency) {
  KeyRateEstimate est;
  est.sifted_rate = sifted_hz;
  est.qber = qber;
  est.ec_efficiency = ec_efficiency;
  est.secure_rate = secure_rate(sifted_hz, qber, ec_efficiency);
  return est;
}

double secure_rate_threshold(double ec_efficiency) {
  if (!(ec_efficiency > 0.0)) throw std::invalid_argument("error-correction efficiency must be positive");
  // 1 − (1 + f)·H2(e) is decreasing on [0, 0.5]; bisect for its zero.
  auto margin = [ec_efficiency](double e) {
    return 1.0 - (ec_efficiency + 1.0) * binary_entropy(e);
  };
  double lo = 0.0, hi = 0.5;
  if (margin(hi) > 0.0) return hi;
  while (hi - lo > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    (margin(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double rotation_angle_from_visibility_drop(double v_ref, double v_obs,
                                           RotationConvention convention) {
  if (!(v_obs > 0.0) || v_ref > 1.0) {
    throw std::invalid_argument("visibilities must satisfy 0 < v_obs and v_ref <= 1");
  }
  if (v_obs > v_ref) throw std::invalid_argument("observed visibility exceeds reference");
  constexpr double kDegPerRad = 180.0 / 3.14159265358979323846;
  switch (convention) {
    case RotationConvention::cosine:
      return std::acos(std::clamp(v_obs / v_ref, -1.0, 1.0)) * kDegPerRad;
    case RotationConvention::qber_sin2: {
      const double s = std::sqrt(std::clamp(0.5 * (v_ref - v_obs), 0.0, 1.0));
      return 2.0 * std::asin(std::min(s, 1.0)) * kDegPerRad;
    }
  }
  throw std::invalid_argument("unknown rotation convention");
}

}  // namespace qlink
