#include "qlink/quantum_state.hpp"

#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>

namespace qlink {

namespace {

constexpr double kPi = 3.141592653589793238462643383279;

double normalize_angle_deg(double deg) {
  // Polarization angles are periodic with period 180°; normalize to (-90, 90].
  double a = std::fmod(deg, 180.0);
  if (a <= -90.0) a += 180.0;
  if (a > 90.0) a -= 180.0;
  return a;
}

}  // namespace

BasisSetting BasisSetting::from_angle(double deg) { return {normalize_angle_deg(deg)}; }

BasisSetting BasisSetting::from_label(const std::string& label) {
  if (label == "H" || label == "h") return h();
  if (label == "V" || label == "v") return v();
  if (label == "D" || label == "d") return d();
  if (label == "A" || label == "a") return a();
  try {
    size_t pos = 0;
    double deg = std::stod(label, &pos);
    if (pos == label.size()) return from_angle(deg);
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("unknown analyzer setting '" + label +
                              "' (expected H, V, D, A or an angle in degrees)");
}

std::string BasisSetting::label() const {
  const double a = normalize_angle_deg(angle_deg);
  if (std::abs(a) < 1e-9) return "H";
  if (std::abs(a - 90.0) < 1e-9) return "V";
  if (std::abs(a - 45.0) < 1e-9) return "D";
  if (std::abs(a + 45.0) < 1e-9) return "A";
  std::ostringstream os;
  os << a;
  return os.str();
}

BasisSetting BasisSetting::orthogonal() const { return from_angle(angle_deg + 90.0); }

PoincareRotation PoincareRotation::about(double s1, double s2, double s3, double angle_deg) {
  const double n = std::sqrt(s1 * s1 + s2 * s2 + s3 * s3);
  if (n < 1e-300) throw std::invalid_argument("rotation axis must be nonzero");
  return {{s1 / n, s2 / n, s3 / n}, angle_deg};
}

std::array<double, 3> PoincareRotation::rotation_vector_deg() const {
  return {axis[0] * angle_deg, axis[1] * angle_deg, axis[2] * angle_deg};
}

PoincareRotation PoincareRotation::from_rotation_vector_deg(const std::array<double, 3>& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n < 1e-12) return identity();
  return {{v[0] / n, v[1] / n, v[2] / n}, n};
}

TwoPhotonState make_phi_minus() {
  // (|VV⟩ − |HH⟩)/√2 in basis order (HH, HV, VH, VV).
  Vector4cd ket = Vector4cd::Zero();
  ket(0) = -1.0 / std::sqrt(2.0);
  ket(3) = 1.0 / std::sqrt(2.0);
  TwoPhotonState s;
  s.rho = ket * ket.adjoint();
  return s;
}

TwoPhotonState werner_mix(const TwoPhotonState& state, double p) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw std::invalid_argument("werner_mix: weight must lie in [0, 1]");
  }
  TwoPhotonState out;
  out.rho = p * state.rho + (1.0 - p) * 0.25 * Matrix4cd::Identity();
  return out;
}

double werner_weight_for_fidelity(double fidelity) {
  if (!(fidelity >= 0.25 && fidelity <= 1.0)) {
    throw std::invalid_argument("werner_weight_for_fidelity: fidelity must lie in [0.25, 1]");
  }
  return (4.0 * fidelity - 1.0) / 3.0;
}

Matrix2cd su2_from_poincare(const PoincareRotation& r) {
  const double norm = std::sqrt(r.axis[0] * r.axis[0] + r.axis[1] * r.axis[1] +
                                r.axis[2] * r.axis[2]);
  if (std::abs(norm - 1.0) > 1e-12) {
    throw std::invalid_argument("su2_from_poincare: axis must be a unit vector");
  }
  const double half = 0.5 * r.angle_deg * kPi / 180.0;
  const std::complex<double> i(0.0, 1.0);
  const double c = std::cos(half);
  const double s = std::sin(half);
  // n·σ with S1↔σz, S2↔σx, S3↔σy.
  Matrix2cd nsigma;
  nsigma << r.axis[0], std::complex<double>(r.axis[1], -r.axis[2]),
      std::complex<double>(r.axis[1], r.axis[2]), -r.axis[0];
  return c * Matrix2cd::Identity() - i * s * nsigma;
}

Matrix4cd kron(const Matrix2cd& a, const Matrix2cd& b) {
  Matrix4cd out;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      out.block<2, 2>(2 * i, 2 * j) = a(i, j) * b;
  return out;
}

TwoPhotonState apply_one_sided_unitary(const TwoPhotonState& state, const PoincareRotation& r) {
  const Matrix4cd u = kron(Matrix2cd::Identity(), su2_from_poincare(r));
  TwoPhotonState out;
  out.rho = u * state.rho * u.adjoint();
  return out;
}

Matrix2cd polarizer_projector(const BasisSetting& basis, double contrast) {
  if (!(contrast >= 0.0 && contrast <= 1.0)) {
    throw std::invalid_argument("polarizer_projector: contrast must lie in [0, 1]");
  }
  const double t = basis.angle_deg * kPi / 180.0;
  Eigen::Vector2cd jones;
  jones << std::cos(t), std::sin(t);
  Matrix2cd p = jones * jones.adjoint();
  if (contrast < 1.0) p = contrast * p + (1.0 - contrast) * 0.5 * Matrix2cd::Identity();
  return p;
}

double coincidence_probability(const TwoPhotonState& state, const BasisSetting& a,
                               const BasisSetting& b, double contrast) {
  const Matrix4cd proj = kron(polarizer_projector(a, contrast), polarizer_projector(b, contrast));
  double p = (state.rho * proj).trace().real();
  if (p < 0.0 && p > -1e-12) p = 0.0;
  if (p > 1.0 && p < 1.0 + 1e-12) p = 1.0;
  return p;
}

double single_sided_click_probability(const TwoPhotonState& state, const BasisSetting& basis,
                                      const PoincareRotation& rotation, Arm arm,
                                      double contrast) {
  const TwoPhotonState rotated =
      (arm == Arm::remote) ? apply_one_sided_unitary(state, rotation) : state;
  // Partial trace over the partner photon.
  Matrix2cd reduced = Matrix2cd::Zero();
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      std::complex<double> sum = 0.0;
      for (int k = 0; k < 2; ++k) {
        if (arm == Arm::local) {
          sum += rotated.rho(2 * i + k, 2 * j + k);  // trace out slot 2
        } else {
          sum += rotated.rho(2 * k + i, 2 * k + j);  // trace out slot 1
        }
      }
      reduced(i, j) = sum;
    }
  }
  double p = (reduced * polarizer_projector(basis, contrast)).trace().real();
  if (p < 0.0 && p > -1e-12) p = 0.0;
  if (p > 1.0 && p < 1.0 + 1e-12) p = 1.0;
  return p;
}

double fidelity_to_phi_minus(const TwoPhotonState& state) {
  Vector4cd ket = Vector4cd::Zero();
  ket(0) = -1.0 / std::sqrt(2.0);
  ket(3) = 1.0 / std::sqrt(2.0);
  return (ket.adjoint() * state.rho * ket)(0).real();
}

void validate_state(const TwoPhotonState& state) {
  const Matrix4cd& rho = state.rho;
  const double herm = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  if (herm > 1e-12) {
    std::ostringstream os;
    os << "state is not Hermitian (max |rho - rho†| = " << herm << ")";
    throw std::invalid_argument(os.str());
  }
  const double tr = rho.trace().real();
  if (std::abs(tr - 1.0) > 1e-12) {
    std::ostringstream os;
    os << "state trace is " << tr << ", expected 1";
    throw std::invalid_argument(os.str());
  }
  Eigen::SelfAdjointEigenSolver<Matrix4cd> solver(rho);
  const double min_eig = solver.eigenvalues().minCoeff();
  if (min_eig < -1e-10) {
    std::ostringstream os;
    os << "state is not positive semidefinite (min eigenvalue = " << min_eig << ")";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace qlink
