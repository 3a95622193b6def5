#pragma once

#include <Eigen/Dense>

#include <array>
#include <string>

// Two-photon polarization algebra on the H/V ⊗ H/V space.
//
// Basis order of the 4x4 density matrix: (HH, HV, VH, VV), first slot = the
// locally detected photon, second slot = the travelling photon.
//
// Poincaré-sphere convention: Stokes axes S1 = H/V, S2 = D/A, S3 = R/L; a
// rotation by angle φ on the sphere corresponds to the SU(2) element with
// half angle φ/2 (Poincaré angle = 2 × SU(2) rotation angle), i.e.
// U = cos(φ/2)·I − i·sin(φ/2)·(n1·σz + n2·σx + n3·σy).

namespace qlink {

using Matrix2cd = Eigen::Matrix2cd;
using Matrix4cd = Eigen::Matrix4cd;
using Vector4cd = Eigen::Vector4cd;

// Linear-analyzer setting as a physical polarization angle in degrees,
// normalized to (-90, 90]. Canonical labels: H=0, V=90, D=45, A=-45.
struct BasisSetting {
  double angle_deg = 0.0;

  static BasisSetting from_angle(double deg);
  static BasisSetting h() { return {0.0}; }
  static BasisSetting v() { return {90.0}; }
  static BasisSetting d() { return {45.0}; }
  static BasisSetting a() { return {-45.0}; }

  // Parse "H", "V", "D", "A" or a numeric angle.
  static BasisSetting from_label(const std::string& label);

  // Canonical single-letter label, or the angle as text for other settings.
  std::string label() const;

  // Complementary port of the polarizing splitter (angle + 90°, normalized).
  BasisSetting orthogonal() const;
};

struct TwoPhotonState {
  Matrix4cd rho = Matrix4cd::Zero();
};

struct PoincareRotation {
  std::array<double, 3> axis = {1.0, 0.0, 0.0};  // unit vector (S1, S2, S3)
  double angle_deg = 0.0;

  static PoincareRotation identity() { return {{1.0, 0.0, 0.0}, 0.0}; }
  static PoincareRotation about(double s1, double s2, double s3, double angle_deg);

  // Rotation-vector form (axis scaled by angle in degrees) and back; used for
  // interpolating slowly drifting rotations.
  std::array<double, 3> rotation_vector_deg() const;
  static PoincareRotation from_rotation_vector_deg(const std::array<double, 3>& v);
};

// Which photon of the pair an operation refers to.
enum class Arm { local, remote };

TwoPhotonState make_phi_minus();

// p·rho + (1−p)·I/4. Throws std::invalid_argument for p outside [0, 1].
TwoPhotonState werner_mix(const TwoPhotonState& state, double p);

// Werner weight that yields a given fidelity to |Φ⁻⟩: p = (4F − 1)/3.
double werner_weight_for_fidelity(double fidelity);

// SU(2) element of a Poincaré-sphere rotation (see convention above).
Matrix2cd su2_from_poincare(const PoincareRotation& r);

// (I ⊗ U) rho (I ⊗ U)†: the channel unitary acts on the travelling photon.
TwoPhotonState apply_one_sided_unitary(const TwoPhotonState& state, const PoincareRotation& r);

// Ideal linear-polarizer projector at the given angle. `contrast` < 1 mixes
// in an isotropic leak: P_eff = contrast·P + (1−contrast)·I/2.
Matrix2cd polarizer_projector(const BasisSetting& basis, double contrast = 1.0);

// tr(rho · P_a ⊗ P_b); a measures the local photon, b the travelling one.
double coincidence_probability(const TwoPhotonState& state, const BasisSetting& a,
                               const BasisSetting& b, double contrast = 1.0);

// Marginal click probability of one photon: partial trace over the partner,
// then project. The rotation is the channel unitary accumulated by the
// travelling photon (it cannot change the local marginal, but is applied
// before measuring the remote one).
double single_sided_click_probability(const TwoPhotonState& state, const BasisSetting& basis,
                                      const PoincareRotation& rotation, Arm arm,
                                      double contrast = 1.0);

// ⟨Φ⁻| rho |Φ⁻⟩.
double fidelity_to_phi_minus(const TwoPhotonState& state);

// Validates Hermiticity (1e-12), unit trace (1e-12) and positive
// semidefiniteness (eigenvalues ≥ −1e-10); throws std::invalid_argument with
// a description of the first violated property.
void validate_state(const TwoPhotonState& state);

Matrix4cd kron(const Matrix2cd& a, const Matrix2cd& b);

}  // namespace qlink
