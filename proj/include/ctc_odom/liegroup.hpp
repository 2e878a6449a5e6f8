#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace ctc {

/// Exponential coordinates xi = (v, w): v is the translational part in
/// meters, w the rotation vector in radians.
using Se3Vec = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline Eigen::Vector3d translational(const Se3Vec& xi) { return xi.head<3>(); }
inline Eigen::Vector3d rotational(const Se3Vec& xi) { return xi.tail<3>(); }
Se3Vec make_se3(const Eigen::Vector3d& v, const Eigen::Vector3d& w);

/// Rigid-body transform with a rotation matrix and a translation.
///
/// The rotation is kept orthonormal with det = +1 (tolerance 1e-9). The
/// checked constructor rejects anything else; library operations that
/// produce poses maintain the invariant themselves.
class SE3Pose {
 public:
  SE3Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}

  /// Throws InvalidArgument if R is not a rotation or any entry is non-finite.
  SE3Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation);

  static SE3Pose identity() { return {}; }
  static SE3Pose translate(double x, double y, double z);
  /// Projects an arbitrary 3x3 matrix onto SO(3) (polar decomposition).
  static SE3Pose from_nearest_rotation(const Eigen::Matrix3d& m, const Eigen::Vector3d& t);

  const Eigen::Matrix3d& rotation() const { return rotation_; }
  const Eigen::Vector3d& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  /// max |R^T R - I|.
  double orthonormality_drift() const;

  SE3Pose operator*(const SE3Pose& other) const;

 private:
  struct Unchecked {};
  SE3Pose(Unchecked, const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {}

  friend SE3Pose exp_map(const Se3Vec& xi);
  friend SE3Pose compose(const SE3Pose& a, const SE3Pose& b);
  friend SE3Pose inverse(const SE3Pose& pose);

  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

/// Angle below which exp/log switch to their Taylor expansions.
inline constexpr double kSmallAngle = 1e-6;
/// log_map refuses rotations with angle > pi - kCutLocusMargin.
inline constexpr double kCutLocusMargin = 1e-6;
/// Central-difference step of chain_log_jacobian.
inline constexpr double kJacobianStep = 1e-5;
/// compose re-projects the rotation when drift exceeds this.
inline constexpr double kComposeDriftTolerance = 1e-12;
/// compose_all re-projects after this many compositions.
inline constexpr int kReorthonormalizeEvery = 1000;

Eigen::Matrix3d hat(const Eigen::Vector3d& w);
Eigen::Vector3d vee(const Eigen::Matrix3d& m);

/// Left-multiplicative convention: exp_map(xi) = expm([hat(w) v; 0 0]).
SE3Pose exp_map(const Se3Vec& xi);

/// Inverse of exp_map on angles in [0, pi). Throws NearSingularity when the
/// rotation angle is within kCutLocusMargin of pi.
Se3Vec log_map(const SE3Pose& pose);

/// a * b. The rotation is projected back onto SO(3) if the product drifted
/// beyond kComposeDriftTolerance.
SE3Pose compose(const SE3Pose& a, const SE3Pose& b);

SE3Pose inverse(const SE3Pose& pose);

/// Left-to-right product of a pose sequence, re-projecting every
/// kReorthonormalizeEvery factors.
SE3Pose compose_all(std::span<const SE3Pose> poses);

/// log(exp(xi_1) * ... * exp(xi_n)). Throws InvalidArgument on an empty chain.
Se3Vec chain_log(std::span<const Se3Vec> xis);

/// d chain_log / d xi_k by central differences with step kJacobianStep.
Mat6 chain_log_jacobian(std::span<const Se3Vec> xis, std::size_t k);

/// All of d chain_log / d xi_k for k = 0..n-1. Equivalent to calling
/// chain_log_jacobian for every k but reuses prefix and suffix products.
std::vector<Mat6> chain_log_jacobians(std::span<const Se3Vec> xis);

}  // namespace ctc
