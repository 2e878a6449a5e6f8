#include "ctc_odom/liegroup.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

#include "ctc_odom/errors.hpp"

namespace ctc {

namespace {

constexpr double kValidityTolerance = 1e-9;

Eigen::Matrix3d project_to_rotation(const Eigen::Matrix3d& m) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return u * v.transpose();
}

double drift_of(const Eigen::Matrix3d& r) {
  return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

// Coefficients of the closed-form exponential:
//   R = I + a W + b W^2,  V = I + b W + c W^2.
struct ExpCoefficients {
  double a, b, c;
};

ExpCoefficients exp_coefficients(double theta) {
  const double theta2 = theta * theta;
  if (theta < kSmallAngle) {
    return {1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0};
  }
  const double s = std::sin(theta);
  const double half = std::sin(0.5 * theta);
  return {s / theta, 2.0 * half * half / theta2, (theta - s) / (theta2 * theta)};
}

}  // namespace

Se3Vec make_se3(const Eigen::Vector3d& v, const Eigen::Vector3d& w) {
  Se3Vec xi;
  xi << v, w;
  return xi;
}

SE3Pose::SE3Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
    : rotation_(rotation), translation_(translation) {
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw InvalidArgument("SE3Pose: non-finite entry");
  }
  if (drift_of(rotation) > kValidityTolerance ||
      std::abs(rotation.determinant() - 1.0) > kValidityTolerance) {
    throw InvalidArgument("SE3Pose: rotation matrix is not orthonormal with det +1");
  }
}

SE3Pose SE3Pose::translate(double x, double y, double z) {
  return SE3Pose(Eigen::Matrix3d::Identity(), Eigen::Vector3d(x, y, z));
}

SE3Pose SE3Pose::from_nearest_rotation(const Eigen::Matrix3d& m, const Eigen::Vector3d& t) {
  if (!m.allFinite()) throw InvalidArgument("SE3Pose: non-finite rotation");
  return SE3Pose(project_to_rotation(m), t);
}

Eigen::Matrix4d SE3Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

double SE3Pose::orthonormality_drift() const { return drift_of(rotation_); }

SE3Pose SE3Pose::operator*(const SE3Pose& other) const { return compose(*this, other); }

Eigen::Matrix3d hat(const Eigen::Vector3d& w) {
  Eigen::Matrix3d m;
  m << 0.0, -w.z(), w.y(),
       w.z(), 0.0, -w.x(),
       -w.y(), w.x(), 0.0;
  return m;
}

Eigen::Vector3d vee(const Eigen::Matrix3d& m) { return {m(2, 1), m(0, 2), m(1, 0)}; }

SE3Pose exp_map(const Se3Vec& xi) {
  if (!xi.allFinite()) throw InvalidArgument("exp_map: non-finite exponential coordinates");
  const Eigen::Vector3d w = rotational(xi);
  const Eigen::Matrix3d wx = hat(w);
  const Eigen::Matrix3d wx2 = wx * wx;
  const auto [a, b, c] = exp_coefficients(w.norm());
  const Eigen::Matrix3d identity = Eigen::Matrix3d::Identity();
  const Eigen::Matrix3d r = identity + a * wx + b * wx2;
  const Eigen::Matrix3d v = identity + b * wx + c * wx2;
  return SE3Pose(SE3Pose::Unchecked{}, r, v * translational(xi));
}

Se3Vec log_map(const SE3Pose& pose) {
  const Eigen::Matrix3d& r = pose.rotation();
  // sin(theta) * axis, from the antisymmetric part.
  const Eigen::Vector3d s = 0.5 * vee(r - r.transpose());
  const double cos_theta = 0.5 * (r.trace() - 1.0);
  const double theta = std::atan2(s.norm(), cos_theta);
  if (theta > std::numbers::pi - kCutLocusMargin) {
    throw NearSingularity("log_map: rotation angle within 1e-6 of pi");
  }

  const double theta2 = theta * theta;
  Eigen::Vector3d w;
  double d;  // V^-1 = I - W/2 + d W^2
  if (theta < kSmallAngle) {
    w = s * (1.0 + theta2 / 6.0);
    d = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    w = s * (theta / std::sin(theta));
    const double half = 0.5 * theta;
    d = (1.0 - half * std::cos(half) / std::sin(half)) / theta2;
  }
  const Eigen::Matrix3d wx = hat(w);
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() - 0.5 * wx + d * wx * wx;
  return make_se3(v_inv * pose.translation(), w);
}

SE3Pose compose(const SE3Pose& a, const SE3Pose& b) {
  Eigen::Matrix3d r = a.rotation_ * b.rotation_;
  if (drift_of(r) > kComposeDriftTolerance) r = project_to_rotation(r);
  return SE3Pose(SE3Pose::Unchecked{}, r, a.rotation_ * b.translation_ + a.translation_);
}

SE3Pose inverse(const SE3Pose& pose) {
  const Eigen::Matrix3d rt = pose.rotation_.transpose();
  return SE3Pose(SE3Pose::Unchecked{}, rt, -(rt * pose.translation_));
}

SE3Pose compose_all(std::span<const SE3Pose> poses) {
  SE3Pose out;
  int since_projection = 0;
  for (const auto& p : poses) {
    out = compose(out, p);
    if (++since_projection == kReorthonormalizeEvery) {
      out = SE3Pose::from_nearest_rotation(out.rotation(), out.translation());
      since_projection = 0;
    }
  }
  return out;
}

Se3Vec chain_log(std::span<const Se3Vec> xis) {
  if (xis.empty()) throw InvalidArgument("chain_log: empty chain");
  if (xis.size() == 1) return log_map(exp_map(xis.front()));
  std::vector<SE3Pose> poses;
  poses.reserve(xis.size());
  for (const auto& xi : xis) poses.push_back(exp_map(xi));
  return log_map(compose_all(poses));
}

Mat6 chain_log_jacobian(std::span<const Se3Vec> xis, std::size_t k) {
  if (k >= xis.size()) throw InvalidArgument("chain_log_jacobian: index out of range");
  std::vector<Se3Vec> work(xis.begin(), xis.end());
  Mat6 jac;
  for (int i = 0; i < 6; ++i) {
    const double base = work[k](i);
    work[k](i) = base + kJacobianStep;
    const Se3Vec plus = chain_log(work);
    work[k](i) = base - kJacobianStep;
    const Se3Vec minus = chain_log(work);
    work[k](i) = base;
    jac.col(i) = (plus - minus) / (2.0 * kJacobianStep);
  }
  return jac;
}

std::vector<Mat6> chain_log_jacobians(std::span<const Se3Vec> xis) {
  const std::size_t n = xis.size();
  if (n == 0) throw InvalidArgument("chain_log_jacobians: empty chain");
  std::vector<SE3Pose> factors;
  factors.reserve(n);
  for (const auto& xi : xis) factors.push_back(exp_map(xi));

  // prefix[k] = factors[0..k), suffix[k] = factors(k..n)
  std::vector<SE3Pose> prefix(n), suffix(n);
  for (std::size_t k = 1; k < n; ++k) prefix[k] = compose(prefix[k - 1], factors[k - 1]);
  for (std::size_t k = n - 1; k-- > 0;) suffix[k] = compose(factors[k + 1], suffix[k + 1]);

  std::vector<Mat6> jacobians(n);
  for (std::size_t k = 0; k < n; ++k) {
    Se3Vec xi = xis[k];
    for (int i = 0; i < 6; ++i) {
      const double base = xi(i);
      xi(i) = base + kJacobianStep;
      const Se3Vec plus = log_map(compose(compose(prefix[k], exp_map(xi)), suffix[k]));
      xi(i) = base - kJacobianStep;
      const Se3Vec minus = log_map(compose(compose(prefix[k], exp_map(xi)), suffix[k]));
      xi(i) = base;
      jacobians[k].col(i) = (plus - minus) / (2.0 * kJacobianStep);
    }
  }
  return jacobians;
}

}  // namespace ctc
