#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. Nothing here calls into the library's Lie-group code.

#include <Eigen/Core>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ctc_odom/constraints.hpp"
#include "ctc_odom/liegroup.hpp"

namespace ctc::support {

inline Eigen::Matrix4d twist_matrix(const Se3Vec& xi) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m(0, 1) = -xi(5);
  m(0, 2) = xi(4);
  m(1, 0) = xi(5);
  m(1, 2) = -xi(3);
  m(2, 0) = -xi(4);
  m(2, 1) = xi(3);
  m.topRightCorner<3, 1>() = xi.head<3>();
  return m;
}

// Matrix exponential of the 4x4 twist (Pade approximation inside Eigen).
inline Eigen::Matrix4d expm_oracle(const Se3Vec& xi) { return twist_matrix(xi).exp(); }

// Principal matrix logarithm of a 4x4 homogeneous transform.
inline Se3Vec logm_oracle(const Eigen::Matrix4d& t) {
  const Eigen::Matrix4d l = t.log();
  Se3Vec xi;
  xi << l(0, 3), l(1, 3), l(2, 3), l(2, 1), l(0, 2), l(1, 0);
  return xi;
}

inline Se3Vec chain_log_oracle(std::span<const Se3Vec> xis) {
  Eigen::Matrix4d product = Eigen::Matrix4d::Identity();
  for (const auto& xi : xis) product = product * expm_oracle(xi);
  return logm_oracle(product);
}

inline Eigen::Matrix3d rot_z(double angle) {
  Eigen::Matrix3d r;
  r << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
  return r;
}

// Random xi with the rotation angle drawn uniformly from [0, max_angle].
inline Se3Vec random_xi(std::mt19937_64& rng, double max_angle, double max_translation = 1.0) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::Vector3d axis(normal(rng), normal(rng), normal(rng));
  axis.normalize();
  const double angle = max_angle * unit(rng);
  Se3Vec xi;
  for (int k = 0; k < 3; ++k) xi(k) = max_translation * (2.0 * unit(rng) - 1.0);
  xi.tail<3>() = angle * axis;
  return xi;
}

inline Se3Vec small_xi(std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Se3Vec xi;
  for (int k = 0; k < 6; ++k) xi(k) = normal(rng);
  return xi;
}

// Estimates for every pair of a window [0, n): noisy copies of a random
// smooth trajectory, with priors perturbed once more.
struct WindowProblem {
  XiMap estimates;
  XiMap priors;
  std::vector<CompositeConstraint> constraints;
};

inline WindowProblem random_window_problem(std::mt19937_64& rng, int n) {
  std::vector<Eigen::Matrix4d> poses{Eigen::Matrix4d::Identity()};
  for (int k = 1; k < n; ++k) {
    Se3Vec step = small_xi(rng, 0.1);
    step(2) += 0.2;
    poses.push_back(poses.back() * expm_oracle(step));
  }
  WindowProblem p;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const Se3Vec truth = logm_oracle(poses[i].inverse() * poses[j]);
      const Se3Vec estimate = truth + small_xi(rng, 0.03);
      p.estimates.emplace(PairKey{i, j}, estimate);
      p.priors.emplace(PairKey{i, j}, estimate + small_xi(rng, 0.03));
    }
  }
  p.constraints = enumerate_constraints(Window{0, n});
  return p;
}

// Central differences of total_loss over every coordinate of every estimate.
inline GradientMap finite_difference_gradient(const WindowProblem& p, const LossWeights& weights, double h) {
  GradientMap out;
  for (const auto& [key, xi] : p.estimates) {
    Se3Vec g;
    for (int c = 0; c < 6; ++c) {
      XiMap plus = p.estimates, minus = p.estimates;
      plus[key](c) += h;
      minus[key](c) -= h;
      g(c) = (total_loss(plus, p.priors, p.constraints, weights).total -
              total_loss(minus, p.priors, p.constraints, weights).total) /
             (2.0 * h);
    }
    out.emplace(key, g);
  }
  return out;
}

// Largest componentwise |a - b| / max(|b|, floor), where floor is 1% of the
// largest |b| so that near-zero components do not dominate.
inline double max_relative_error(const GradientMap& analytic, const GradientMap& reference) {
  double scale = 0.0;
  for (const auto& [key, g] : reference) scale = std::max(scale, g.cwiseAbs().maxCoeff());
  const double floor = std::max(1e-2 * scale, 1e-12);
  double worst = 0.0;
  for (const auto& [key, g] : reference) {
    const Se3Vec a = analytic.at(key);
    for (int c = 0; c < 6; ++c) worst = std::max(worst, std::abs(a(c) - g(c)) / std::max(std::abs(g(c)), floor));
  }
  return worst;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ctc_odom_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace ctc::support
