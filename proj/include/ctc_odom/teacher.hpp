#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string_view>
#include <vector>

#include "ctc_odom/constraints.hpp"
#include "ctc_odom/liegroup.hpp"

namespace ctc {

/// Timestamped absolute poses (world-from-camera). Timestamps strictly
/// increase and there are at least two frames.
struct Trajectory {
  std::vector<double> timestamps;
  std::vector<SE3Pose> poses;

  std::size_t size() const { return poses.size(); }
  /// Throws InvalidArgument if the invariants above do not hold.
  void validate() const;
};

using TrajectoryGT = Trajectory;

enum class TrajectoryProfile { smooth_walk, planar_loop, handheld_shake };

TrajectoryProfile profile_from_string(std::string_view name);
std::string_view to_string(TrajectoryProfile profile);

struct TrajectoryOptions {
  double frame_interval = 1.0 / 30.0;  // seconds
  double max_speed = 0.4;              // m/s
  double max_angular_speed = 0.4;      // rad/s
  // Velocity low-pass factor per frame; closer to 1 is smoother.
  double smoothing = 0.95;
  double loop_width = 2.0;   // planar_loop rectangle, x extent (m)
  double loop_depth = 1.0;   // planar_loop rectangle, z extent (m)
  double shake_amplitude = 0.004;  // handheld_shake jitter std (rad)
};

/// Deterministic for fixed (n_frames, seed, profile, options).
Trajectory generate_trajectory(int n_frames, std::uint64_t seed, TrajectoryProfile profile,
                               const TrajectoryOptions& options = {});

/// Relative transform log(inverse(pose_i) * pose_j).
Se3Vec relative_xi(const Trajectory& trajectory, int i, int j);

struct NoiseModel {
  double sigma_t = 0.01;       // m
  double sigma_r = 0.0087;     // rad
  double outlier_rate = 0.0;   // probability in [0, 1]
  double outlier_scale = 10.0; // >= 1, multiplies both sigmas for outliers

  void validate() const;
};

struct Perturbation {
  Se3Vec xi;
  bool outlier = false;
};

/// Left-multiplicative perturbation chain_log([delta, xi]) with
/// delta ~ N(0, diag(sigma_t^2 I, sigma_r^2 I)), inflated by outlier_scale
/// with probability outlier_rate.
Perturbation perturb(const Se3Vec& xi, const NoiseModel& noise, std::mt19937_64& rng);

/// Pairwise estimates from a teacher (simulated or loaded from disk).
struct TeacherSet {
  EstimateMap pairs;
  // Contamination labels; empty when the set was loaded from a file.
  std::map<PairKey, bool> outlier_flags;

  std::vector<FramePairEstimate> consecutive() const;
  std::vector<FramePairEstimate> skips() const;
  XiMap priors() const { return xi_map(pairs); }
  /// Frames covered, i.e. largest j + 1 (0 when empty).
  int frame_count() const;
  /// Every pair (k, k+s), 1 <= s <= max_span, inside [0, frame_count) that is absent.
  std::vector<PairKey> missing_pairs(int max_span) const;
};

struct TeacherOptions {
  int skip_min = 1;
  int skip_max = 5;
};

/// Consecutive pairs plus every (k, k+s) for s in [max(2, skip_min), skip_max].
TeacherSet sample_teacher(const Trajectory& gt, const NoiseModel& noise,
                          const TeacherOptions& options, std::uint64_t seed);

/// Noise-free relative estimates for every key of `like`, tagged ground_truth.
EstimateMap ground_truth_pairs(const Trajectory& gt, const EstimateMap& like);

enum class EstimateFormat { pair_csv, tum_pair };

EstimateFormat estimate_format_from_string(std::string_view name);

/// Throws ParseError (with line number), DuplicateKeyError, EmptySetError or IoError.
TeacherSet load_estimates(const std::filesystem::path& path,
                          EstimateFormat format = EstimateFormat::pair_csv);
void save_estimates(const std::filesystem::path& path, const EstimateMap& pairs,
                    EstimateFormat format = EstimateFormat::pair_csv);

void save_outlier_flags(const std::filesystem::path& path, const std::map<PairKey, bool>& flags);
std::map<PairKey, bool> load_outlier_flags(const std::filesystem::path& path);

}  // namespace ctc
