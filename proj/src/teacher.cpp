#include "ctc_odom/teacher.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ctc_odom/errors.hpp"
#include "ctc_odom/io.hpp"

namespace ctc {

namespace {

Se3Vec gaussian6(std::mt19937_64& rng, double sigma_t, double sigma_r) {
  std::normal_distribution<double> unit(0.0, 1.0);
  Se3Vec out;
  for (int k = 0; k < 3; ++k) out(k) = sigma_t * unit(rng);
  for (int k = 3; k < 6; ++k) out(k) = sigma_r * unit(rng);
  return out;
}

Trajectory smooth_walk(int n, std::mt19937_64& rng, const TrajectoryOptions& opt) {
  const double dt = opt.frame_interval;
  // Stationary std of each velocity component before clamping.
  const double lin_scale = 0.5 * opt.max_speed;
  const double ang_scale = 0.5 * opt.max_angular_speed;
  const double innovation = std::sqrt(1.0 - opt.smoothing * opt.smoothing);

  Trajectory out;
  out.timestamps.reserve(n);
  out.poses.reserve(n);
  Se3Vec velocity = gaussian6(rng, lin_scale, ang_scale);
  SE3Pose pose;
  for (int k = 0; k < n; ++k) {
    out.timestamps.push_back(k * dt);
    out.poses.push_back(pose);
    velocity = opt.smoothing * velocity + innovation * gaussian6(rng, lin_scale, ang_scale);
    const double speed = velocity.head<3>().norm();
    if (speed > opt.max_speed) velocity.head<3>() *= opt.max_speed / speed;
    const double spin = velocity.tail<3>().norm();
    if (spin > opt.max_angular_speed) velocity.tail<3>() *= opt.max_angular_speed / spin;
    pose = compose(pose, exp_map(velocity * dt));
  }
  return out;
}

Trajectory planar_loop(int n, const TrajectoryOptions& opt) {
  const double w = opt.loop_width;
  const double d = opt.loop_depth;
  const double perimeter = 2.0 * (w + d);
  const double step = perimeter / (n - 1);
  const double dt = std::max(opt.frame_interval, step / (0.5 * opt.max_speed));

  Trajectory out;
  for (int k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) / (n - 1);
    const double a = std::fmod(s * perimeter, perimeter);
    double x = 0.0, z = 0.0;
    if (a < w) {
      x = a;
    } else if (a < w + d) {
      x = w;
      z = a - w;
    } else if (a < 2.0 * w + d) {
      x = w - (a - w - d);
      z = d;
    } else {
      z = d - (a - 2.0 * w - d);
    }
    // Gentle yaw sway about +y so the loop is not rotation free.
    const double yaw = 0.3 * std::sin(2.0 * std::numbers::pi * s);
    out.timestamps.push_back(k * dt);
    out.poses.push_back(compose(SE3Pose::translate(x, 0.0, z),
                                exp_map(make_se3(Eigen::Vector3d::Zero(), {0.0, yaw, 0.0}))));
  }
  return out;
}

}  // namespace

void Trajectory::validate() const {
  if (poses.size() < 2) throw InvalidArgument("trajectory needs at least 2 frames");
  if (timestamps.size() != poses.size()) throw InvalidArgument("trajectory timestamp/pose count mismatch");
  for (std::size_t k = 1; k < timestamps.size(); ++k) {
    if (!(timestamps[k] > timestamps[k - 1])) {
      throw InvalidArgument("trajectory timestamps must be strictly increasing");
    }
  }
}

TrajectoryProfile profile_from_string(std::string_view name) {
  if (name == "smooth_walk") return TrajectoryProfile::smooth_walk;
  if (name == "planar_loop") return TrajectoryProfile::planar_loop;
  if (name == "handheld_shake") return TrajectoryProfile::handheld_shake;
  throw InvalidArgument("unknown trajectory profile '" + std::string(name) + "'");
}

std::string_view to_string(TrajectoryProfile profile) {
  switch (profile) {
    case TrajectoryProfile::smooth_walk: return "smooth_walk";
    case TrajectoryProfile::planar_loop: return "planar_loop";
    case TrajectoryProfile::handheld_shake: return "handheld_shake";
  }
  return "smooth_walk";
}

Trajectory generate_trajectory(int n_frames, std::uint64_t seed, TrajectoryProfile profile,
                               const TrajectoryOptions& options) {
  if (n_frames < 2) throw InvalidArgument("generate_trajectory: need at least 2 frames");
  std::mt19937_64 rng(seed);
  switch (profile) {
    case TrajectoryProfile::smooth_walk:
      return smooth_walk(n_frames, rng, options);
    case TrajectoryProfile::planar_loop:
      return planar_loop(n_frames, options);
    case TrajectoryProfile::handheld_shake: {
      Trajectory walk = smooth_walk(n_frames, rng, options);
      std::normal_distribution<double> unit(0.0, 1.0);
      for (auto& pose : walk.poses) {
        const Eigen::Vector3d jitter(unit(rng), unit(rng), unit(rng));
        pose = compose(pose, exp_map(make_se3(Eigen::Vector3d::Zero(),
                                              options.shake_amplitude * jitter)));
      }
      return walk;
    }
  }
  throw InvalidArgument("generate_trajectory: bad profile");
}

Se3Vec relative_xi(const Trajectory& trajectory, int i, int j) {
  return log_map(compose(inverse(trajectory.poses.at(i)), trajectory.poses.at(j)));
}

void NoiseModel::validate() const {
  if (!(sigma_t >= 0.0) || !(sigma_r >= 0.0)) throw InvalidArgument("noise sigmas must be >= 0");
  if (!(outlier_rate >= 0.0 && outlier_rate <= 1.0)) {
    throw InvalidArgument("outlier_rate must lie in [0, 1]");
  }
  if (!(outlier_scale >= 1.0)) throw InvalidArgument("outlier_scale must be >= 1");
}

Perturbation perturb(const Se3Vec& xi, const NoiseModel& noise, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool outlier = coin(rng) < noise.outlier_rate;
  Se3Vec delta = gaussian6(rng, noise.sigma_t, noise.sigma_r);
  if (outlier) delta *= noise.outlier_scale;
  const Se3Vec chain[2] = {delta, xi};
  return {chain_log(chain), outlier};
}

std::vector<FramePairEstimate> TeacherSet::consecutive() const {
  std::vector<FramePairEstimate> out;
  for (const auto& [key, e] : pairs) {
    if (key.span() == 1) out.push_back(e);
  }
  return out;
}

std::vector<FramePairEstimate> TeacherSet::skips() const {
  std::vector<FramePairEstimate> out;
  for (const auto& [key, e] : pairs) {
    if (key.span() > 1) out.push_back(e);
  }
  return out;
}

int TeacherSet::frame_count() const {
  int n = 0;
  for (const auto& [key, e] : pairs) n = std::max(n, key.j + 1);
  return n;
}

std::vector<PairKey> TeacherSet::missing_pairs(int max_span) const {
  std::vector<PairKey> out;
  const int n = frame_count();
  for (int i = 0; i < n; ++i) {
    for (int s = 1; s <= max_span && i + s < n; ++s) {
      if (!pairs.contains({i, i + s})) out.push_back({i, i + s});
    }
  }
  return out;
}

TeacherSet sample_teacher(const Trajectory& gt, const NoiseModel& noise,
                          const TeacherOptions& options, std::uint64_t seed) {
  gt.validate();
  noise.validate();
  const int n = static_cast<int>(gt.size());
  if (options.skip_min < 1 || options.skip_max < options.skip_min) {
    throw InvalidArgument("sample_teacher: need 1 <= skip_min <= skip_max");
  }
  if (options.skip_max >= n) throw InvalidArgument("sample_teacher: skip_max must be < n_frames");

  std::mt19937_64 rng(seed);
  TeacherSet out;
  for (int i = 0; i + 1 < n; ++i) {
    for (int s = 1; s <= options.skip_max && i + s < n; ++s) {
      if (s > 1 && s < options.skip_min) continue;
      const int j = i + s;
      const Perturbation p = perturb(relative_xi(gt, i, j), noise, rng);
      out.pairs.emplace(PairKey{i, j}, FramePairEstimate{i, j, p.xi, Source::teacher});
      out.outlier_flags.emplace(PairKey{i, j}, p.outlier);
    }
  }
  return out;
}

EstimateMap ground_truth_pairs(const Trajectory& gt, const EstimateMap& like) {
  EstimateMap out;
  for (const auto& [key, e] : like) {
    if (key.j >= static_cast<int>(gt.size())) {
      throw ConfigError("pair " + to_string(key) + " lies outside the ground-truth trajectory");
    }
    out.emplace(key, FramePairEstimate{key.i, key.j, relative_xi(gt, key.i, key.j),
                                       Source::ground_truth});
  }
  return out;
}

EstimateFormat estimate_format_from_string(std::string_view name) {
  if (name == "pair_csv") return EstimateFormat::pair_csv;
  if (name == "tum_pair") return EstimateFormat::tum_pair;
  throw InvalidArgument("unknown estimate format '" + std::string(name) + "'");
}

TeacherSet load_estimates(const std::filesystem::path& path, EstimateFormat format) {
  std::istringstream in(read_text_file(path));
  TeacherSet out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto stripped = split_whitespace(line);
    if (stripped.empty() || stripped.front().front() == '#') continue;
    FramePairEstimate e;
    try {
      if (format == EstimateFormat::pair_csv) {
        const auto f = split(line, ',');
        if (f.size() != 9) throw InvalidArgument("expected 9 comma-separated fields");
        e.i = parse_index(f[0]);
        e.j = parse_index(f[1]);
        for (int k = 0; k < 6; ++k) e.xi(k) = parse_number(f[2 + k]);
        e.source = source_from_string(f[8]);
      } else {
        // i j tx ty tz qx qy qz qw, the relative transform in TUM order.
        if (stripped.size() != 9) throw InvalidArgument("expected 9 whitespace-separated fields");
        e.i = parse_index(stripped[0]);
        e.j = parse_index(stripped[1]);
        double v[7];
        for (int k = 0; k < 7; ++k) v[k] = parse_number(stripped[2 + k]);
        e.xi = log_map(from_quat_pose({v[0], v[1], v[2], v[3], v[4], v[5], v[6]}));
        e.source = Source::teacher;
      }
    } catch (const InvalidArgument& err) {
      throw ParseError(path.string(), line_no, err.what());
    } catch (const NearSingularity& err) {
      throw ParseError(path.string(), line_no, err.what());
    }
    if (e.j <= e.i) throw ParseError(path.string(), line_no, "pair index j must exceed i");
    if (!out.pairs.emplace(e.key(), e).second) {
      throw DuplicateKeyError(fmt::format("{}:{}: duplicate pair {}", path.string(), line_no,
                                          to_string(e.key())));
    }
  }
  if (out.pairs.empty()) throw EmptySetError(path.string() + ": no estimates");
  return out;
}

void save_estimates(const std::filesystem::path& path, const EstimateMap& pairs,
                    EstimateFormat format) {
  std::string text;
  if (format == EstimateFormat::pair_csv) {
    text = "# i,j,v1,v2,v3,w1,w2,w3,source\n";
    for (const auto& [key, e] : pairs) {
      text += fmt::format("{},{}", e.i, e.j);
      for (int k = 0; k < 6; ++k) text += "," + format_number(e.xi(k));
      text += fmt::format(",{}\n", to_string(e.source));
    }
  } else {
    text = "# i j tx ty tz qx qy qz qw\n";
    for (const auto& [key, e] : pairs) {
      const QuatPose q = to_quat_pose(exp_map(e.xi));
      text += fmt::format("{} {} {} {} {} {} {} {} {}\n", e.i, e.j, format_number(q.tx),
                          format_number(q.ty), format_number(q.tz), format_number(q.qx),
                          format_number(q.qy), format_number(q.qz), format_number(q.qw));
    }
  }
  write_text_file(path, text);
}

void save_outlier_flags(const std::filesystem::path& path, const std::map<PairKey, bool>& flags) {
  std::string text = "# i,j,outlier\n";
  for (const auto& [key, flag] : flags) text += fmt::format("{},{},{}\n", key.i, key.j, flag ? 1 : 0);
  write_text_file(path, text);
}

std::map<PairKey, bool> load_outlier_flags(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::map<PairKey, bool> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (split_whitespace(line).empty() || line.front() == '#') continue;
    const auto f = split(line, ',');
    try {
      if (f.size() != 3) throw InvalidArgument("expected i,j,outlier");
      const int flag = parse_index(f[2]);
      if (flag > 1) throw InvalidArgument("outlier flag must be 0 or 1");
      out[{parse_index(f[0]), parse_index(f[1])}] = flag == 1;
    } catch (const InvalidArgument& err) {
      throw ParseError(path.string(), line_no, err.what());
    }
  }
  return out;
}

}  // namespace ctc
