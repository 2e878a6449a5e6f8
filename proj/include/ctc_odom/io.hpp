#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ctc_odom/liegroup.hpp"
#include "ctc_odom/teacher.hpp"

namespace ctc {

/// Shortest-safe decimal with 17 significant digits (round-trips exactly).
std::string format_number(double value);

/// Strict decimal parse of the whole token. Throws InvalidArgument.
double parse_number(std::string_view token);
int parse_index(std::string_view token);

std::vector<std::string_view> split(std::string_view line, char delimiter);
std::vector<std::string_view> split_whitespace(std::string_view line);

/// Translation plus unit quaternion, qw last (TUM order).
struct QuatPose {
  double tx = 0, ty = 0, tz = 0;
  double qx = 0, qy = 0, qz = 0, qw = 1;
};

/// Quaternion with qw >= 0.
QuatPose to_quat_pose(const SE3Pose& pose);
/// Normalizes the quaternion; throws InvalidArgument if its norm is off
/// unity by more than 1e-6.
SE3Pose from_quat_pose(const QuatPose& q);

/// `timestamp tx ty tz qx qy qz qw`. The timestamp uses six decimals when
/// that representation is exact, 17 significant digits otherwise.
std::string tum_line(double timestamp, const SE3Pose& pose);

/// Throws IoError, ParseError (bad line, non-unit quaternion, non-monotone
/// timestamps) or EmptySetError.
Trajectory read_tum(const std::filesystem::path& path);
void write_tum(const std::filesystem::path& path, const Trajectory& trajectory);

/// Reads a whole file; throws IoError when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
/// Writes (truncating) a whole file; throws IoError on failure.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace ctc
