#include "ctc_odom/io.hpp"

#include <fmt/format.h>

#include <Eigen/Geometry>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ctc_odom/errors.hpp"

namespace ctc {

std::string format_number(double value) {
  if (value == 0.0) return "0";  // also folds -0
  return fmt::format("{:.17g}", value);
}

double parse_number(std::string_view token) {
  double value = 0.0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || token.empty() || !std::isfinite(value)) {
    throw InvalidArgument("not a finite number: '" + std::string(token) + "'");
  }
  return value;
}

int parse_index(std::string_view token) {
  int value = 0;
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end || token.empty() || value < 0) {
    throw InvalidArgument("not a non-negative integer: '" + std::string(token) + "'");
  }
  return value;
}

std::vector<std::string_view> split(std::string_view line, char delimiter) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, begin);
    auto field = line.substr(begin, pos == std::string_view::npos ? line.npos : pos - begin);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    begin = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

QuatPose to_quat_pose(const SE3Pose& pose) {
  Eigen::Quaterniond q(pose.rotation());
  q.normalize();
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  const auto& t = pose.translation();
  return {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()};
}

SE3Pose from_quat_pose(const QuatPose& p) {
  Eigen::Quaterniond q(p.qw, p.qx, p.qy, p.qz);
  if (!q.coeffs().allFinite() || std::abs(q.norm() - 1.0) > 1e-6) {
    throw InvalidArgument("quaternion is not unit length");
  }
  q.normalize();
  return SE3Pose(q.toRotationMatrix(), Eigen::Vector3d(p.tx, p.ty, p.tz));
}

std::string tum_line(double timestamp, const SE3Pose& pose) {
  std::string stamp = fmt::format("{:.6f}", timestamp);
  if (parse_number(stamp) != timestamp) stamp = format_number(timestamp);
  const QuatPose q = to_quat_pose(pose);
  return fmt::format("{} {} {} {} {} {} {} {}", stamp, format_number(q.tx), format_number(q.ty),
                     format_number(q.tz), format_number(q.qx), format_number(q.qy),
                     format_number(q.qz), format_number(q.qw));
}

Trajectory read_tum(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  Trajectory out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_whitespace(line);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() != 8) {
      throw ParseError(path.string(), line_no, "expected 8 fields, got " + std::to_string(fields.size()));
    }
    try {
      double v[8];
      for (int k = 0; k < 8; ++k) v[k] = parse_number(fields[k]);
      if (!out.timestamps.empty() && v[0] <= out.timestamps.back()) {
        throw ParseError(path.string(), line_no, "timestamps must be strictly increasing");
      }
      out.poses.push_back(from_quat_pose({v[1], v[2], v[3], v[4], v[5], v[6], v[7]}));
      out.timestamps.push_back(v[0]);
    } catch (const InvalidArgument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  if (out.poses.empty()) throw EmptySetError(path.string() + ": no poses");
  return out;
}

void write_tum(const std::filesystem::path& path, const Trajectory& trajectory) {
  std::string text = "# timestamp tx ty tz qx qy qz qw\n";
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    text += tum_line(trajectory.timestamps[k], trajectory.poses[k]);
    text += '\n';
  }
  write_text_file(path, text);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace ctc
