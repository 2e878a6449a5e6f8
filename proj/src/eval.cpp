#include "ctc_odom/eval.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>

#include "ctc_odom/errors.hpp"

namespace ctc {

namespace {

std::vector<double> index_timestamps(std::size_t n, int first) {
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = static_cast<double>(first) + static_cast<double>(k);
  return out;
}

Eigen::Matrix3Xd positions(const Trajectory& t) {
  Eigen::Matrix3Xd out(3, t.size());
  for (std::size_t k = 0; k < t.size(); ++k) out.col(k) = t.poses[k].translation();
  return out;
}

}  // namespace

Trajectory integrate(const SE3Pose& initial, std::span<const FramePairEstimate> relatives,
                     std::span<const double> timestamps) {
  const int first = relatives.empty() ? 0 : relatives.front().i;
  for (std::size_t k = 0; k < relatives.size(); ++k) {
    const auto& r = relatives[k];
    if (r.i != first + static_cast<int>(k) || r.j != r.i + 1) {
      throw ConfigError("integrate: expected consecutive pair (" + std::to_string(first + k) + "," +
                        std::to_string(first + k + 1) + "), got " + to_string(r.key()));
    }
  }
  const std::size_t n = relatives.size() + 1;
  if (!timestamps.empty() && timestamps.size() != n) {
    throw InvalidArgument("integrate: timestamp count must be relatives + 1");
  }

  Trajectory out;
  out.timestamps = timestamps.empty() ? index_timestamps(n, first)
                                      : std::vector<double>(timestamps.begin(), timestamps.end());
  out.poses.reserve(n);
  out.poses.push_back(initial);
  int since_projection = 0;
  for (const auto& r : relatives) {
    SE3Pose next = compose(out.poses.back(), exp_map(r.xi));
    if (++since_projection == kReorthonormalizeEvery) {
      next = SE3Pose::from_nearest_rotation(next.rotation(), next.translation());
      since_projection = 0;
    }
    out.poses.push_back(next);
  }
  return out;
}

Trajectory integrate(const SE3Pose& initial, const XiMap& estimates, std::span<const double> timestamps) {
  std::vector<FramePairEstimate> rel;
  for (const auto& [key, xi] : estimates) {
    if (key.span() == 1) rel.push_back({key.i, key.j, xi, Source::model});
  }
  if (!rel.empty() && rel.front().i != 0) {
    throw ConfigError("integrate: consecutive estimates must start at frame 0");
  }
  return integrate(initial, rel, timestamps);
}

std::vector<FramePairEstimate> relatives_of(const Trajectory& trajectory) {
  std::vector<FramePairEstimate> out;
  for (std::size_t k = 0; k + 1 < trajectory.size(); ++k) {
    const int i = static_cast<int>(k);
    out.push_back({i, i + 1, relative_xi(trajectory, i, i + 1), Source::ground_truth});
  }
  return out;
}

Alignment alignment_from_string(std::string_view name) {
  if (name == "none") return Alignment::none;
  if (name == "first_pose") return Alignment::first_pose;
  if (name == "rigid") return Alignment::rigid;
  throw InvalidArgument("unknown alignment '" + std::string(name) + "'");
}

std::string_view to_string(Alignment alignment) {
  switch (alignment) {
    case Alignment::none: return "none";
    case Alignment::first_pose: return "first_pose";
    case Alignment::rigid: return "rigid";
  }
  return "none";
}

AteResult ate(const Trajectory& est, const Trajectory& gt, Alignment align) {
  if (est.size() != gt.size()) throw InvalidArgument("ate: trajectories differ in length");
  if (est.size() == 0) throw InvalidArgument("ate: empty trajectories");
  if (est.timestamps.size() != est.size() || gt.timestamps.size() != gt.size()) {
    throw InvalidArgument("ate: timestamp count mismatch");
  }
  for (std::size_t k = 0; k < est.size(); ++k) {
    if (std::abs(est.timestamps[k] - gt.timestamps[k]) > 1e-6) {
      throw InvalidArgument("ate: timestamps do not match at frame " + std::to_string(k));
    }
  }

  Eigen::Matrix3Xd p = positions(est);
  const Eigen::Matrix3Xd q = positions(gt);
  switch (align) {
    case Alignment::none:
      break;
    case Alignment::first_pose: {
      const SE3Pose correction = compose(gt.poses.front(), inverse(est.poses.front()));
      p = (correction.rotation() * p).colwise() + correction.translation();
      break;
    }
    case Alignment::rigid: {
      const Eigen::Matrix4d fit = Eigen::umeyama(p, q, false);
      p = (fit.topLeftCorner<3, 3>() * p).colwise() + fit.topRightCorner<3, 1>();
      break;
    }
  }

  AteResult out;
  out.per_frame.resize(est.size());
  for (std::size_t k = 0; k < est.size(); ++k) out.per_frame[k] = (p.col(k) - q.col(k)).norm();
  const double n = static_cast<double>(est.size());
  for (double e : out.per_frame) out.mean += e;
  out.mean /= n;
  double var = 0.0;
  for (double e : out.per_frame) var += (e - out.mean) * (e - out.mean);
  out.std = std::sqrt(var / n);
  return out;
}

double se3_error(const XiMap& est, const XiMap& gt) {
  if (est.size() != gt.size()) throw InvalidArgument("se3_error: pair sets differ in size");
  if (est.empty()) throw InvalidArgument("se3_error: no pairs");
  double sum = 0.0;
  auto g = gt.begin();
  for (const auto& [key, xi] : est) {
    if (g->first != key) throw InvalidArgument("se3_error: pair " + to_string(key) + " missing from reference");
    sum += (xi - g->second).norm();
    ++g;
  }
  return sum / static_cast<double>(est.size());
}

Gaussian6 recover_covariance(const Eigen::Ref<const Eigen::MatrixXd>& samples) {
  if (samples.cols() != 6) throw InvalidArgument("recover_covariance: samples must have 6 columns");
  const Eigen::Index k = samples.rows();
  if (k < 2) throw InvalidArgument("recover_covariance: need at least 2 samples");
  Gaussian6 out;
  out.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - out.mean.transpose();
  const Mat6 cov = (centered.transpose() * centered) / static_cast<double>(k - 1);
  out.cov = 0.5 * (cov + cov.transpose());
  return out;
}

Gaussian6 recover_covariance(std::span<const Se3Vec> samples) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(samples.size()), 6);
  for (std::size_t r = 0; r < samples.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = samples[r].transpose();
  return recover_covariance(m);
}

CovarianceReport make_covariance_report(const PairKey& pair, const Gaussian6& fit) {
  return {pair, fit.mean, fit.cov, fit.cov.trace(), false};
}

void OutlierRule::validate() const {
  if (mode == Mode::absolute && !(value > 0.0)) throw InvalidArgument("outlier threshold must be > 0");
  if (mode == Mode::quantile && !(value > 0.0 && value < 1.0)) {
    throw InvalidArgument("outlier quantile must lie in (0, 1)");
  }
  if (dimension && (*dimension < 0 || *dimension > 5)) {
    throw InvalidArgument("outlier dimension must lie in [0, 5]");
  }
}

namespace {

double statistic(const CovarianceReport& r, const OutlierRule& rule) {
  return rule.dimension ? r.cov(*rule.dimension, *rule.dimension) : r.score;
}

}  // namespace

double resolve_threshold(std::span<const CovarianceReport> reports, const OutlierRule& rule) {
  rule.validate();
  if (rule.mode == OutlierRule::Mode::absolute || reports.empty()) return rule.value;
  std::vector<double> stats;
  stats.reserve(reports.size());
  for (const auto& r : reports) stats.push_back(statistic(r, rule));
  std::sort(stats.begin(), stats.end());
  // Linear interpolation between order statistics.
  const double pos = rule.value * static_cast<double>(stats.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, stats.size() - 1);
  return stats[lo] + (pos - static_cast<double>(lo)) * (stats[hi] - stats[lo]);
}

std::vector<CovarianceReport> flag_outliers(std::vector<CovarianceReport> reports, const OutlierRule& rule) {
  const double threshold = resolve_threshold(reports, rule);
  for (auto& r : reports) r.outlier = statistic(r, rule) > threshold;
  return reports;
}

DetectionScore score_detection(std::span<const CovarianceReport> reports,
                               const std::map<PairKey, bool>& labels) {
  DetectionScore s;
  for (const auto& r : reports) {
    const auto it = labels.find(r.pair);
    const bool truth = it != labels.end() && it->second;
    if (r.outlier && truth) ++s.true_positive;
    if (r.outlier && !truth) ++s.false_positive;
    if (!r.outlier && truth) ++s.false_negative;
  }
  const auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 1.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  s.precision = ratio(s.true_positive, s.true_positive + s.false_positive);
  s.recall = ratio(s.true_positive, s.true_positive + s.false_negative);
  return s;
}

nlohmann::ordered_json to_json(const MetricsReport& report) {
  return {
      {"alignment", std::string(to_string(report.alignment))},
      {"ate_mean", report.ate_mean},
      {"ate_std", report.ate_std},
      {"ate_std_kind", "per-frame population std"},
      {"se3_err_mean", report.se3_err_mean},
      {"n_frames", report.n_frames},
      {"n_pairs", report.n_pairs},
  };
}

nlohmann::ordered_json to_json(const CovarianceReport& report) {
  nlohmann::ordered_json cov = nlohmann::ordered_json::array();
  for (int r = 0; r < 6; ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int c = 0; c < 6; ++c) row.push_back(report.cov(r, c));
    cov.push_back(row);
  }
  nlohmann::ordered_json mean = nlohmann::ordered_json::array();
  for (int k = 0; k < 6; ++k) mean.push_back(report.mean(k));
  return {
      {"i", report.pair.i}, {"j", report.pair.j}, {"mean", mean},
      {"cov", cov},         {"score", report.score}, {"outlier", report.outlier},
  };
}

}  // namespace ctc
