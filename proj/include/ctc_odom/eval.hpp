#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ctc_odom/constraints.hpp"
#include "ctc_odom/teacher.hpp"

namespace ctc {

/// pose_{k+1} = pose_k * exp_map(xi_{k,k+1}). `relatives` must be the
/// contiguous consecutive pairs (k, k+1); a gap throws ConfigError.
/// Timestamps default to the frame indices.
Trajectory integrate(const SE3Pose& initial, std::span<const FramePairEstimate> relatives,
                     std::span<const double> timestamps = {});
/// Uses the span-1 entries of `estimates` starting at frame 0.
Trajectory integrate(const SE3Pose& initial, const XiMap& estimates,
                     std::span<const double> timestamps = {});

/// Consecutive relative estimates of a trajectory.
std::vector<FramePairEstimate> relatives_of(const Trajectory& trajectory);

enum class Alignment { none, first_pose, rigid };
Alignment alignment_from_string(std::string_view name);
std::string_view to_string(Alignment alignment);

struct AteResult {
  double mean = 0.0;
  double std = 0.0;  // population std over frames
  std::vector<double> per_frame;
};

/// Translation error per frame after alignment. first_pose maps est onto
/// gt through gt_0 * est_0^-1; rigid uses the closed-form least-squares
/// SE(3) fit of the positions. Throws InvalidArgument on length or
/// timestamp mismatch.
AteResult ate(const Trajectory& est, const Trajectory& gt, Alignment align);

/// Mean over pairs of ||xi_est - xi_gt|| (unsquared). Throws
/// InvalidArgument when the key sets differ.
double se3_error(const XiMap& est, const XiMap& gt);

struct MetricsReport {
  double ate_mean = 0.0;
  double ate_std = 0.0;
  double se3_err_mean = 0.0;
  std::size_t n_frames = 0;
  std::size_t n_pairs = 0;
  Alignment alignment = Alignment::first_pose;
};

struct Gaussian6 {
  Se3Vec mean;
  Mat6 cov;
};

/// Sample mean and unbiased covariance (divisor K - 1) of K x 6 samples,
/// symmetrised. Throws InvalidArgument if K < 2.
Gaussian6 recover_covariance(const Eigen::Ref<const Eigen::MatrixXd>& samples);
Gaussian6 recover_covariance(std::span<const Se3Vec> samples);

struct CovarianceReport {
  PairKey pair;
  Se3Vec mean = Se3Vec::Zero();
  Mat6 cov = Mat6::Zero();
  double score = 0.0;  // trace(cov)
  bool outlier = false;
};

CovarianceReport make_covariance_report(const PairKey& pair, const Gaussian6& fit);

struct OutlierRule {
  enum class Mode { absolute, quantile };
  Mode mode = Mode::quantile;
  // Absolute threshold, or quantile level in (0, 1).
  double value = 0.95;
  // Compare cov(d, d) instead of the trace when set.
  std::optional<int> dimension;

  void validate() const;
};

/// Threshold the rule resolves to for these reports.
double resolve_threshold(std::span<const CovarianceReport> reports, const OutlierRule& rule);

/// Sets `outlier` = statistic > threshold on every report.
std::vector<CovarianceReport> flag_outliers(std::vector<CovarianceReport> reports,
                                            const OutlierRule& rule);

struct DetectionScore {
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t false_negative = 0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Compares report flags against contamination labels (missing labels
/// count as inliers).
DetectionScore score_detection(std::span<const CovarianceReport> reports,
                               const std::map<PairKey, bool>& labels);

nlohmann::ordered_json to_json(const MetricsReport& report);
nlohmann::ordered_json to_json(const CovarianceReport& report);

}  // namespace ctc
