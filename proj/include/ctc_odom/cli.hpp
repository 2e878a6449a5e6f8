#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctc_odom/eval.hpp"
#include "ctc_odom/predictor.hpp"
#include "ctc_odom/teacher.hpp"

namespace ctc::cli {

/// Exit codes of the ctc-odom binary.
enum ExitCode : int { kSuccess = 0, kComputationError = 1, kUsageError = 2 };

struct ModelConfig {
  std::string kind = "free_table";  // free_table | tiny_denoiser
  int hidden = 64;
  double dropout = 0.7;      // training-time dropout fraction
  double init_noise = 0.01;  // tiny_denoiser weight perturbation
  std::string init = "teacher"; // free_table start: teacher | zero
};

struct PathConfig {
  std::optional<std::filesystem::path> ground_truth, teacher, flags, checkpoint, estimates, history;
};

/// Every knob of every command. Loaded from JSON; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path out_dir = ".";

  int n_frames = 500;
  TrajectoryProfile profile = TrajectoryProfile::smooth_walk;
  TrajectoryOptions trajectory;
  TeacherOptions teacher;
  NoiseModel noise;

  ModelConfig model;
  TrainSchedule schedule;

  Alignment alignment = Alignment::first_pose;

  int samples = 10;
  double gamma = 0.1;
  OutlierRule outliers;

  PathConfig paths;

  std::filesystem::path ground_truth_path() const;
  std::filesystem::path teacher_path() const;
  std::filesystem::path flags_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path estimates_path() const;
  std::filesystem::path history_path() const;

  /// Throws ConfigError / InvalidArgument.
  void validate() const;
};

/// Parses a config document. Throws ConfigError on unknown keys or bad types.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

// Checkpoints --------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

nlohmann::ordered_json checkpoint_json(const PoseModel& model);
/// Throws ConfigError on unknown kinds or format versions.
std::unique_ptr<PoseModel> model_from_checkpoint(const nlohmann::json& doc);

// Commands -----------------------------------------------------------------

/// Writes the ground-truth TUM file, the teacher pair file and its
/// contamination labels.
void cmd_generate(const RunConfig& config, std::ostream& log);
/// Two-phase training; writes checkpoint, history CSV and refined estimates.
void cmd_train(const RunConfig& config, std::ostream& log);
/// Metrics JSON, integrated TUM trajectory and XZ plot CSV.
MetricsReport cmd_eval(const RunConfig& config, std::ostream& log);
/// Dropout covariance report JSON.
std::vector<CovarianceReport> cmd_uncertainty(const RunConfig& config, std::ostream& log);

/// Full command line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ctc::cli
