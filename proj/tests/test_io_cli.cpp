#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <numbers>
#include <random>
#include <sstream>

#include "ctc_odom/cli.hpp"
#include "ctc_odom/errors.hpp"
#include "ctc_odom/io.hpp"
#include "support.hpp"

using namespace ctc;
using ctc::support::scratch_dir;
using ctc::support::slurp;
using ctc::support::spit;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ctc-odom");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path write_config(const std::filesystem::path& dir, const json& doc) {
  const auto path = dir / "config.json";
  spit(path, doc.dump(1));
  return path;
}

json small_config(const std::filesystem::path& dir) {
  return {
      {"seed", 7},
      {"out_dir", dir.string()},
      {"generate", {{"n_frames", 40}, {"skip_max", 4}}},
      {"noise", {{"sigma_t", 0.01}, {"sigma_r", 0.0087}, {"outlier_rate", 0.1}}},
      {"model", {{"kind", "tiny_denoiser"}, {"hidden", 16}}},
      {"schedule",
       {{"pretrain_epochs", 2}, {"seq_epochs", 3}, {"window_end", 6}, {"max_span", 4}, {"lr", 1e-3}}},
  };
}

std::string fmt_pair(int i, int j, const std::string& yaw) {
  return std::to_string(i) + "," + std::to_string(j) + ",0,0,0,0,0," + yaw + ",teacher\n";
}

}  // namespace

TEST(FormatNumber, RoundTripsAndCanonicalZero) {
  EXPECT_EQ(format_number(0.0), "0");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1e3);
  for (int n = 0; n < 1000; ++n) {
    const double x = normal(rng) * std::pow(10.0, n % 20 - 10);
    EXPECT_EQ(parse_number(format_number(x)), x);
  }
}

TEST(ParseNumber, Strict) {
  EXPECT_EQ(parse_number("1.5e-3"), 1.5e-3);
  EXPECT_THROW(parse_number(" 2 "), InvalidArgument);
  EXPECT_THROW(parse_number("1.5x"), InvalidArgument);
  EXPECT_THROW(parse_number(""), InvalidArgument);
  EXPECT_THROW(parse_number("nan"), InvalidArgument);
  EXPECT_EQ(parse_index("42"), 42);
  EXPECT_THROW(parse_index("-1"), InvalidArgument);
  EXPECT_THROW(parse_index("1.0"), InvalidArgument);
}

TEST(Split, Fields) {
  EXPECT_EQ(split("a,b,,c", ',').size(), 4u);
  EXPECT_EQ(split_whitespace("  a \t b  c ").size(), 3u);
  EXPECT_TRUE(split_whitespace("   ").empty());
}

TEST(Quaternion, IdentityLine) {
  EXPECT_EQ(tum_line(0.0, SE3Pose::identity()), "0.000000 0 0 0 0 0 0 1");
}

TEST(Quaternion, QuarterTurnAboutZ) {
  const QuatPose q = to_quat_pose(SE3Pose(support::rot_z(std::numbers::pi / 2), Eigen::Vector3d::Zero()));
  EXPECT_NEAR(q.qx, 0.0, 1e-15);
  EXPECT_NEAR(q.qy, 0.0, 1e-15);
  EXPECT_NEAR(q.qz, std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_NEAR(q.qw, std::sqrt(2.0) / 2.0, 1e-15);
}

TEST(Quaternion, RoundTrip) {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const SE3Pose p = exp_map(support::random_xi(rng, std::numbers::pi, 10.0));
    const QuatPose q = to_quat_pose(p);
    EXPECT_GE(q.qw, 0.0);
    worst = std::max(worst, (from_quat_pose(q).matrix() - p.matrix()).cwiseAbs().maxCoeff());
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Quaternion, NormCheck) {
  QuatPose q;
  q.qw = 1.0 + 1e-8;
  EXPECT_NO_THROW(from_quat_pose(q));
  q.qw = 1.0 + 1e-4;
  EXPECT_THROW(from_quat_pose(q), InvalidArgument);
}

TEST(Tum, WriteReadRoundTrip) {
  const auto dir = scratch_dir("tum");
  Trajectory t = generate_trajectory(200, 3, TrajectoryProfile::handheld_shake);
  write_tum(dir / "t.tum", t);
  const Trajectory back = read_tum(dir / "t.tum");
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t k = 0; k < t.size(); ++k) {
    EXPECT_EQ(back.timestamps[k], t.timestamps[k]);
    EXPECT_LT((back.poses[k].matrix() - t.poses[k].matrix()).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Tum, ParseErrors) {
  const auto dir = scratch_dir("tum_bad");
  const auto line_of = [&](const std::string& text) -> std::size_t {
    spit(dir / "bad.tum", text);
    try {
      read_tum(dir / "bad.tum");
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("# header\n0 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n"), 3u);
  EXPECT_EQ(line_of("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0 1.5\n"), 2u);
  EXPECT_EQ(line_of("0 0 0 0 0 0 1\n"), 1u);
  spit(dir / "empty.tum", "# nothing\n");
  EXPECT_THROW(read_tum(dir / "empty.tum"), EmptySetError);
  EXPECT_THROW(read_tum(dir / "missing.tum"), IoError);
}

TEST(Config, DefaultsAndOverrides) {
  const cli::RunConfig d = cli::parse_config(json::object());
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.samples, 10);
  EXPECT_EQ(d.gamma, 0.1);
  EXPECT_EQ(d.model.dropout, 0.7);
  EXPECT_EQ(d.schedule.lr, 1e-4);
  EXPECT_EQ(d.schedule.alpha, 1.0);
  EXPECT_EQ(d.schedule.beta, 3.0);
  EXPECT_EQ(d.alignment, Alignment::first_pose);

  const cli::RunConfig c = cli::parse_config(json::parse(R"({
    "seed": 3, "schedule": {"max_span": 4, "lr": 0.01},
    "uncertainty": {"threshold_mode": "absolute", "threshold": 0.2, "dimension": 1},
    "eval": {"alignment": "rigid"}, "paths": {"teacher": "x.csv"}})"));
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.schedule.max_span, 4);
  EXPECT_EQ(c.outliers.mode, OutlierRule::Mode::absolute);
  EXPECT_EQ(c.outliers.dimension, 1);
  EXPECT_EQ(c.alignment, Alignment::rigid);
  EXPECT_EQ(c.teacher_path(), "x.csv");
  EXPECT_EQ(c.history_path(), std::filesystem::path(".") / "history.csv");
}

TEST(Config, RejectsUnknownKeysAndBadTypes) {
  EXPECT_THROW(cli::parse_config(json::parse(R"({"sed": 1})")), ConfigError);
  EXPECT_THROW(cli::parse_config(json::parse(R"({"noise": {"sigma": 1}})")), ConfigError);
  EXPECT_THROW(cli::parse_config(json::parse(R"({"schedule": {"lr": "fast"}})")), ConfigError);
  EXPECT_THROW(cli::parse_config(json::parse(R"({"model": 3})")), ConfigError);
  EXPECT_THROW(cli::parse_config(json::parse(R"({"uncertainty": {"threshold_mode": "top"}})")), ConfigError);
  EXPECT_THROW(cli::parse_config(json::parse(R"({"generate": {"profile": "spiral"}})")), InvalidArgument);
}

TEST(Checkpoint, RoundTrip) {
  TinyDenoiser net(8, 0.7, 3, 0.1);
  const auto back = cli::model_from_checkpoint(json::parse(cli::checkpoint_json(net).dump()));
  EXPECT_EQ(back->kind(), "tiny_denoiser");
  EXPECT_EQ(back->parameters(), net.parameters());
  EXPECT_EQ(dynamic_cast<const TinyDenoiser&>(*back).gamma(), 0.7);

  FreePoseTable table(XiMap{{{0, 1}, Se3Vec::Constant(0.25)}, {{0, 2}, Se3Vec::Constant(-1.0 / 3.0)}});
  const auto t = cli::model_from_checkpoint(json::parse(cli::checkpoint_json(table).dump()));
  EXPECT_EQ(dynamic_cast<const FreePoseTable&>(*t).values(), table.values());

  json bad = cli::checkpoint_json(net);
  bad["format_version"] = 2;
  EXPECT_THROW(cli::model_from_checkpoint(bad), ConfigError);
  bad = cli::checkpoint_json(net);
  bad["params"].erase(0);
  EXPECT_THROW(cli::model_from_checkpoint(bad), ConfigError);
  EXPECT_THROW(cli::model_from_checkpoint(json::object()), ConfigError);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run_cli({}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"generate"}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"frobnicate", "--config", "x"}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"generate", "--config", "/nonexistent/config.json"}).code, cli::kUsageError);
  EXPECT_EQ(run_cli({"--help"}).code, cli::kSuccess);
}

TEST(Cli, TooFewFrames) {
  const auto dir = scratch_dir("cli_n1");
  json cfg = small_config(dir);
  cfg["generate"]["n_frames"] = 1;
  const Outcome r = run_cli({"generate", "--config", write_config(dir, cfg).string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("n_frames"), std::string::npos);
}

TEST(Cli, GenerateIsDeterministic) {
  const auto dir = scratch_dir("cli_gen");
  json cfg = small_config(dir);
  cfg["generate"]["n_frames"] = 100;
  cfg["seed"] = 42;
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string(), "--out", (dir / "a").string()}).code, 0);
  const Outcome second = run_cli({"generate", "--config", path.string(), "--out", (dir / "b").string()});
  ASSERT_EQ(second.code, 0);
  EXPECT_NE(second.out.find("100 frames"), std::string::npos);
  for (const char* f : {"ground_truth.tum", "teacher.csv", "teacher_flags.csv"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    EXPECT_FALSE(slurp(dir / "a" / f).empty());
  }
  ASSERT_EQ(run_cli({"generate", "--config", path.string(), "--out", (dir / "c").string(), "--seed", "43"}).code, 0);
  EXPECT_NE(slurp(dir / "a" / "teacher.csv"), slurp(dir / "c" / "teacher.csv"));
}

TEST(Cli, PlanarLoopExportClosesInXz) {
  const auto dir = scratch_dir("cli_loop");
  json cfg = small_config(dir);
  cfg["generate"]["profile"] = "planar_loop";
  cfg["noise"] = {{"sigma_t", 0.0}, {"sigma_r", 0.0}};
  cfg["paths"] = {{"estimates", (dir / "teacher.csv").string()}};
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"eval", "--config", path.string()}).code, 0);
  std::istringstream xz(slurp(dir / "xz.csv"));
  std::string line;
  std::getline(xz, line);
  EXPECT_EQ(line, "frame,gt_x,gt_z,est_x,est_z");
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::string> lines;
  while (std::getline(xz, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 40u);
  const auto first = split(lines.front(), ','), last = split(lines.back(), ',');
  for (int c = 1; c <= 4; ++c) EXPECT_NEAR(parse_number(first[c]), parse_number(last[c]), 1e-9);
}

TEST(Cli, EvalOfGroundTruthIsZero) {
  const auto dir = scratch_dir("cli_eval_gt");
  json cfg = small_config(dir);
  cfg["noise"] = {{"sigma_t", 0.0}, {"sigma_r", 0.0}};
  cfg["paths"] = {{"estimates", (dir / "teacher.csv").string()}};
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"eval", "--config", path.string()}).code, 0);
  const json m = json::parse(slurp(dir / "metrics.json"));
  EXPECT_LT(m["ate_mean"].get<double>(), 1e-9);
  EXPECT_LT(m["se3_err_mean"].get<double>(), 1e-12);
  EXPECT_EQ(m["alignment"], "first_pose");
  EXPECT_EQ(m["n_frames"], 40);
  const Trajectory exported = read_tum(dir / "estimate.tum");
  EXPECT_EQ(exported.size(), 40u);
}

TEST(Cli, EvalErrors) {
  const auto dir = scratch_dir("cli_eval_err");
  json cfg = small_config(dir);
  const auto path = write_config(dir, cfg);
  EXPECT_EQ(run_cli({"eval", "--config", path.string()}).code, cli::kUsageError);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  // Ground truth from a shorter run: frame counts disagree.
  json other = cfg;
  other["generate"]["n_frames"] = 30;
  other["out_dir"] = (dir / "short").string();
  ASSERT_EQ(run_cli({"generate", "--config", write_config(dir, other).string()}).code, 0);
  cfg["paths"] = {{"estimates", (dir / "teacher.csv").string()},
                  {"ground_truth", (dir / "short" / "ground_truth.tum").string()}};
  EXPECT_EQ(run_cli({"eval", "--config", write_config(dir, cfg).string()}).code, cli::kUsageError);
}

TEST(Cli, ZeroNoiseTraining) {
  const auto dir = scratch_dir("cli_zero");
  json cfg = small_config(dir);
  cfg["noise"] = {{"sigma_t", 0.0}, {"sigma_r", 0.0}};
  cfg["model"] = {{"kind", "free_table"}};
  cfg["schedule"]["lr"] = 1e-7;
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", path.string()}).code, 0);
  std::istringstream hist(slurp(dir / "history.csv"));
  std::string line, last;
  std::getline(hist, line);
  EXPECT_EQ(line, "epoch,phase,window_len,lr,loss_total,loss_ctc,loss_reg");
  int rows = 0;
  while (std::getline(hist, line)) {
    last = line;
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  const auto fields = split(last, ',');
  ASSERT_EQ(fields.size(), 7u);
  EXPECT_EQ(fields[1], "sequential");
  EXPECT_LT(parse_number(fields[5]), 1e-8);
}

TEST(Cli, AlphaZeroKeepsTeacher) {
  const auto dir = scratch_dir("cli_alpha0");
  json cfg = small_config(dir);
  cfg["model"] = {{"kind", "free_table"}, {"init", "teacher"}};
  cfg["schedule"]["alpha"] = 0.0;
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", path.string()}).code, 0);
  const TeacherSet teacher = load_estimates(dir / "teacher.csv");
  const TeacherSet refined = load_estimates(dir / "refined.csv");
  ASSERT_EQ(refined.pairs.size(), teacher.pairs.size());
  for (const auto& [key, e] : teacher.pairs) {
    EXPECT_LT((refined.pairs.at(key).xi - e.xi).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_EQ(refined.pairs.at(key).source, Source::model);
  }
}

TEST(Cli, CoverageGapIsConfigError) {
  const auto dir = scratch_dir("cli_gap");
  json cfg = small_config(dir);
  cfg["schedule"].erase("max_span");
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  const Outcome r = run_cli({"train", "--config", path.string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("missing pairs"), std::string::npos);
}

TEST(Cli, Uncertainty) {
  const auto dir = scratch_dir("cli_unc");
  json cfg = small_config(dir);
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"uncertainty", "--config", path.string()}).code, 0);
  const json report = json::parse(slurp(dir / "covariance.json"));
  EXPECT_EQ(report["samples"], 10);
  EXPECT_EQ(report["gamma"], 0.1);
  EXPECT_TRUE(report.contains("detection"));
  ASSERT_FALSE(report["pairs"].empty());
  const json& first = report["pairs"][0];
  EXPECT_EQ(first["cov"].size(), 6u);
  EXPECT_EQ(first["mean"].size(), 6u);

  cfg["uncertainty"] = {{"gamma", 1e-9}, {"threshold_mode", "absolute"}, {"threshold", 1e-12}};
  ASSERT_EQ(run_cli({"uncertainty", "--config", write_config(dir, cfg).string()}).code, 0);
  const json quiet = json::parse(slurp(dir / "covariance.json"));
  EXPECT_EQ(quiet["flagged"], 0);
  for (const auto& p : quiet["pairs"]) EXPECT_LT(p["score"].get<double>(), 1e-12);

  cfg["uncertainty"] = {{"samples", 1}};
  EXPECT_EQ(run_cli({"uncertainty", "--config", write_config(dir, cfg).string()}).code, cli::kUsageError);
}

TEST(Cli, UncertaintyRefusesPoseTable) {
  const auto dir = scratch_dir("cli_unc_table");
  json cfg = small_config(dir);
  cfg["model"] = {{"kind", "free_table"}};
  const auto path = write_config(dir, cfg);
  ASSERT_EQ(run_cli({"generate", "--config", path.string()}).code, 0);
  ASSERT_EQ(run_cli({"train", "--config", path.string()}).code, 0);
  const Outcome r = run_cli({"uncertainty", "--config", path.string()});
  EXPECT_EQ(r.code, cli::kUsageError);
  EXPECT_NE(r.err.find("tiny_denoiser"), std::string::npos);
}

TEST(Cli, CutLocusIsComputationError) {
  // Two quarter turns compose to a half turn, where the log map is refused.
  const auto dir = scratch_dir("cli_pi");
  const std::string q = format_number(std::numbers::pi / 2);
  std::string pairs;
  for (int i = 0; i < 4; ++i) {
    for (int j = i + 1; j < 4; ++j) pairs += fmt_pair(i, j, j - i == 1 ? q : "0");
  }
  spit(dir / "teacher.csv", pairs);
  json cfg = {{"out_dir", dir.string()},
              {"model", {{"kind", "free_table"}}},
              {"schedule", {{"pretrain_epochs", 0}, {"seq_epochs", 1}, {"window_start", 3}, {"window_end", 3}}}};
  const Outcome r = run_cli({"train", "--config", write_config(dir, cfg).string()});
  EXPECT_EQ(r.code, cli::kComputationError) << r.err;
}

TEST(Cli, BinaryExitCodes) {
  const auto dir = scratch_dir("cli_binary");
  const std::string bin = CTC_ODOM_BINARY;
  const auto status = [](const std::string& cmd) {
    const int raw = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  EXPECT_EQ(status(bin + " --help"), 0);
  EXPECT_EQ(status(bin), 2);
  EXPECT_EQ(status(bin + " eval --config " + (dir / "missing.json").string()), 2);
  const auto path = write_config(dir, small_config(dir));
  EXPECT_EQ(status(bin + " generate --config " + path.string()), 0);
  EXPECT_EQ(status("CTC_ODOM_THREADS=2 " + bin + " train --config " + path.string()), 0);
  EXPECT_EQ(status("CTC_ODOM_THREADS=many " + bin + " train --config " + path.string()), 2);
}
