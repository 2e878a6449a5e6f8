#include "ctc_odom/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <array>
#include <cstdlib>
#include <initializer_list>
#include <set>

#include "ctc_odom/errors.hpp"
#include "ctc_odom/io.hpp"

namespace ctc::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  const std::set<std::string> names(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!names.contains(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& into, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    into = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

std::filesystem::path or_default(const std::optional<std::filesystem::path>& p,
                                 const std::filesystem::path& dir, const char* name) {
  return p ? *p : dir / name;
}

int threads_from_env() {
  const char* env = std::getenv("CTC_ODOM_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    return std::max(1, parse_index(env));
  } catch (const InvalidArgument&) {
    throw ConfigError("CTC_ODOM_THREADS must be a positive integer");
  }
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string text = "epoch,phase,window_len,lr,loss_total,loss_ctc,loss_reg\n";
  for (const auto& r : history) {
    text += fmt::format("{},{},{},{},{},{},{}\n", r.epoch, to_string(r.phase), r.window_len,
                        format_number(r.lr), format_number(r.loss_total), format_number(r.loss_ctc),
                        format_number(r.loss_reg));
  }
  return text;
}

std::uint64_t pair_seed(std::uint64_t seed, const PairKey& key) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(key.i), static_cast<std::uint32_t>(key.j)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

}  // namespace

std::filesystem::path RunConfig::ground_truth_path() const {
  return or_default(paths.ground_truth, out_dir, "ground_truth.tum");
}
std::filesystem::path RunConfig::teacher_path() const { return or_default(paths.teacher, out_dir, "teacher.csv"); }
std::filesystem::path RunConfig::flags_path() const { return or_default(paths.flags, out_dir, "teacher_flags.csv"); }
std::filesystem::path RunConfig::checkpoint_path() const {
  return or_default(paths.checkpoint, out_dir, "checkpoint.json");
}
std::filesystem::path RunConfig::estimates_path() const {
  return or_default(paths.estimates, out_dir, "refined.csv");
}
std::filesystem::path RunConfig::history_path() const { return or_default(paths.history, out_dir, "history.csv"); }

void RunConfig::validate() const {
  if (n_frames < 2) throw InvalidArgument("n_frames must be >= 2");
  if (!(trajectory.frame_interval > 0.0) || !(trajectory.max_speed > 0.0) ||
      !(trajectory.max_angular_speed > 0.0) || !(trajectory.smoothing >= 0.0 && trajectory.smoothing < 1.0)) {
    throw InvalidArgument("trajectory options out of range");
  }
  noise.validate();
  schedule.validate();
  if (model.kind != "free_table" && model.kind != "tiny_denoiser") {
    throw ConfigError("model.kind must be free_table or tiny_denoiser");
  }
  if (model.init != "zero" && model.init != "teacher") throw ConfigError("model.init must be zero or teacher");
  if (model.hidden < 1) throw InvalidArgument("model.hidden must be >= 1");
  if (!(model.dropout >= 0.0 && model.dropout < 1.0)) throw InvalidArgument("model.dropout must lie in [0, 1)");
  outliers.validate();
}

RunConfig parse_config(const json& doc) {
  RunConfig c;
  reject_unknown(doc, {"seed", "out_dir", "generate", "noise", "model", "schedule", "eval", "uncertainty", "paths"},
                 "config");
  read(doc, "seed", c.seed, "config");
  if (doc.contains("out_dir")) {
    std::string dir;
    read(doc, "out_dir", dir, "config");
    c.out_dir = dir;
  }

  if (doc.contains("generate")) {
    const json& g = doc.at("generate");
    reject_unknown(g, {"n_frames", "profile", "skip_min", "skip_max", "trajectory"}, "generate");
    read(g, "n_frames", c.n_frames, "generate");
    if (g.contains("profile")) {
      std::string name;
      read(g, "profile", name, "generate");
      c.profile = profile_from_string(name);
    }
    read(g, "skip_min", c.teacher.skip_min, "generate");
    read(g, "skip_max", c.teacher.skip_max, "generate");
    if (g.contains("trajectory")) {
      const json& t = g.at("trajectory");
      const std::string w = "generate.trajectory";
      reject_unknown(t, {"frame_interval", "max_speed", "max_angular_speed", "smoothing", "loop_width",
                         "loop_depth", "shake_amplitude"}, w);
      read(t, "frame_interval", c.trajectory.frame_interval, w);
      read(t, "max_speed", c.trajectory.max_speed, w);
      read(t, "max_angular_speed", c.trajectory.max_angular_speed, w);
      read(t, "smoothing", c.trajectory.smoothing, w);
      read(t, "loop_width", c.trajectory.loop_width, w);
      read(t, "loop_depth", c.trajectory.loop_depth, w);
      read(t, "shake_amplitude", c.trajectory.shake_amplitude, w);
    }
  }

  if (doc.contains("noise")) {
    const json& n = doc.at("noise");
    reject_unknown(n, {"sigma_t", "sigma_r", "outlier_rate", "outlier_scale"}, "noise");
    read(n, "sigma_t", c.noise.sigma_t, "noise");
    read(n, "sigma_r", c.noise.sigma_r, "noise");
    read(n, "outlier_rate", c.noise.outlier_rate, "noise");
    read(n, "outlier_scale", c.noise.outlier_scale, "noise");
  }

  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(m, {"kind", "hidden", "dropout", "init_noise", "init"}, "model");
    read(m, "kind", c.model.kind, "model");
    read(m, "hidden", c.model.hidden, "model");
    read(m, "dropout", c.model.dropout, "model");
    read(m, "init_noise", c.model.init_noise, "model");
    read(m, "init", c.model.init, "model");
  }

  if (doc.contains("schedule")) {
    const json& s = doc.at("schedule");
    reject_unknown(s, {"pretrain_epochs", "seq_epochs", "window_start", "window_end", "lr", "lr_decay",
                       "decay_every", "alpha", "beta", "max_span", "stride", "pretrain_batch"},
                   "schedule");
    read(s, "pretrain_epochs", c.schedule.pretrain_epochs, "schedule");
    read(s, "seq_epochs", c.schedule.seq_epochs, "schedule");
    read(s, "window_start", c.schedule.window_start, "schedule");
    read(s, "window_end", c.schedule.window_end, "schedule");
    read(s, "lr", c.schedule.lr, "schedule");
    read(s, "lr_decay", c.schedule.lr_decay, "schedule");
    read(s, "decay_every", c.schedule.decay_every, "schedule");
    read(s, "alpha", c.schedule.alpha, "schedule");
    read(s, "beta", c.schedule.beta, "schedule");
    if (s.contains("max_span") && !s.at("max_span").is_null()) {
      int span = 0;
      read(s, "max_span", span, "schedule");
      c.schedule.max_span = span;
    }
    read(s, "stride", c.schedule.stride, "schedule");
    read(s, "pretrain_batch", c.schedule.pretrain_batch, "schedule");
  }

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    reject_unknown(e, {"alignment"}, "eval");
    if (e.contains("alignment")) {
      std::string name;
      read(e, "alignment", name, "eval");
      c.alignment = alignment_from_string(name);
    }
  }

  if (doc.contains("uncertainty")) {
    const json& u = doc.at("uncertainty");
    reject_unknown(u, {"samples", "gamma", "threshold_mode", "threshold", "dimension"}, "uncertainty");
    read(u, "samples", c.samples, "uncertainty");
    read(u, "gamma", c.gamma, "uncertainty");
    if (u.contains("threshold_mode")) {
      std::string mode;
      read(u, "threshold_mode", mode, "uncertainty");
      if (mode == "absolute") {
        c.outliers.mode = OutlierRule::Mode::absolute;
      } else if (mode == "quantile") {
        c.outliers.mode = OutlierRule::Mode::quantile;
      } else {
        throw ConfigError("uncertainty.threshold_mode must be absolute or quantile");
      }
    }
    read(u, "threshold", c.outliers.value, "uncertainty");
    if (u.contains("dimension") && !u.at("dimension").is_null()) {
      int d = 0;
      read(u, "dimension", d, "uncertainty");
      c.outliers.dimension = d;
    }
  }

  if (doc.contains("paths")) {
    const json& p = doc.at("paths");
    reject_unknown(p, {"ground_truth", "teacher", "flags", "checkpoint", "estimates", "history"}, "paths");
    const auto path_of = [&](const char* key, std::optional<std::filesystem::path>& into) {
      if (!p.contains(key)) return;
      std::string s;
      read(p, key, s, "paths");
      into = s;
    };
    path_of("ground_truth", c.paths.ground_truth);
    path_of("teacher", c.paths.teacher);
    path_of("flags", c.paths.flags);
    path_of("checkpoint", c.paths.checkpoint);
    path_of("estimates", c.paths.estimates);
    path_of("history", c.paths.history);
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_config(doc);
}

nlohmann::ordered_json checkpoint_json(const PoseModel& model) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kCheckpointVersion;
  doc["kind"] = std::string(model.kind());
  if (const auto* table = dynamic_cast<const FreePoseTable*>(&model)) {
    nlohmann::ordered_json keys = nlohmann::ordered_json::array();
    for (const auto& k : table->keys()) keys.push_back({k.i, k.j});
    doc["keys"] = keys;
  } else if (const auto* net = dynamic_cast<const TinyDenoiser*>(&model)) {
    doc["hidden"] = net->hidden();
    doc["gamma"] = net->gamma();
  }
  const Eigen::VectorXd& p = model.parameters();
  doc["params"] = std::vector<double>(p.data(), p.data() + p.size());
  return doc;
}

std::unique_ptr<PoseModel> model_from_checkpoint(const json& doc) {
  try {
    if (doc.at("format_version").get<int>() != kCheckpointVersion) {
      throw ConfigError("unsupported checkpoint format_version");
    }
    const auto kind = doc.at("kind").get<std::string>();
    const auto params = doc.at("params").get<std::vector<double>>();
    std::unique_ptr<PoseModel> model;
    if (kind == "free_table") {
      std::vector<PairKey> keys;
      for (const auto& k : doc.at("keys")) keys.push_back({k.at(0).get<int>(), k.at(1).get<int>()});
      model = std::make_unique<FreePoseTable>(keys);
    } else if (kind == "tiny_denoiser") {
      model = std::make_unique<TinyDenoiser>(doc.at("hidden").get<int>(), doc.at("gamma").get<double>(), 0, 0.0);
    } else {
      throw ConfigError("unknown checkpoint kind '" + kind + "'");
    }
    if (static_cast<Eigen::Index>(params.size()) != model->parameters().size()) {
      throw ConfigError("checkpoint parameter count does not match its model");
    }
    model->parameters() = Eigen::Map<const Eigen::VectorXd>(params.data(), model->parameters().size());
    return model;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void cmd_generate(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Trajectory gt = generate_trajectory(config.n_frames, config.seed, config.profile, config.trajectory);
  const TeacherSet teacher = sample_teacher(gt, config.noise, config.teacher, config.seed + 1);
  ensure_dir(config.out_dir);
  write_tum(config.ground_truth_path(), gt);
  save_estimates(config.teacher_path(), teacher.pairs);
  save_outlier_flags(config.flags_path(), teacher.outlier_flags);
  std::size_t contaminated = 0;
  for (const auto& [key, flag] : teacher.outlier_flags) contaminated += flag ? 1 : 0;
  log << fmt::format("generated {} frames ({}), {} pairs, {} contaminated\n", gt.size(),
                     to_string(config.profile), teacher.pairs.size(), contaminated);
}

void cmd_train(const RunConfig& config, std::ostream& log) {
  config.validate();
  const TeacherSet teacher = load_estimates(config.teacher_path());
  TrainSchedule schedule = config.schedule;
  schedule.threads = threads_from_env();

  std::unique_ptr<PoseModel> model;
  if (config.model.kind == "free_table") {
    std::vector<PairKey> keys;
    for (const auto& [key, e] : teacher.pairs) keys.push_back(key);
    model = config.model.init == "teacher" ? std::make_unique<FreePoseTable>(teacher.priors())
                                           : std::make_unique<FreePoseTable>(keys);
  } else {
    model = std::make_unique<TinyDenoiser>(config.model.hidden, config.model.dropout, config.seed,
                                           config.model.init_noise);
  }
  const TrainResult result = train_two_phase(*model, teacher, schedule, config.seed);

  ensure_dir(config.out_dir);
  write_text_file(config.checkpoint_path(), checkpoint_json(*model).dump(1) + "\n");
  write_text_file(config.history_path(), history_csv(result.history));
  EstimateMap refined;
  for (const auto& [key, xi] : result.estimates) refined.emplace(key, FramePairEstimate{key.i, key.j, xi, Source::model});
  save_estimates(config.estimates_path(), refined);

  const auto& last = result.history.empty() ? EpochRecord{} : result.history.back();
  log << fmt::format("trained {} for {} steps; final loss_total {} (ctc {}, reg {})\n", model->kind(),
                     result.steps, format_number(last.loss_total), format_number(last.loss_ctc),
                     format_number(last.loss_reg));
}

MetricsReport cmd_eval(const RunConfig& config, std::ostream& log) {
  config.validate();
  const Trajectory gt = read_tum(config.ground_truth_path());
  const TeacherSet est = load_estimates(config.estimates_path());
  const XiMap est_xi = est.priors();

  std::size_t consecutive = 0;
  for (const auto& [key, xi] : est_xi) consecutive += key.span() == 1 ? 1 : 0;
  if (consecutive + 1 != gt.size()) {
    throw InvalidArgument(fmt::format("estimates cover {} frames but ground truth has {} timestamps",
                                      consecutive + 1, gt.size()));
  }
  const Trajectory traj = integrate(gt.poses.front(), est_xi, gt.timestamps);
  const AteResult a = ate(traj, gt, config.alignment);
  const EstimateMap gt_pairs = ground_truth_pairs(gt, est.pairs);

  MetricsReport report;
  report.ate_mean = a.mean;
  report.ate_std = a.std;
  report.se3_err_mean = se3_error(est_xi, xi_map(gt_pairs));
  report.n_frames = gt.size();
  report.n_pairs = est_xi.size();
  report.alignment = config.alignment;

  ensure_dir(config.out_dir);
  write_text_file(config.out_dir / "metrics.json", to_json(report).dump(1) + "\n");
  write_tum(config.out_dir / "estimate.tum", traj);
  std::string xz = "frame,gt_x,gt_z,est_x,est_z\n";
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const auto& g = gt.poses[k].translation();
    const auto& e = traj.poses[k].translation();
    xz += fmt::format("{},{},{},{},{}\n", k, format_number(g.x()), format_number(g.z()), format_number(e.x()),
                      format_number(e.z()));
  }
  write_text_file(config.out_dir / "xz.csv", xz);
  log << fmt::format("ATE ({}) {} +/- {} m, se3 error {} over {} pairs\n", to_string(config.alignment),
                     format_number(report.ate_mean), format_number(report.ate_std),
                     format_number(report.se3_err_mean), report.n_pairs);
  return report;
}

std::vector<CovarianceReport> cmd_uncertainty(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.samples < 2) throw InvalidArgument("uncertainty.samples must be >= 2");
  if (!(config.gamma > 0.0 && config.gamma < 1.0)) throw InvalidArgument("uncertainty.gamma must lie in (0, 1)");
  const json doc = [&] {
    try {
      return json::parse(read_text_file(config.checkpoint_path()));
    } catch (const json::parse_error& e) {
      throw ConfigError("checkpoint is not valid JSON: " + std::string(e.what()));
    }
  }();
  const auto model = model_from_checkpoint(doc);
  const auto* net = dynamic_cast<const TinyDenoiser*>(model.get());
  if (net == nullptr) {
    throw ConfigError("uncertainty needs a tiny_denoiser checkpoint; a free_table has no dropout units");
  }
  const TeacherSet teacher = load_estimates(config.teacher_path());

  std::vector<CovarianceReport> reports;
  for (const auto& [key, e] : teacher.pairs) {
    const auto samples = sample_predictions(*net, e.xi, config.samples, config.gamma, pair_seed(config.seed, key));
    reports.push_back(make_covariance_report(key, recover_covariance(samples)));
  }
  const double threshold = resolve_threshold(reports, config.outliers);
  reports = flag_outliers(std::move(reports), config.outliers);

  nlohmann::ordered_json out;
  out["samples"] = config.samples;
  out["gamma"] = config.gamma;
  out["threshold_mode"] = config.outliers.mode == OutlierRule::Mode::absolute ? "absolute" : "quantile";
  out["threshold_parameter"] = config.outliers.value;
  out["threshold"] = threshold;
  out["statistic"] = config.outliers.dimension ? fmt::format("cov[{0}][{0}]", *config.outliers.dimension)
                                               : std::string("trace");
  std::size_t flagged = 0;
  for (const auto& r : reports) flagged += r.outlier ? 1 : 0;
  out["flagged"] = flagged;
  if (std::filesystem::exists(config.flags_path())) {
    const DetectionScore s = score_detection(reports, load_outlier_flags(config.flags_path()));
    out["detection"] = {{"precision", s.precision}, {"recall", s.recall}, {"true_positive", s.true_positive},
                        {"false_positive", s.false_positive}, {"false_negative", s.false_negative}};
    log << fmt::format("precision {} recall {}\n", format_number(s.precision), format_number(s.recall));
  }
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& r : reports) pairs.push_back(to_json(r));
  out["pairs"] = pairs;

  ensure_dir(config.out_dir);
  write_text_file(config.out_dir / "covariance.json", out.dump(1) + "\n");
  log << fmt::format("{} pairs, {} flagged (threshold {})\n", reports.size(), flagged, format_number(threshold));
  return reports;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ctc-odom: composite-transformation-constraint refinement of pairwise odometry.\n"
               "Trajectories use TUM lines 'timestamp tx ty tz qx qy qz qw' (quaternion with qw last,\n"
               "normalized on read). Pair files use 'i,j,v1,v2,v3,w1,w2,w3,source'."};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  const auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
    return sub;
  };
  CLI::App* gen = add("generate", "synthesize a ground-truth trajectory and noisy teacher pairs");
  CLI::App* train = add("train", "pretrain then sequentially train a model on the teacher pairs");
  CLI::App* eval = add("eval", "integrate estimates and report ATE and se(3) error");
  CLI::App* unc = add("uncertainty", "dropout covariance recovery and outlier flagging");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kSuccess : kUsageError;
  }

  try {
    RunConfig config = load_config(config_path);
    if (seed) config.seed = *seed;
    if (out_dir) config.out_dir = *out_dir;
    if (gen->parsed()) cmd_generate(config, out);
    if (train->parsed()) cmd_train(config, out);
    if (eval->parsed()) cmd_eval(config, out);
    if (unc->parsed()) cmd_uncertainty(config, out);
    return kSuccess;
  } catch (const NearSingularity& e) {
    err << "error: " << e.what() << "\n";
    return kComputationError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kComputationError;
  }
}

}  // namespace ctc::cli
