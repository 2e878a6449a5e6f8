#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "ctc_odom/constraints.hpp"
#include "ctc_odom/teacher.hpp"

namespace ctc {

// ---------------------------------------------------------------------------
// Optimizer

/// Bias-corrected Adam. m and v start at zero; t counts completed steps.
struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Eigen::Index size, double lr);
};

/// One Adam update of `params` in place. Accumulators are sized on first use;
/// any later size mismatch throws InvalidArgument.
void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grads);

// ---------------------------------------------------------------------------
// Models

/// Something that turns teacher estimates into refined estimates and can be
/// trained through the flat parameter vector it exposes.
class PoseModel {
 public:
  virtual ~PoseModel() = default;

  virtual std::string_view kind() const = 0;
  /// Deterministic (inference-mode) estimate for one pair.
  virtual Se3Vec estimate(const PairKey& key, const Se3Vec& teacher_xi) const = 0;
  /// Training-mode forward pass; remembers what backward() needs.
  virtual XiMap forward(const XiMap& inputs, std::mt19937_64& rng) = 0;
  /// Parameter gradient for output gradients of the last forward() call.
  virtual Eigen::VectorXd backward(const GradientMap& output_grads) const = 0;

  virtual Eigen::VectorXd& parameters() = 0;
  virtual const Eigen::VectorXd& parameters() const = 0;

  XiMap estimate_all(const XiMap& teacher) const;
};

/// One free 6-vector per pair key. Consecutive and direct keys are separate
/// parameters.
class FreePoseTable final : public PoseModel {
 public:
  /// Parameters for every key of `keys`, initialised to zero.
  explicit FreePoseTable(const std::vector<PairKey>& keys);
  /// Parameters initialised to the given values.
  explicit FreePoseTable(const XiMap& initial);

  std::string_view kind() const override { return "free_table"; }
  Se3Vec estimate(const PairKey& key, const Se3Vec& teacher_xi) const override;
  XiMap forward(const XiMap& inputs, std::mt19937_64& rng) override;
  Eigen::VectorXd backward(const GradientMap& output_grads) const override;
  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }

  const std::vector<PairKey>& keys() const { return keys_; }
  Se3Vec at(const PairKey& key) const;
  XiMap values() const;

 private:
  Eigen::Index offset(const PairKey& key) const;

  std::vector<PairKey> keys_;
  std::map<PairKey, Eigen::Index> index_;
  Eigen::VectorXd params_;
};

/// Per-unit keep flags of the hidden layer (1 = kept).
using DropoutMask = std::vector<std::uint8_t>;

/// out = W2 * drop(relu(W1 * x + b1)) + b2 with inverted dropout: kept
/// units are scaled by 1 / (1 - gamma) so no rescaling is needed at
/// inference. The same weights are shared by every pair.
class TinyDenoiser final : public PoseModel {
 public:
  /// Weights start on an identity map spread over all hidden units (+/-
  /// unit pairs per coordinate), plus seeded noise of std `init_noise`.
  TinyDenoiser(int hidden, double gamma, std::uint64_t seed, double init_noise = 0.01);

  int hidden() const { return hidden_; }
  double gamma() const { return gamma_; }
  void set_gamma(double gamma);

  std::string_view kind() const override { return "tiny_denoiser"; }
  Se3Vec estimate(const PairKey& key, const Se3Vec& teacher_xi) const override;
  XiMap forward(const XiMap& inputs, std::mt19937_64& rng) override;
  Eigen::VectorXd backward(const GradientMap& output_grads) const override;
  Eigen::VectorXd& parameters() override { return params_; }
  const Eigen::VectorXd& parameters() const override { return params_; }

  /// Empty mask means no dropout (and no rescaling).
  Se3Vec predict(const Se3Vec& xi_in, std::span<const std::uint8_t> mask = {}) const;
  /// Bernoulli(1 - gamma) keep mask.
  DropoutMask draw_mask(double gamma, std::mt19937_64& rng) const;

  using MatrixView = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixView = Eigen::Map<const Eigen::MatrixXd>;
  using VectorView = Eigen::Map<Eigen::VectorXd>;
  using ConstVectorView = Eigen::Map<const Eigen::VectorXd>;

  MatrixView w1() { return {params_.data(), hidden_, 6}; }
  VectorView b1() { return {params_.data() + 6 * hidden_, hidden_}; }
  MatrixView w2() { return {params_.data() + 7 * hidden_, 6, hidden_}; }
  VectorView b2() { return {params_.data() + 13 * hidden_, 6}; }
  ConstMatrixView w1() const { return {params_.data(), hidden_, 6}; }
  ConstVectorView b1() const { return {params_.data() + 6 * hidden_, hidden_}; }
  ConstMatrixView w2() const { return {params_.data() + 7 * hidden_, 6, hidden_}; }
  ConstVectorView b2() const { return {params_.data() + 13 * hidden_, 6}; }

  static Eigen::Index parameter_count(int hidden) { return 13 * hidden + 6; }

 private:
  struct Cached {
    Se3Vec input;
    Eigen::VectorXd pre;   // W1 x + b1
    Eigen::VectorXd gate;  // d hidden_out / d pre: 0, or the dropout scale
  };

  int hidden_;
  double gamma_;
  Eigen::VectorXd params_;
  std::map<PairKey, Cached> cache_;
};

/// Free-function form of TinyDenoiser::predict.
Se3Vec predict(const TinyDenoiser& model, const Se3Vec& xi_in,
               std::span<const std::uint8_t> mask = {});

/// K forward passes with independent Bernoulli(1 - gamma) masks.
/// Throws InvalidArgument unless K >= 2 and 0 < gamma < 1.
std::vector<Se3Vec> sample_predictions(const TinyDenoiser& model, const Se3Vec& xi_in, int k,
                                       double gamma, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
  int pretrain_epochs = 10;
  int seq_epochs = 30;
  // Curriculum in frame pairs; a window of P pairs spans P + 1 frames.
  int window_start = 3;
  int window_end = 18;
  double lr = 1e-4;
  double lr_decay = 0.5;
  int decay_every = 5;
  double alpha = 1.0;
  double beta = 3.0;
  std::optional<int> max_span;  // cap on j - i of the enumerated constraints
  int stride = 1;               // window start step
  int pretrain_batch = 64;      // pairs per pretrain step
  int threads = 1;

  void validate() const;
  LossWeights weights() const { return {alpha, beta}; }
  /// Window length (pairs) used in sequential epoch e; linear from
  /// window_start to window_end.
  int window_pairs(int epoch) const;
  /// Learning rate in epoch e of a phase.
  double lr_at(int epoch) const;
};

enum class Phase { pretrain, sequential };
std::string_view to_string(Phase phase);

struct EpochRecord {
  int epoch = 0;
  Phase phase = Phase::pretrain;
  int window_len = 0;  // frame pairs; 0 during pretraining
  double lr = 0.0;
  // Epoch means over windows (pretrain: over all pairs) of
  // per-constraint CTC and per-estimate regularization residuals.
  double loss_total = 0.0;
  double loss_ctc = 0.0;
  double loss_reg = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  XiMap estimates;  // inference-mode estimate for every teacher pair
  long steps = 0;
};

/// Minimizes beta * L_reg against the teacher. Throws InvalidArgument when
/// beta = 0.
TrainResult pretrain(PoseModel& model, const TeacherSet& teacher, const TrainSchedule& schedule,
                     std::uint64_t seed);

/// Sliding-window training on alpha * L_ctc + beta * L_reg with the window
/// curriculum. Throws ConfigError when a demanded teacher pair is missing.
TrainResult train_sequential(PoseModel& model, const TeacherSet& teacher,
                             const TrainSchedule& schedule, std::uint64_t seed);

/// pretrain followed by train_sequential; histories are concatenated.
TrainResult train_two_phase(PoseModel& model, const TeacherSet& teacher,
                            const TrainSchedule& schedule, std::uint64_t seed);

}  // namespace ctc
