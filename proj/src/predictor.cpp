#include "ctc_odom/predictor.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ctc_odom/errors.hpp"

namespace ctc {

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::zeros(Eigen::Index size, double lr) {
  AdamState s;
  s.m = Eigen::VectorXd::Zero(size);
  s.v = Eigen::VectorXd::Zero(size);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params,
               const Eigen::Ref<const Eigen::VectorXd>& grads) {
  if (params.size() != grads.size()) {
    throw InvalidArgument("adam_step: parameter and gradient sizes differ");
  }
  if (state.t == 0 && state.m.size() == 0 && state.v.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw InvalidArgument("adam_step: optimizer state does not match parameter size");
  }
  state.t += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double m_correction = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double v_correction = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  params.array() -= state.lr * (state.m.array() / m_correction) /
                    ((state.v.array() / v_correction).sqrt() + state.eps);
}

// ---------------------------------------------------------------------------
// Models

XiMap PoseModel::estimate_all(const XiMap& teacher) const {
  XiMap out;
  for (const auto& [key, xi] : teacher) out.emplace_hint(out.end(), key, estimate(key, xi));
  return out;
}

FreePoseTable::FreePoseTable(const std::vector<PairKey>& keys) : keys_(keys) {
  std::sort(keys_.begin(), keys_.end());
  keys_.erase(std::unique(keys_.begin(), keys_.end()), keys_.end());
  for (std::size_t k = 0; k < keys_.size(); ++k) index_.emplace(keys_[k], 6 * static_cast<Eigen::Index>(k));
  params_ = Eigen::VectorXd::Zero(6 * static_cast<Eigen::Index>(keys_.size()));
}

FreePoseTable::FreePoseTable(const XiMap& initial) {
  for (const auto& [key, xi] : initial) keys_.push_back(key);
  for (std::size_t k = 0; k < keys_.size(); ++k) index_.emplace(keys_[k], 6 * static_cast<Eigen::Index>(k));
  params_.resize(6 * static_cast<Eigen::Index>(keys_.size()));
  for (const auto& [key, xi] : initial) params_.segment<6>(index_.at(key)) = xi;
}

Eigen::Index FreePoseTable::offset(const PairKey& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) throw ConfigError("pose table has no parameter for pair " + to_string(key));
  return it->second;
}

Se3Vec FreePoseTable::at(const PairKey& key) const { return params_.segment<6>(offset(key)); }

Se3Vec FreePoseTable::estimate(const PairKey& key, const Se3Vec&) const { return at(key); }

XiMap FreePoseTable::values() const {
  XiMap out;
  for (const auto& key : keys_) out.emplace_hint(out.end(), key, at(key));
  return out;
}

XiMap FreePoseTable::forward(const XiMap& inputs, std::mt19937_64&) {
  XiMap out;
  for (const auto& [key, xi] : inputs) out.emplace_hint(out.end(), key, at(key));
  return out;
}

Eigen::VectorXd FreePoseTable::backward(const GradientMap& output_grads) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params_.size());
  for (const auto& [key, grad] : output_grads) g.segment<6>(offset(key)) += grad;
  return g;
}

TinyDenoiser::TinyDenoiser(int hidden, double gamma, std::uint64_t seed, double init_noise)
    : hidden_(hidden), gamma_(0.0), params_(Eigen::VectorXd::Zero(parameter_count(hidden > 0 ? hidden : 1))) {
  if (hidden < 1) throw InvalidArgument("TinyDenoiser: hidden width must be >= 1");
  set_gamma(gamma);

  // Unit u carries coordinate (u / 2) % 6 with sign +1 (even u) or -1 (odd u);
  // relu(x) - relu(-x) = x, averaged over the units sharing a coordinate.
  std::vector<int> count(12, 0);
  for (int u = 0; u < hidden_; ++u) ++count[2 * ((u / 2) % 6) + u % 2];
  auto weights_in = w1();
  auto weights_out = w2();
  for (int u = 0; u < hidden_; ++u) {
    const int d = (u / 2) % 6;
    const double sign = u % 2 == 0 ? 1.0 : -1.0;
    weights_in(u, d) = sign;
    weights_out(d, u) = sign / count[2 * d + u % 2];
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, init_noise);
  for (Eigen::Index k = 0; k < 6 * hidden_; ++k) weights_in.data()[k] += noise(rng);
  for (Eigen::Index k = 0; k < 6 * hidden_; ++k) weights_out.data()[k] += noise(rng);
}

void TinyDenoiser::set_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidArgument("dropout fraction must lie in [0, 1)");
  gamma_ = gamma;
}

Se3Vec TinyDenoiser::predict(const Se3Vec& xi_in, std::span<const std::uint8_t> mask) const {
  Eigen::VectorXd h = (w1() * xi_in + b1()).cwiseMax(0.0);
  if (!mask.empty()) {
    if (static_cast<int>(mask.size()) != hidden_) {
      throw InvalidArgument("dropout mask length does not match hidden width");
    }
    const double scale = 1.0 / (1.0 - gamma_);
    for (int u = 0; u < hidden_; ++u) h(u) = mask[u] ? h(u) * scale : 0.0;
  }
  return w2() * h + b2();
}

DropoutMask TinyDenoiser::draw_mask(double gamma, std::mt19937_64& rng) const {
  std::bernoulli_distribution keep(1.0 - gamma);
  DropoutMask mask(hidden_);
  for (auto& m : mask) m = keep(rng) ? 1 : 0;
  return mask;
}

Se3Vec TinyDenoiser::estimate(const PairKey&, const Se3Vec& teacher_xi) const {
  return predict(teacher_xi);
}

XiMap TinyDenoiser::forward(const XiMap& inputs, std::mt19937_64& rng) {
  cache_.clear();
  XiMap out;
  const double scale = 1.0 / (1.0 - gamma_);
  for (const auto& [key, x] : inputs) {
    Cached c{x, w1() * x + b1(), Eigen::VectorXd::Zero(hidden_)};
    const DropoutMask mask = gamma_ > 0.0 ? draw_mask(gamma_, rng) : DropoutMask(hidden_, 1);
    for (int u = 0; u < hidden_; ++u) {
      if (c.pre(u) > 0.0 && mask[u]) c.gate(u) = gamma_ > 0.0 ? scale : 1.0;
    }
    out.emplace_hint(out.end(), key, w2() * c.gate.cwiseProduct(c.pre) + b2());
    cache_.emplace(key, std::move(c));
  }
  return out;
}

Eigen::VectorXd TinyDenoiser::backward(const GradientMap& output_grads) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params_.size());
  MatrixView gw1(g.data(), hidden_, 6);
  VectorView gb1(g.data() + 6 * hidden_, hidden_);
  MatrixView gw2(g.data() + 7 * hidden_, 6, hidden_);
  VectorView gb2(g.data() + 13 * hidden_, 6);
  for (const auto& [key, grad] : output_grads) {
    const auto it = cache_.find(key);
    if (it == cache_.end()) throw ConfigError("backward: pair " + to_string(key) + " was not forwarded");
    const Cached& c = it->second;
    const Eigen::VectorXd hidden_out = c.gate.cwiseProduct(c.pre);
    gw2.noalias() += grad * hidden_out.transpose();
    gb2 += grad;
    const Eigen::VectorXd d_pre = c.gate.cwiseProduct(w2().transpose() * grad);
    gw1.noalias() += d_pre * c.input.transpose();
    gb1 += d_pre;
  }
  return g;
}

Se3Vec predict(const TinyDenoiser& model, const Se3Vec& xi_in, std::span<const std::uint8_t> mask) {
  return model.predict(xi_in, mask);
}

std::vector<Se3Vec> sample_predictions(const TinyDenoiser& model, const Se3Vec& xi_in, int k,
                                       double gamma, std::uint64_t seed) {
  if (k < 2) throw InvalidArgument("sample_predictions: need K >= 2 samples");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("sample_predictions: gamma must lie in (0, 1)");
  TinyDenoiser sampler = model;
  sampler.set_gamma(gamma);
  std::mt19937_64 rng(seed);
  std::vector<Se3Vec> out;
  out.reserve(k);
  for (int s = 0; s < k; ++s) {
    const DropoutMask mask = sampler.draw_mask(gamma, rng);
    out.push_back(sampler.predict(xi_in, mask));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct WindowProblem {
  std::vector<CompositeConstraint> constraints;
  XiMap priors;
};

double mean_or_zero(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

WindowProblem window_problem(const XiMap& teacher, int start, int pairs, std::optional<int> max_span) {
  WindowProblem p;
  p.constraints = enumerate_constraints({start, pairs + 1}, max_span);
  std::set<PairKey> keys;
  for (int k = start; k < start + pairs; ++k) keys.insert({k, k + 1});
  for (const auto& c : p.constraints) keys.insert(c.direct);
  for (const auto& key : keys) {
    const auto it = teacher.find(key);
    if (it == teacher.end()) throw ConfigError("teacher has no estimate for pair " + to_string(key));
    p.priors.emplace_hint(p.priors.end(), key, it->second);
  }
  return p;
}

void check_coverage(const XiMap& teacher, int frames, int pairs, std::optional<int> max_span) {
  const int widest = max_span ? std::min(*max_span, pairs) : pairs;
  std::vector<PairKey> missing;
  for (int i = 0; i + 1 < frames; ++i) {
    for (int s = 1; s <= widest && i + s < frames; ++s) {
      if (!teacher.contains({i, i + s})) missing.push_back({i, i + s});
    }
  }
  if (missing.empty()) return;
  std::string list;
  for (std::size_t k = 0; k < missing.size() && k < 20; ++k) list += (k ? " " : "") + to_string(missing[k]);
  if (missing.size() > 20) list += fmt::format(" ... ({} total)", missing.size());
  throw ConfigError("teacher is missing pairs required by the constraint set: " + list);
}

}  // namespace

void TrainSchedule::validate() const {
  if (pretrain_epochs < 0 || seq_epochs < 0) throw InvalidArgument("epoch counts must be >= 0");
  if (window_start < 1 || window_start > window_end) {
    throw InvalidArgument("window curriculum needs 1 <= window_start <= window_end");
  }
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw InvalidArgument("lr_decay must lie in (0, 1]");
  if (decay_every < 1) throw InvalidArgument("decay_every must be >= 1");
  if (max_span && *max_span < 2) throw InvalidArgument("max_span must be >= 2");
  if (stride < 1) throw InvalidArgument("stride must be >= 1");
  if (pretrain_batch < 0) throw InvalidArgument("pretrain_batch must be >= 0");
  weights().validate();
}

int TrainSchedule::window_pairs(int epoch) const {
  if (seq_epochs <= 1) return window_start;
  const double frac = static_cast<double>(std::clamp(epoch, 0, seq_epochs - 1)) / (seq_epochs - 1);
  return window_start + static_cast<int>(std::lround(frac * (window_end - window_start)));
}

double TrainSchedule::lr_at(int epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch / decay_every));
}

std::string_view to_string(Phase phase) {
  return phase == Phase::pretrain ? "pretrain" : "sequential";
}

TrainResult pretrain(PoseModel& model, const TeacherSet& teacher, const TrainSchedule& schedule,
                     std::uint64_t seed) {
  schedule.validate();
  if (schedule.beta == 0.0) throw InvalidArgument("pretrain: beta = 0 leaves nothing to minimize");
  const XiMap priors = teacher.priors();
  if (priors.empty()) throw ConfigError("pretrain: teacher set is empty");
  const LossWeights weights = schedule.weights();

  std::vector<PairKey> order;
  for (const auto& [key, xi] : priors) order.push_back(key);
  const std::size_t batch =
      schedule.pretrain_batch == 0 ? order.size()
                                   : std::min<std::size_t>(schedule.pretrain_batch, order.size());
  const std::size_t steps_per_epoch = (order.size() + batch - 1) / batch;

  std::mt19937_64 rng(seed);
  AdamState adam = AdamState::zeros(model.parameters().size(), schedule.lr);
  TrainResult result;
  for (int epoch = 0; epoch < schedule.pretrain_epochs; ++epoch) {
    adam.lr = schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      XiMap inputs;
      const std::size_t end = std::min(order.size(), (step + 1) * batch);
      for (std::size_t k = step * batch; k < end; ++k) inputs.emplace(order[k], priors.at(order[k]));
      const XiMap out = model.forward(inputs, rng);
      GradientMap grads;
      for (const auto& [key, xi] : out) {
        grads.emplace_hint(grads.end(), key, 2.0 * weights.beta * (xi - inputs.at(key)));
      }
      adam_step(adam, model.parameters(), model.backward(grads));
      ++result.steps;
    }

    double reg = 0.0;
    for (const auto& [key, xi] : priors) reg += reg_residual(model.estimate(key, xi), xi, weights);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::pretrain;
    rec.lr = adam.lr;
    rec.loss_reg = mean_or_zero(reg, priors.size());
    rec.loss_total = weights.beta * rec.loss_reg;
    result.history.push_back(rec);
  }
  result.estimates = model.estimate_all(priors);
  return result;
}

TrainResult train_sequential(PoseModel& model, const TeacherSet& teacher,
                             const TrainSchedule& schedule, std::uint64_t seed) {
  schedule.validate();
  const XiMap priors = teacher.priors();
  const int frames = teacher.frame_count();
  if (frames < 2) throw ConfigError("train_sequential: teacher covers fewer than 2 frames");
  const LossWeights weights = schedule.weights();
  const int widest_window = std::min(schedule.window_end, frames - 1);
  check_coverage(priors, frames, widest_window, schedule.max_span);

  std::mt19937_64 rng(seed);
  AdamState adam = AdamState::zeros(model.parameters().size(), schedule.lr);
  TrainResult result;
  for (int epoch = 0; epoch < schedule.seq_epochs; ++epoch) {
    adam.lr = schedule.lr_at(epoch);
    const int pairs = std::min(schedule.window_pairs(epoch), frames - 1);
    std::vector<int> starts;
    for (int s = 0; s + pairs <= frames - 1; s += schedule.stride) starts.push_back(s);
    std::shuffle(starts.begin(), starts.end(), rng);

    double ctc_sum = 0.0, reg_sum = 0.0;
    for (const int start : starts) {
      const WindowProblem problem = window_problem(priors, start, pairs, schedule.max_span);
      const XiMap estimates = model.forward(problem.priors, rng);
      const LossBreakdown loss = total_loss(estimates, problem.priors, problem.constraints, weights);
      ctc_sum += mean_or_zero(loss.ctc, problem.constraints.size());
      reg_sum += mean_or_zero(loss.reg, estimates.size());
      const GradientMap grads =
          loss_gradient(estimates, problem.priors, problem.constraints, weights, schedule.threads);
      adam_step(adam, model.parameters(), model.backward(grads));
      ++result.steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::sequential;
    rec.window_len = pairs;
    rec.lr = adam.lr;
    rec.loss_ctc = mean_or_zero(ctc_sum, starts.size());
    rec.loss_reg = mean_or_zero(reg_sum, starts.size());
    rec.loss_total = weights.alpha * rec.loss_ctc + weights.beta * rec.loss_reg;
    result.history.push_back(rec);
  }
  result.estimates = model.estimate_all(priors);
  return result;
}

TrainResult train_two_phase(PoseModel& model, const TeacherSet& teacher,
                            const TrainSchedule& schedule, std::uint64_t seed) {
  TrainResult first = pretrain(model, teacher, schedule, seed);
  TrainResult second = train_sequential(model, teacher, schedule, seed + 1);
  for (auto& rec : second.history) {
    rec.epoch += schedule.pretrain_epochs;
    first.history.push_back(rec);
  }
  first.estimates = std::move(second.estimates);
  first.steps += second.steps;
  return first;
}

}  // namespace ctc
