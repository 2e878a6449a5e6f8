#include "ctc_odom/constraints.hpp"

#include <algorithm>
#include <thread>

#include "ctc_odom/errors.hpp"

namespace ctc {

namespace {

const Se3Vec& lookup(const XiMap& map, const PairKey& key, const char* what) {
  const auto it = map.find(key);
  if (it == map.end()) {
    throw ConfigError(std::string(what) + " has no entry for pair " + to_string(key));
  }
  return it->second;
}

Se3Vec block_weights(const LossWeights& weights) {
  Se3Vec w;
  w << Eigen::Vector3d::Constant(weights.translation_weight),
      Eigen::Vector3d::Constant(weights.rotation_weight);
  return w;
}

std::vector<Se3Vec> gather_chain(const XiMap& estimates, const CompositeConstraint& c) {
  std::vector<Se3Vec> chain;
  chain.reserve(c.chain.size());
  for (const auto& key : c.chain) chain.push_back(lookup(estimates, key, "estimates"));
  return chain;
}

void check_priors(const XiMap& estimates, const XiMap& priors) {
  for (const auto& [key, xi] : estimates) lookup(priors, key, "priors");
}

// Gradient of alpha * ctc_residual for one constraint: entry k < chain size
// is the chain element k, the last entry is the direct estimate.
std::vector<Se3Vec> constraint_gradient(const XiMap& estimates, const CompositeConstraint& c,
                                        const LossWeights& weights, const Se3Vec& w) {
  const std::vector<Se3Vec> chain = gather_chain(estimates, c);
  const Se3Vec& direct = lookup(estimates, c.direct, "estimates");
  const std::vector<Mat6> jacobians = chain_log_jacobians(chain);
  // chain_log is recomputed rather than taken from the jacobian pass so
  // the residual matches ctc_residual bit for bit.
  const Se3Vec weighted = 2.0 * weights.alpha * w.cwiseProduct(direct - chain_log(chain));

  std::vector<Se3Vec> out;
  out.reserve(chain.size() + 1);
  for (const auto& jac : jacobians) out.push_back(-(jac.transpose() * weighted));
  out.push_back(weighted);
  return out;
}

}  // namespace

std::string to_string(const PairKey& key) {
  return "(" + std::to_string(key.i) + "," + std::to_string(key.j) + ")";
}

std::string_view to_string(Source source) {
  switch (source) {
    case Source::teacher: return "teacher";
    case Source::model: return "model";
    case Source::ground_truth: return "ground_truth";
  }
  return "teacher";
}

Source source_from_string(std::string_view name) {
  if (name == "teacher") return Source::teacher;
  if (name == "model") return Source::model;
  if (name == "ground_truth") return Source::ground_truth;
  throw InvalidArgument("unknown estimate source '" + std::string(name) + "'");
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("loss weights must be non-negative");
  if (alpha == 0.0 && beta == 0.0) throw InvalidArgument("loss weights alpha and beta are both zero");
  if (!(translation_weight >= 0.0) || !(rotation_weight >= 0.0)) {
    throw InvalidArgument("block weights must be non-negative");
  }
}

std::vector<CompositeConstraint> enumerate_constraints(const Window& window,
                                                       std::optional<int> max_span) {
  if (window.length < 2) throw InvalidArgument("window length must be at least 2 frames");
  const int last = window.start + window.length - 1;
  const int widest = max_span ? std::min(*max_span, window.length - 1) : window.length - 1;

  std::vector<CompositeConstraint> out;
  for (int i = window.start; i <= last; ++i) {
    for (int j = i + 2; j <= std::min(last, i + widest); ++j) {
      CompositeConstraint c;
      c.direct = {i, j};
      for (int k = i; k < j; ++k) c.chain.push_back({k, k + 1});
      out.push_back(std::move(c));
    }
  }
  return out;
}

double weighted_squared_norm(const Se3Vec& d, const LossWeights& weights) {
  return weights.translation_weight * d.head<3>().squaredNorm() +
         weights.rotation_weight * d.tail<3>().squaredNorm();
}

double ctc_residual(std::span<const Se3Vec> chain_xis, const Se3Vec& direct_xi,
                    const LossWeights& weights) {
  return weighted_squared_norm(direct_xi - chain_log(chain_xis), weights);
}

double reg_residual(const Se3Vec& xi, const Se3Vec& xi_hat, const LossWeights& weights) {
  if (!xi.allFinite() || !xi_hat.allFinite()) throw InvalidArgument("reg_residual: non-finite input");
  return weighted_squared_norm(xi - xi_hat, weights);
}

LossBreakdown total_loss(const XiMap& estimates, const XiMap& priors,
                         std::span<const CompositeConstraint> constraints,
                         const LossWeights& weights) {
  weights.validate();
  check_priors(estimates, priors);
  LossBreakdown out;
  out.per_constraint.reserve(constraints.size());
  for (const auto& c : constraints) {
    const auto chain = gather_chain(estimates, c);
    const double r = ctc_residual(chain, lookup(estimates, c.direct, "estimates"), weights);
    out.per_constraint.push_back(r);
    out.ctc += r;
  }
  for (const auto& [key, xi] : estimates) out.reg += reg_residual(xi, priors.at(key), weights);
  out.total = weights.alpha * out.ctc + weights.beta * out.reg;
  return out;
}

LossBreakdown total_loss(const EstimateMap& estimates, const XiMap& priors,
                         std::span<const CompositeConstraint> constraints,
                         const LossWeights& weights) {
  return total_loss(xi_map(estimates), priors, constraints, weights);
}

GradientMap loss_gradient(const XiMap& estimates, const XiMap& priors,
                          std::span<const CompositeConstraint> constraints,
                          const LossWeights& weights, int threads) {
  weights.validate();
  check_priors(estimates, priors);
  const Se3Vec w = block_weights(weights);

  GradientMap grad;
  for (const auto& [key, xi] : estimates) {
    grad[key] = 2.0 * weights.beta * w.cwiseProduct(xi - priors.at(key));
  }
  if (weights.alpha == 0.0 || constraints.empty()) return grad;

  std::vector<std::vector<Se3Vec>> parts(constraints.size());
  const auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t c = begin; c < end; ++c) {
      parts[c] = constraint_gradient(estimates, constraints[c], weights, w);
    }
  };
  const std::size_t n_workers =
      std::clamp<std::size_t>(threads > 0 ? threads : 1, 1, constraints.size());
  if (n_workers == 1) {
    work(0, constraints.size());
  } else {
    // Validate keys up front so workers never throw.
    for (const auto& c : constraints) {
      gather_chain(estimates, c);
      lookup(estimates, c.direct, "estimates");
    }
    std::vector<std::jthread> pool;
    const std::size_t per = (constraints.size() + n_workers - 1) / n_workers;
    for (std::size_t b = 0; b < constraints.size(); b += per) {
      pool.emplace_back(work, b, std::min(b + per, constraints.size()));
    }
  }

  for (std::size_t c = 0; c < constraints.size(); ++c) {
    const auto& con = constraints[c];
    for (std::size_t k = 0; k < con.chain.size(); ++k) grad[con.chain[k]] += parts[c][k];
    grad[con.direct] += parts[c].back();
  }
  return grad;
}

GradientMap loss_gradient(const EstimateMap& estimates, const XiMap& priors,
                          std::span<const CompositeConstraint> constraints,
                          const LossWeights& weights, int threads) {
  return loss_gradient(xi_map(estimates), priors, constraints, weights, threads);
}

XiMap xi_map(const EstimateMap& estimates) {
  XiMap out;
  for (const auto& [key, e] : estimates) out.emplace_hint(out.end(), key, e.xi);
  return out;
}

}  // namespace ctc
