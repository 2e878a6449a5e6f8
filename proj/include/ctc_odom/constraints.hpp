#pragma once

#include <compare>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctc_odom/liegroup.hpp"

namespace ctc {

/// Ordered frame-index pair (i, j), j > i.
struct PairKey {
  int i = 0;
  int j = 0;

  int span() const { return j - i; }
  auto operator<=>(const PairKey&) const = default;
};

std::string to_string(const PairKey& key);

enum class Source { teacher, model, ground_truth };

std::string_view to_string(Source source);
/// Throws InvalidArgument on unknown names.
Source source_from_string(std::string_view name);

/// Relative transform frame i -> frame j in exponential coordinates.
struct FramePairEstimate {
  int i = 0;
  int j = 0;
  Se3Vec xi = Se3Vec::Zero();
  Source source = Source::teacher;

  PairKey key() const { return {i, j}; }
};

using XiMap = std::map<PairKey, Se3Vec>;
using EstimateMap = std::map<PairKey, FramePairEstimate>;
using GradientMap = std::map<PairKey, Se3Vec>;

/// Contiguous run of frames [start, start + length).
struct Window {
  int start = 0;
  int length = 2;
};

/// chain = (i,i+1), ..., (j-1,j) must compose to direct = (i,j).
struct CompositeConstraint {
  std::vector<PairKey> chain;
  PairKey direct;
};

struct LossWeights {
  double alpha = 1.0;
  double beta = 3.0;
  // Diagonal weight on the translational and rotational blocks of every
  // squared residual. Identity by default.
  double translation_weight = 1.0;
  double rotation_weight = 1.0;

  /// Throws InvalidArgument on negative weights or alpha = beta = 0.
  void validate() const;
};

struct LossBreakdown {
  double ctc = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::vector<double> per_constraint;
};

/// Every (i, j) inside the window with j - i >= 2 (and j - i <= max_span
/// when given), ordered by (i, j). Windows shorter than 3 frames yield no
/// constraints. Throws InvalidArgument if length < 2.
std::vector<CompositeConstraint> enumerate_constraints(const Window& window,
                                                       std::optional<int> max_span = std::nullopt);

/// Weighted squared L2 norm with the block weights of `weights`.
double weighted_squared_norm(const Se3Vec& d, const LossWeights& weights);

/// ||direct - chain_log(chain)||^2 (block-weighted).
double ctc_residual(std::span<const Se3Vec> chain_xis, const Se3Vec& direct_xi,
                    const LossWeights& weights = {});

/// ||xi - xi_hat||^2 (block-weighted).
double reg_residual(const Se3Vec& xi, const Se3Vec& xi_hat, const LossWeights& weights = {});

/// alpha * sum of CTC residuals + beta * sum of reg residuals over every
/// estimate. Throws ConfigError naming the first unresolved pair.
LossBreakdown total_loss(const XiMap& estimates, const XiMap& priors,
                         std::span<const CompositeConstraint> constraints,
                         const LossWeights& weights);
LossBreakdown total_loss(const EstimateMap& estimates, const XiMap& priors,
                         std::span<const CompositeConstraint> constraints,
                         const LossWeights& weights);

/// Gradient of total_loss with respect to every estimate. The CTC term is
/// differentiated through chain_log_jacobians. Per-constraint work may be
/// split over `threads` workers; contributions are reduced in constraint
/// order, so the result does not depend on the thread count.
GradientMap loss_gradient(const XiMap& estimates, const XiMap& priors,
                          std::span<const CompositeConstraint> constraints,
                          const LossWeights& weights, int threads = 1);
GradientMap loss_gradient(const EstimateMap& estimates, const XiMap& priors,
                          std::span<const CompositeConstraint> constraints,
                          const LossWeights& weights, int threads = 1);

XiMap xi_map(const EstimateMap& estimates);

}  // namespace ctc
