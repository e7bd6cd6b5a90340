#pragma once

// Metric learning for kNN regression. The exact squared loss of a neighbor
// set couples its members through their mean; the separable bound
// (1/k) sum (y - y_i)^2 makes inference a sort.

#include "nnml/dataset.hpp"
#include "nnml/gerrymander.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <span>

namespace nnml {

/// (y - mean of the selected targets)^2.
double delta_reg(double y, const NeighborSet& h, std::span<const double> targets);

/// (1/k) sum_{i in h} (y - y_i)^2; never below delta_reg on the same set.
double delta_reg_ub(double y, const NeighborSet& h, std::span<const double> targets);

enum class RegDirection { Targeted, LossAugmented };

/// Top-k rows by s_i = score_i -/+ gamma (y - y_i)^2 / k (minus when
/// targeted, plus when loss-augmented). Exact for the separable bound since
/// the objective adds over members.
NeighborSet reg_inference(std::span<const double> point_scores, std::span<const double> targets, double y, Index k,
                          double gamma, RegDirection direction, Index exclude = -1);

NeighborSet reg_inference(const MahalanobisMetric& metric, const Vector& x, double y, Index k, double gamma,
                          RegDirection direction, const Dataset& train, Index exclude = -1);

struct RegLossVariant {
  enum class Kind { UpperBound, EpsInsensitive, MinLoss };
  Kind kind = Kind::UpperBound;
  double gamma = 1.0;
  double epsilon = 0.0;

  static RegLossVariant upper_bound(double gamma);
  static RegLossVariant eps_insensitive(double epsilon, double gamma);
  static RegLossVariant min_loss(double gamma);
};

/// Heuristic h* under the alternate definitions (exact-loss subset selection
/// has no known efficient solver).
///  EpsInsensitive: start from the plain top-k; while delta_reg > epsilon,
///    take members in order of how far their target pulls the mean away from
///    y and swap the first one that has an improving non-member, choosing the
///    highest-scoring such non-member. Empty when stuck above epsilon or the
///    swap budget runs out.
///  MinLoss: the k rows with targets nearest y, then best-improvement swaps
///    on delta_reg until none improves or the budget runs out.
/// UpperBound is not an alternate and is rejected.
std::optional<NeighborSet> hstar_alternate(std::span<const double> point_scores, std::span<const double> targets,
                                           double y, Index k, const RegLossVariant& variant, Index exclude = -1,
                                           Index swap_budget = 5000);

std::optional<NeighborSet> hstar_alternate(const MahalanobisMetric& metric, const Vector& x, double y, Index k,
                                           const RegLossVariant& variant, const Dataset& train, Index exclude = -1,
                                           Index swap_budget = 5000);

/// Logarithmic gamma grid, 1e-5 .. 1e2, one point per decade.
std::vector<double> default_gamma_grid();

struct RegTrainConfig {
  Index k = 3;
  double C = 1.0;
  RegLossVariant variant{};
  int epochs = 20;
  Index batch_size = 1;
  LearningRate lr{};
  MetricInit init = MetricInit::Zeros;
  Vector init_weights;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int patience = 1;
  double reg_weight = 1.0;
  Index swap_budget = 5000;
};

/// Per-sample surrogate pieces: value = [S(h_hat) + gamma Dhat(h_hat)] - S'(h_star)
/// where S' is S - gamma Dhat for the bound and plain S for the alternates.
struct RegSurrogate {
  double value = 0.0;
  NeighborSet h_hat;
  NeighborSet h_star;
};

std::optional<RegSurrogate> reg_surrogate(std::span<const double> point_scores, std::span<const double> targets,
                                          double y, Index k, const RegLossVariant& variant, Index exclude = -1,
                                          Index swap_budget = 5000);

/// Subgradient training with the same parameter updates as the
/// classification trainer; samples whose h* is infeasible are skipped.
MetricModel train_reg_sgd(const Dataset& train, const RegTrainConfig& config, MetricVariant variant,
                          const UpdateObserver& observer = {});

}  // namespace nnml
