#pragma once

// Latent-structured metric learning for kNN classification. The choice of k
// neighbors is the latent variable h; the score of h is the negated sum of
// metric distances from the query to its members, and training pushes some
// zero-loss neighbor set above every lossy one.

#include "nnml/dataset.hpp"
#include "nnml/numerics.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace nnml {

/// Ordered set of k distinct training indices, nearest (highest point score)
/// first. Vote tie-breaking relies on the order.
struct NeighborSet {
  std::vector<Index> indices;

  Index size() const { return static_cast<Index>(indices.size()); }
  bool operator==(const NeighborSet&) const = default;
};

/// R x R task loss, Lambda(true, predicted), class ids 1-based at the API.
class LossMatrix {
 public:
  explicit LossMatrix(Matrix values);
  static LossMatrix zero_one(int num_classes);

  double operator()(int truth, int predicted) const { return values_(truth - 1, predicted - 1); }
  int num_classes() const { return static_cast<int>(values_.rows()); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

struct MahalanobisMetric {
  SymMatrix w;
};

/// D(x, x_i) = ||U x - V x_i||^2; U acts on queries, V on database rows.
struct AsymmetricMetric {
  Matrix u;
  Matrix v;
};

/// Per-training-row contribution to the score: -D(x, x_j). Higher is closer.
Vector point_scores(const MahalanobisMetric& metric, const Vector& x, const Matrix& train);
Vector point_scores(const AsymmetricMetric& metric, const Vector& x, const Matrix& train);

double score(const MahalanobisMetric& metric, const Vector& x, const NeighborSet& h, const Matrix& train);
double score(const AsymmetricMetric& metric, const Vector& x, const NeighborSet& h, const Matrix& train);

/// How a vote tie is resolved when scoring the loss of a neighbor set.
enum class TiePolicy {
  /// Prediction rule: the tied class whose closest member comes first.
  NearestNeighbor,
  /// Training rule: a tie counts as the worst tied class (ties allowed,
  /// so any tied class may be predicted).
  Pessimistic,
};

/// Lambda(y, vote(h)); with TiePolicy::Pessimistic, the maximum of
/// Lambda(y, r) over all classes r sharing the top count.
double task_loss(int y, const NeighborSet& h, std::span<const int> labels, const LossMatrix& loss,
                 TiePolicy policy = TiePolicy::NearestNeighbor);

/// Minimum number of target-class members that lets the target win a k-vote
/// among R classes: ceil((k + tau (R - 1)) / R), tau = ties_forbidden.
Index n_star(int num_classes, Index k, bool ties_forbidden);

/// Everything inference needs: additive per-row scores and class labels.
struct InferenceProblem {
  std::span<const double> scores;
  std::span<const int> labels;
  int num_classes = 0;
  Index k = 1;
  Index exclude = -1;  // leave-one-out row, -1 for none
};

/// Highest-scoring size-k set whose vote goes to `target`: strictly when
/// ties_forbidden, as a shared maximum otherwise. For every target count m
/// from n_star up to k: the m best target-class rows plus the best other rows
/// with at most m - tau from each class; the best m wins. Exact, O(k n).
/// Empty when no such set exists.
std::optional<NeighborSet> targeted_inference(const InferenceProblem& problem, int target, bool ties_forbidden);

struct AugmentedSet {
  NeighborSet h;
  int vote = 0;          // class the set was built for
  double value = 0.0;    // score(h) + Lambda(y, vote)
};

/// argmax_h score(h) + Delta(y, h), with ties counted pessimistically: one
/// ties-allowed targeted inference per feasible class.
std::optional<AugmentedSet> loss_augmented_inference(const InferenceProblem& problem, int y, const LossMatrix& loss);

struct SurrogateTerms {
  double value = 0.0;  // [score(h_hat) + Delta(y, h_hat)] - score(h_star)
  NeighborSet h_hat;
  NeighborSet h_star;
  int hat_vote = 0;
};

std::optional<SurrogateTerms> surrogate_loss(const InferenceProblem& problem, int y, const LossMatrix& loss);

/// Metric-level conveniences over the problem form above.
std::optional<NeighborSet> targeted_inference(const MahalanobisMetric& metric, const Vector& x, int target, Index k,
                                              bool ties_forbidden, const Dataset& train, Index exclude = -1);
std::optional<AugmentedSet> loss_augmented_inference(const MahalanobisMetric& metric, const Vector& x, int y, Index k,
                                                     const LossMatrix& loss, const Dataset& train, Index exclude = -1);
std::optional<double> surrogate_loss(const MahalanobisMetric& metric, const Vector& x, int y, Index k,
                                     const LossMatrix& loss, const Dataset& train, Index exclude = -1);

/// Unconstrained score maximizer: the k best rows (index order on ties).
NeighborSet top_k(std::span<const double> scores, Index k, Index exclude = -1);

/// Psi(x, h) = -sum_{j in h} (x - x_j)(x - x_j)^T, the gradient of the
/// symmetric score with respect to W.
SymMatrix feature_map_psi(const Vector& x, const NeighborSet& h, const Matrix& train);

struct AsymmetricGradient {
  Matrix du;
  Matrix dv;
};

/// dS/dU = -2 sum (U x x^T - V x_j x^T), dS/dV = -2 sum (V x_j x_j^T - U x x_j^T).
AsymmetricGradient asymmetric_score_gradient(const AsymmetricMetric& metric, const Vector& x, const NeighborSet& h,
                                             const Matrix& train);

/// Gradient of 0.5 ||W||_F^2 for the block matrix
/// W = [[U^T U, -U^T V], [-V^T U, V^T V]]: (2 UU^T U + 2 VV^T U, 2 VV^T V + 2 UU^T V).
AsymmetricGradient asymmetric_regularizer_gradient(const AsymmetricMetric& metric);
double asymmetric_regularizer(const AsymmetricMetric& metric);

enum class MetricVariant { Symmetric, Asymmetric };

struct LearningRate {
  enum class Schedule { InverseT, Constant };
  Schedule schedule = Schedule::InverseT;
  double base = 1.0;

  /// t counts sample updates from 1.
  double at(std::int64_t t) const {
    return schedule == Schedule::InverseT ? base / static_cast<double>(t) : base;
  }
};

enum class MetricInit { Zeros, Identity, DiagonalWeights };

/// Epoch-level stopping rule: stop once `patience` consecutive epochs fail to
/// lower the best epoch-mean surrogate by the relative `tolerance`.
class PlateauStop {
 public:
  PlateauStop(double tolerance, int patience) : tolerance_(tolerance), patience_(patience) {}

  /// Records one epoch mean; true when training should stop.
  bool should_stop(double epoch_mean);

 private:
  double tolerance_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

struct GerryTrainConfig {
  Index k = 3;
  double C = 1.0;
  int epochs = 20;
  LearningRate lr{};
  MetricInit init = MetricInit::Zeros;
  Vector init_weights;  // for DiagonalWeights (and the asymmetric init)
  std::uint64_t seed = 0;
  Index batch_size = 1;
  double tolerance = 1e-4;
  int patience = 1;
  std::optional<LossMatrix> loss;  // 0/1 loss when unset
  double reg_weight = 1.0;         // asymmetric regularizer weight
};

struct TraceRow {
  int epoch = 0;
  double mean_surrogate = 0.0;
  Index skipped = 0;
};

struct MetricModel {
  MetricVariant variant = MetricVariant::Symmetric;
  MahalanobisMetric symmetric;
  AsymmetricMetric asymmetric;
  std::vector<TraceRow> trace;
  Index k = 0;
  std::int64_t updates = 0;

  /// Maps usable by NeighborIndex: (database map, query map); the query map
  /// is unset for the symmetric variant.
  std::pair<Matrix, std::optional<Matrix>> neighbor_maps() const;
};

/// Called after every parameter update.
using UpdateObserver = std::function<void(const MetricModel&)>;

/// Stochastic subgradient training of the gerrymandering objective.
/// Symmetric: W <- (1 - eta) W - C (Psi(x, h_hat) - Psi(x, h_star)), then PSD
/// projection. Asymmetric: U, V <- U, V - eta (C dL + reg_weight dReg).
/// Stops on a PlateauStop signal, a zero epoch-mean surrogate, or after
/// `epochs`.
MetricModel train_sgd(const Dataset& train, const GerryTrainConfig& config, MetricVariant variant,
                      const UpdateObserver& observer = {});

/// One subgradient step on sample `xi` given its two inferred sets.
void apply_sgd_step(MetricModel& model, const Vector& xi, const NeighborSet& h_hat, const NeighborSet& h_star,
                    const Matrix& train, double C, double reg_weight, double eta);

/// Starting point shared by training and tests.
MetricModel initial_model(const Dataset& train, const GerryTrainConfig& config, MetricVariant variant);

}  // namespace nnml
