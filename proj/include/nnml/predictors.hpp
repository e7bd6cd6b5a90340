#pragma once

#include "nnml/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nnml {

struct NeighborRule {
  enum class Kind { Knn, Radius };
  Kind kind = Kind::Knn;
  Index k = 1;
  double radius = 0.0;

  static NeighborRule knn(Index k);
  static NeighborRule within(double radius);
};

enum class Task { Classify, Regress };

/// Majority vote over `members`, which must be ordered nearest first. Ties
/// go to the tied class whose closest member comes first; `labels` are 1..R.
int majority_vote(std::span<const Index> members, std::span<const int> labels, int num_classes);

/// Class with the most samples, smallest id on ties.
int global_majority(std::span<const int> labels, int num_classes);

/// Brute-force neighbor search under a linear map. With only `database_map`
/// set, queries and training rows share the map. With both set, queries go
/// through `query_map` and training rows through `database_map` (asymmetric
/// metrics). Neighbor order is distance, then training index.
class NeighborIndex {
 public:
  explicit NeighborIndex(const Dataset& train, std::optional<Matrix> database_map = std::nullopt,
                         std::optional<Matrix> query_map = std::nullopt);

  const Dataset& train() const { return train_; }

  /// Squared distances from the query to every training row.
  Vector squared_distances(const Vector& query) const;

  /// Selected neighbors, nearest first. An empty result means the radius ball
  /// is empty. `exclude` drops one training row (leave-one-out).
  std::vector<Index> select(const Vector& query, const NeighborRule& rule, Index exclude = -1) const;

  int classify(const Vector& query, const NeighborRule& rule, Index exclude = -1) const;
  double regress(const Vector& query, const NeighborRule& rule, Index exclude = -1) const;

  /// Predicts every row of `queries`; class ids are returned as doubles.
  Vector predict(const Matrix& queries, const NeighborRule& rule) const;

 private:
  Dataset train_;
  Matrix mapped_;
  std::optional<Matrix> query_map_;
  double global_mean_ = 0.0;
  int global_majority_ = 0;
};

/// One-shot wrapper around NeighborIndex.
double neighbor_predict(const Dataset& train, const std::optional<Matrix>& transform, const Vector& query,
                        const NeighborRule& rule, Task task);

struct EvalReport {
  std::string metric_name;
  double value = 0.0;
  Index n_test = 0;
  std::map<std::string, double> hyperparams;
  std::uint64_t seed = 0;
};

/// Classification: mean 0/1 error, or mean Lambda(truth, prediction) when a
/// loss matrix is supplied. Regression: MSE over test-target variance.
EvalReport evaluate(std::span<const double> predictions, std::span<const double> truth, Task task,
                    const Matrix* loss_matrix = nullptr);

/// Appends `metric_name,value,n_test,params_json,seed` (header on first write).
void append_eval_report(const std::filesystem::path& path, const EvalReport& report);

std::string params_json(const std::map<std::string, double>& params);

using ParamSet = std::map<std::string, double>;

/// Cartesian product; the first axis varies slowest so that earlier-listed
/// values come first.
std::vector<ParamSet> expand_grid(const std::vector<std::pair<std::string, std::vector<double>>>& axes);

struct FoldPair {
  std::vector<Index> fit;
  std::vector<Index> validate;
};

std::vector<FoldPair> fold_pairs(const SplitSpec& split);

/// Single random split holding out `validate_fraction` of the rows.
FoldPair holdout(Index n, double validate_fraction, std::uint64_t seed);

/// Objective returns a validation error (lower is better).
using CvObjective = std::function<double(const Dataset& fit, const Dataset& validate, const ParamSet& params)>;

struct CvResult {
  std::size_t best_index = 0;
  ParamSet best;
  std::vector<double> mean_errors;
};

/// Exhaustive grid search; mean error over folds, ties to the first-listed
/// configuration. Grid points are evaluated in parallel.
CvResult cross_validate(const Dataset& train, const std::vector<ParamSet>& grid, const std::vector<FoldPair>& folds,
                        const CvObjective& objective);

}  // namespace nnml
