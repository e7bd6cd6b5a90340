#pragma once

// Brute-force references and randomized comparison suites. Everything here
// enumerates subsets directly and shares no logic with the fast solvers it
// checks.

#include "nnml/gerrymander.hpp"
#include "nnml/regression_ml.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace nnml::oracle {

/// Calls `visit` with every size-k subset of {0..n-1} \ {exclude}, members
/// in increasing order.
void for_each_subset(Index n, Index k, Index exclude, const std::function<void(const std::vector<Index>&)>& visit);

/// Number of size-k subsets of n items (saturates at int64 max).
std::int64_t binomial(Index n, Index k);

/// Best additive score over size-k sets whose vote goes to `target`, strictly
/// when ties_forbidden, shared otherwise.
std::optional<double> brute_targeted(const std::vector<double>& scores, const std::vector<int>& labels, int num_classes,
                                     Index k, int target, bool ties_forbidden, Index exclude = -1);

/// max_h score(h) + Lambda(y, worst class among the vote leaders of h).
double brute_loss_augmented(const std::vector<double>& scores, const std::vector<int>& labels, int num_classes,
                            Index k, int y, const LossMatrix& loss, Index exclude = -1);

/// max_h score(h) -/+ gamma * Dhat(y, h).
double brute_reg(const std::vector<double>& scores, const std::vector<double>& targets, double y, Index k,
                 double gamma, RegDirection direction, Index exclude = -1);

/// min_h delta_reg(y, h) over all size-k sets.
double brute_min_delta(const std::vector<double>& targets, double y, Index k, Index exclude = -1);

/// True iff, for R classes and k votes, every vote-count vector in which the
/// target strictly beats all others gives the target at least n_star votes,
/// and some strictly winning vector gives it exactly n_star.
bool nstar_tight(int num_classes, Index k);

/// A random classification inference instance with a PSD metric.
struct ClassInstance {
  Matrix x;
  std::vector<int> labels;
  int num_classes = 2;
  Index k = 1;
  SymMatrix w;
  Vector query;
  int y = 1;

  std::vector<double> scores() const;
  nlohmann::json to_json() const;
};

/// n in [k+1, max_n], k in [1, max_k], R in [2, max_classes]. Coordinates are
/// small integers half the time so that score ties occur.
ClassInstance random_class_instance(std::mt19937_64& rng, Index max_n = 12, Index max_k = 5, int max_classes = 4);

struct SuiteResult {
  std::string suite;
  Index instances = 0;
  Index failures = 0;
  std::string message;                 // first failure, human readable
  std::optional<nlohmann::json> failing_instance;

  bool passed() const { return failures == 0; }
};

class UnknownSuite : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::vector<std::string> suite_names();

/// Runs `budget` randomized instances of the named suite. Throws UnknownSuite
/// for names outside suite_names().
SuiteResult run_suite(const std::string& name, Index budget, std::uint64_t seed);

}  // namespace nnml::oracle
