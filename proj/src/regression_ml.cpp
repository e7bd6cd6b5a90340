#include "nnml/regression_ml.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nnml {

namespace {

double target_of(std::span<const double> targets, Index i) { return targets[static_cast<std::size_t>(i)]; }

double mean_target(const std::vector<Index>& members, std::span<const double> targets) {
  double s = 0.0;
  for (const Index m : members) s += target_of(targets, m);
  return s / static_cast<double>(members.size());
}

void check_sizes(std::span<const double> scores, std::span<const double> targets, Index k, Index exclude) {
  if (scores.size() != targets.size()) throw std::invalid_argument("regression inference: scores/targets length mismatch");
  const Index available = static_cast<Index>(scores.size()) - ((exclude >= 0) ? 1 : 0);
  if (k < 1 || k > available) throw std::invalid_argument("regression inference: k out of range");
}

// Highest score first, index order on ties.
std::vector<Index> by_score(std::span<const double> scores, Index exclude) {
  std::vector<Index> order;
  order.reserve(scores.size());
  for (Index i = 0; i < static_cast<Index>(scores.size()); ++i) {
    if (i != exclude) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  return order;
}

NeighborSet in_score_order(std::vector<Index> members, std::span<const double> scores) {
  std::stable_sort(members.begin(), members.end(), [&](Index a, Index b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  return NeighborSet{std::move(members)};
}

double score_of(const NeighborSet& h, std::span<const double> scores) {
  double s = 0.0;
  for (const Index j : h.indices) s += scores[static_cast<std::size_t>(j)];
  return s;
}

// Squared loss after replacing a member with target `out` by one with target `in`.
double swapped_loss(double y, double sum, double k, double out, double in) {
  const double m = (sum - out + in) / k;
  return (y - m) * (y - m);
}

std::optional<NeighborSet> eps_insensitive(std::span<const double> scores, std::span<const double> targets, double y,
                                           Index k, double epsilon, Index exclude, Index budget) {
  const std::vector<Index> order = by_score(scores, exclude);
  std::vector<Index> members(order.begin(), order.begin() + k);
  if (std::isinf(epsilon)) return in_score_order(std::move(members), scores);
  std::vector<char> inside(scores.size(), 0);
  for (const Index m : members) inside[static_cast<std::size_t>(m)] = 1;
  const double kk = static_cast<double>(k);
  double sum = 0.0;
  for (const Index m : members) sum += target_of(targets, m);

  for (Index swaps = 0;; ++swaps) {
    const double current = (y - sum / kk) * (y - sum / kk);
    if (current <= epsilon) return in_score_order(std::move(members), scores);
    if (swaps >= budget) return std::nullopt;
    // Members whose target sits furthest on the side the mean overshoots
    // contribute most to the error.
    const double direction = sum / kk - y >= 0.0 ? 1.0 : -1.0;
    std::vector<std::size_t> slots(members.size());
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    std::stable_sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) {
      return direction * target_of(targets, members[a]) > direction * target_of(targets, members[b]);
    });
    bool swapped = false;
    for (const std::size_t slot : slots) {
      const double out = target_of(targets, members[slot]);
      for (const Index candidate : order) {
        if (inside[static_cast<std::size_t>(candidate)]) continue;
        const double in = target_of(targets, candidate);
        if (swapped_loss(y, sum, kk, out, in) < current) {
          inside[static_cast<std::size_t>(members[slot])] = 0;
          inside[static_cast<std::size_t>(candidate)] = 1;
          sum += in - out;
          members[slot] = candidate;
          swapped = true;
          break;
        }
      }
      if (swapped) break;
    }
    if (!swapped) return std::nullopt;
  }
}

NeighborSet min_loss(std::span<const double> scores, std::span<const double> targets, double y, Index k,
                     Index exclude, Index budget) {
  std::vector<Index> order = by_score(scores, exclude);
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return std::abs(target_of(targets, a) - y) < std::abs(target_of(targets, b) - y);
  });
  std::vector<Index> members(order.begin(), order.begin() + k);
  std::vector<Index> outside(order.begin() + k, order.end());
  const double kk = static_cast<double>(k);
  double sum = 0.0;
  for (const Index m : members) sum += target_of(targets, m);

  for (Index swaps = 0; swaps < budget; ++swaps) {
    const double current = (y - sum / kk) * (y - sum / kk);
    double best = current;
    std::size_t best_in = 0;
    std::size_t best_out = 0;
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = 0; b < outside.size(); ++b) {
        const double l = swapped_loss(y, sum, kk, target_of(targets, members[a]), target_of(targets, outside[b]));
        if (l < best) {
          best = l;
          best_out = a;
          best_in = b;
        }
      }
    }
    if (!(best < current)) break;
    sum += target_of(targets, outside[best_in]) - target_of(targets, members[best_out]);
    std::swap(members[best_out], outside[best_in]);
  }
  return in_score_order(std::move(members), scores);
}

}  // namespace

double delta_reg(double y, const NeighborSet& h, std::span<const double> targets) {
  if (h.indices.empty()) throw std::invalid_argument("delta_reg: empty neighbor set");
  const double m = mean_target(h.indices, targets);
  return (y - m) * (y - m);
}

double delta_reg_ub(double y, const NeighborSet& h, std::span<const double> targets) {
  if (h.indices.empty()) throw std::invalid_argument("delta_reg_ub: empty neighbor set");
  double s = 0.0;
  for (const Index i : h.indices) s += (y - target_of(targets, i)) * (y - target_of(targets, i));
  return s / static_cast<double>(h.size());
}

NeighborSet reg_inference(std::span<const double> point_scores, std::span<const double> targets, double y, Index k,
                          double gamma, RegDirection direction, Index exclude) {
  check_sizes(point_scores, targets, k, exclude);
  const double sign = direction == RegDirection::Targeted ? -1.0 : 1.0;
  std::vector<double> adjusted(point_scores.size());
  for (std::size_t i = 0; i < adjusted.size(); ++i) {
    const double r = y - targets[i];
    adjusted[i] = point_scores[i] + sign * gamma * r * r / static_cast<double>(k);
  }
  return top_k(adjusted, k, exclude);
}

NeighborSet reg_inference(const MahalanobisMetric& metric, const Vector& x, double y, Index k, double gamma,
                          RegDirection direction, const Dataset& train, Index exclude) {
  const Vector s = point_scores(metric, x, train.features());
  const Vector& t = train.targets();
  return reg_inference(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                       std::span<const double>(t.data(), static_cast<std::size_t>(t.size())), y, k, gamma, direction,
                       exclude);
}

RegLossVariant RegLossVariant::upper_bound(double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("RegLossVariant: gamma must be > 0");
  return {Kind::UpperBound, gamma, 0.0};
}

RegLossVariant RegLossVariant::eps_insensitive(double epsilon, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("RegLossVariant: gamma must be > 0");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("RegLossVariant: epsilon must be >= 0");
  return {Kind::EpsInsensitive, gamma, epsilon};
}

RegLossVariant RegLossVariant::min_loss(double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("RegLossVariant: gamma must be > 0");
  return {Kind::MinLoss, gamma, 0.0};
}

std::optional<NeighborSet> hstar_alternate(std::span<const double> point_scores, std::span<const double> targets,
                                           double y, Index k, const RegLossVariant& variant, Index exclude,
                                           Index swap_budget) {
  check_sizes(point_scores, targets, k, exclude);
  switch (variant.kind) {
    case RegLossVariant::Kind::EpsInsensitive:
      return eps_insensitive(point_scores, targets, y, k, variant.epsilon, exclude, swap_budget);
    case RegLossVariant::Kind::MinLoss:
      return min_loss(point_scores, targets, y, k, exclude, swap_budget);
    case RegLossVariant::Kind::UpperBound:
      break;
  }
  throw std::invalid_argument("hstar_alternate: the upper-bound variant has no alternate h*");
}

std::optional<NeighborSet> hstar_alternate(const MahalanobisMetric& metric, const Vector& x, double y, Index k,
                                           const RegLossVariant& variant, const Dataset& train, Index exclude,
                                           Index swap_budget) {
  const Vector s = point_scores(metric, x, train.features());
  const Vector& t = train.targets();
  return hstar_alternate(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                         std::span<const double>(t.data(), static_cast<std::size_t>(t.size())), y, k, variant,
                         exclude, swap_budget);
}

std::vector<double> default_gamma_grid() {
  std::vector<double> grid;
  for (int e = -5; e <= 2; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

std::optional<RegSurrogate> reg_surrogate(std::span<const double> point_scores, std::span<const double> targets,
                                          double y, Index k, const RegLossVariant& variant, Index exclude,
                                          Index swap_budget) {
  const double gamma = variant.gamma;
  RegSurrogate out;
  out.h_hat = reg_inference(point_scores, targets, y, k, gamma, RegDirection::LossAugmented, exclude);
  const double hat_value = score_of(out.h_hat, point_scores) + gamma * delta_reg_ub(y, out.h_hat, targets);
  if (variant.kind == RegLossVariant::Kind::UpperBound) {
    out.h_star = reg_inference(point_scores, targets, y, k, gamma, RegDirection::Targeted, exclude);
    out.value = hat_value - (score_of(out.h_star, point_scores) - gamma * delta_reg_ub(y, out.h_star, targets));
    return out;
  }
  auto star = hstar_alternate(point_scores, targets, y, k, variant, exclude, swap_budget);
  if (!star) return std::nullopt;
  out.h_star = std::move(*star);
  out.value = hat_value - score_of(out.h_star, point_scores);
  return out;
}

MetricModel train_reg_sgd(const Dataset& train, const RegTrainConfig& config, MetricVariant variant,
                          const UpdateObserver& observer) {
  if (train.is_classed()) throw std::invalid_argument("train_reg_sgd: dataset must have real targets");
  if (!(config.C > 0.0)) throw std::invalid_argument("train_reg_sgd: C must be > 0");
  if (config.k < 1 || config.k >= train.n()) throw std::invalid_argument("train_reg_sgd: need 1 <= k < n");
  if (config.batch_size < 1) throw std::invalid_argument("train_reg_sgd: batch_size must be >= 1");

  GerryTrainConfig init;
  init.k = config.k;
  init.init = config.init;
  init.init_weights = config.init_weights;
  MetricModel model = initial_model(train, init, variant);

  const Matrix& x = train.features();
  const Vector& t = train.targets();
  const std::span<const double> targets(t.data(), static_cast<std::size_t>(t.size()));
  std::mt19937_64 rng(derive_seed(config.seed, 0x72736764ULL));
  std::vector<Index> perm(static_cast<std::size_t>(train.n()));
  std::iota(perm.begin(), perm.end(), Index{0});

  PlateauStop plateau(config.tolerance, config.patience);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double total = 0.0;
    Index used = 0;
    Index skipped = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<std::optional<RegSurrogate>> batch(stop - start);
      tbb::parallel_for(start, stop, [&](std::size_t b) {
        const Index i = perm[b];
        const Vector xi = x.row(i).transpose();
        const Vector s = variant == MetricVariant::Symmetric ? point_scores(model.symmetric, xi, x)
                                                             : point_scores(model.asymmetric, xi, x);
        batch[b - start] = reg_surrogate(std::span<const double>(s.data(), static_cast<std::size_t>(s.size())),
                                         targets, t(i), config.k, config.variant, i, config.swap_budget);
      });
      for (std::size_t b = start; b < stop; ++b) {
        const auto& terms = batch[b - start];
        if (!terms) {
          ++skipped;
          continue;
        }
        total += terms->value;
        ++used;
        ++model.updates;
        apply_sgd_step(model, x.row(perm[b]).transpose(), terms->h_hat, terms->h_star, x, config.C,
                       config.reg_weight, config.lr.at(model.updates));
        if (observer) observer(model);
      }
    }
    const double mean = used ? total / static_cast<double>(used) : 0.0;
    model.trace.push_back({epoch, mean, skipped});
    if (used == 0 || mean == 0.0) break;
    if (plateau.should_stop(mean)) break;
  }
  return model;
}

}  // namespace nnml
