#include "nnml/gerrymander.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nnml {

LossMatrix::LossMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() != values_.cols() || values_.rows() < 1) {
    throw std::invalid_argument("LossMatrix: must be square and nonempty");
  }
  for (Index r = 0; r < values_.rows(); ++r) {
    if (values_(r, r) != 0.0) throw std::invalid_argument("LossMatrix: diagonal must be zero");
    for (Index c = 0; c < values_.cols(); ++c) {
      if (!(values_(r, c) >= 0.0) || !std::isfinite(values_(r, c))) {
        throw std::invalid_argument("LossMatrix: entries must be finite and nonnegative");
      }
    }
  }
}

LossMatrix LossMatrix::zero_one(int num_classes) {
  Matrix m = Matrix::Ones(num_classes, num_classes);
  m.diagonal().setZero();
  return LossMatrix(std::move(m));
}

Vector point_scores(const MahalanobisMetric& metric, const Vector& x, const Matrix& train) {
  const Matrix diff = train.rowwise() - x.transpose();
  return -((diff * metric.w.matrix()).cwiseProduct(diff)).rowwise().sum();
}

Vector point_scores(const AsymmetricMetric& metric, const Vector& x, const Matrix& train) {
  const Vector ux = metric.u * x;
  const Matrix vx = train * metric.v.transpose();
  return -(vx.rowwise() - ux.transpose()).rowwise().squaredNorm();
}

namespace {

double sum_scores(std::span<const double> scores, const NeighborSet& h) {
  double s = 0.0;
  for (const Index j : h.indices) s += scores[static_cast<std::size_t>(j)];
  return s;
}

/// Rows in descending score order, index order on ties, `exclude` dropped.
std::vector<Index> ranked_rows(std::span<const double> scores, Index exclude) {
  std::vector<Index> order;
  order.reserve(scores.size());
  for (Index i = 0; i < static_cast<Index>(scores.size()); ++i) {
    if (i != exclude) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa > sb || (sa == sb && a < b);
  });
  return order;
}

}  // namespace

double score(const MahalanobisMetric& metric, const Vector& x, const NeighborSet& h, const Matrix& train) {
  double s = 0.0;
  for (const Index j : h.indices) {
    const Vector diff = x - train.row(j).transpose();
    s -= diff.dot(metric.w.matrix() * diff);
  }
  return s;
}

double score(const AsymmetricMetric& metric, const Vector& x, const NeighborSet& h, const Matrix& train) {
  const Vector ux = metric.u * x;
  double s = 0.0;
  for (const Index j : h.indices) s -= (ux - metric.v * train.row(j).transpose()).squaredNorm();
  return s;
}

double task_loss(int y, const NeighborSet& h, std::span<const int> labels, const LossMatrix& loss, TiePolicy policy) {
  const int num_classes = loss.num_classes();
  std::vector<int> counts(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const Index j : h.indices) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(j)])];
  const int top = *std::max_element(counts.begin(), counts.end());
  if (policy == TiePolicy::Pessimistic) {
    double worst = 0.0;
    for (int r = 1; r <= num_classes; ++r) {
      if (counts[static_cast<std::size_t>(r)] == top) worst = std::max(worst, loss(y, r));
    }
    return worst;
  }
  for (const Index j : h.indices) {
    const int label = labels[static_cast<std::size_t>(j)];
    if (counts[static_cast<std::size_t>(label)] == top) return loss(y, label);
  }
  throw std::invalid_argument("task_loss: empty neighbor set");
}

Index n_star(int num_classes, Index k, bool ties_forbidden) {
  if (num_classes < 1 || k < 1) throw std::invalid_argument("n_star: need R >= 1, k >= 1");
  const Index tau = ties_forbidden ? 1 : 0;
  const Index numer = k + tau * (num_classes - 1);
  return (numer + num_classes - 1) / num_classes;
}

std::optional<NeighborSet> targeted_inference(const InferenceProblem& problem, int target, bool ties_forbidden) {
  const Index k = problem.k;
  const Index need = n_star(problem.num_classes, k, ties_forbidden);
  const Index tau = ties_forbidden ? 1 : 0;
  const std::vector<Index> order = ranked_rows(problem.scores, problem.exclude);
  if (static_cast<Index>(order.size()) < k) return std::nullopt;

  std::vector<Index> target_rows;
  std::vector<Index> other_rows;
  for (const Index row : order) {
    (problem.labels[static_cast<std::size_t>(row)] == target ? target_rows : other_rows).push_back(row);
  }
  const Index max_target = std::min<Index>(k, static_cast<Index>(target_rows.size()));

  // For a fixed target count m the best completion takes the highest-scoring
  // other rows with at most m - tau per class, so only m needs searching.
  std::optional<NeighborSet> best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<Index> counts(static_cast<std::size_t>(problem.num_classes) + 1, 0);
  for (Index m = need; m <= max_target; ++m) {
    std::vector<Index> members(target_rows.begin(), target_rows.begin() + m);
    std::fill(counts.begin(), counts.end(), 0);
    const Index cap = m - tau;
    for (std::size_t q = 0; q < other_rows.size() && static_cast<Index>(members.size()) < k; ++q) {
      auto& c = counts[static_cast<std::size_t>(problem.labels[static_cast<std::size_t>(other_rows[q])])];
      if (c < cap) {
        ++c;
        members.push_back(other_rows[q]);
      }
    }
    if (static_cast<Index>(members.size()) < k) continue;
    double total = 0.0;
    for (const Index row : members) total += problem.scores[static_cast<std::size_t>(row)];
    if (total > best_score) {
      best_score = total;
      best = NeighborSet{std::move(members)};
    }
  }
  if (!best) return std::nullopt;
  // Nearest first, matching the rank order.
  std::vector<std::size_t> rank(problem.scores.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[static_cast<std::size_t>(order[pos])] = pos;
  std::sort(best->indices.begin(), best->indices.end(),
            [&](Index a, Index b) { return rank[static_cast<std::size_t>(a)] < rank[static_cast<std::size_t>(b)]; });
  return best;
}

std::optional<AugmentedSet> loss_augmented_inference(const InferenceProblem& problem, int y, const LossMatrix& loss) {
  std::vector<Index> available(static_cast<std::size_t>(problem.num_classes) + 1, 0);
  for (Index i = 0; i < static_cast<Index>(problem.labels.size()); ++i) {
    if (i != problem.exclude) ++available[static_cast<std::size_t>(problem.labels[static_cast<std::size_t>(i)])];
  }
  const Index need = n_star(problem.num_classes, problem.k, false);
  std::optional<AugmentedSet> best;
  for (int r = 1; r <= problem.num_classes; ++r) {
    if (available[static_cast<std::size_t>(r)] < need) continue;
    auto h = targeted_inference(problem, r, false);
    if (!h) continue;
    const double value = sum_scores(problem.scores, *h) + loss(y, r);
    if (!best || value > best->value) best = AugmentedSet{std::move(*h), r, value};
  }
  return best;
}

std::optional<SurrogateTerms> surrogate_loss(const InferenceProblem& problem, int y, const LossMatrix& loss) {
  auto h_star = targeted_inference(problem, y, true);
  if (!h_star) return std::nullopt;
  auto hat = loss_augmented_inference(problem, y, loss);
  if (!hat) return std::nullopt;
  SurrogateTerms out;
  out.value = hat->value - sum_scores(problem.scores, *h_star);
  out.h_hat = std::move(hat->h);
  out.h_star = std::move(*h_star);
  out.hat_vote = hat->vote;
  return out;
}

namespace {

InferenceProblem make_problem(const Vector& scores, const Dataset& train, Index k, Index exclude) {
  if (!train.is_classed()) throw std::invalid_argument("inference requires class labels");
  InferenceProblem p;
  p.scores = std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size()));
  p.labels = train.labels();
  p.num_classes = train.num_classes();
  p.k = k;
  p.exclude = exclude;
  return p;
}

}  // namespace

std::optional<NeighborSet> targeted_inference(const MahalanobisMetric& metric, const Vector& x, int target, Index k,
                                              bool ties_forbidden, const Dataset& train, Index exclude) {
  const Vector s = point_scores(metric, x, train.features());
  return targeted_inference(make_problem(s, train, k, exclude), target, ties_forbidden);
}

std::optional<AugmentedSet> loss_augmented_inference(const MahalanobisMetric& metric, const Vector& x, int y, Index k,
                                                     const LossMatrix& loss, const Dataset& train, Index exclude) {
  const Vector s = point_scores(metric, x, train.features());
  return loss_augmented_inference(make_problem(s, train, k, exclude), y, loss);
}

std::optional<double> surrogate_loss(const MahalanobisMetric& metric, const Vector& x, int y, Index k,
                                     const LossMatrix& loss, const Dataset& train, Index exclude) {
  const Vector s = point_scores(metric, x, train.features());
  const auto terms = surrogate_loss(make_problem(s, train, k, exclude), y, loss);
  if (!terms) return std::nullopt;
  return terms->value;
}

NeighborSet top_k(std::span<const double> scores, Index k, Index exclude) {
  std::vector<Index> order = ranked_rows(scores, exclude);
  if (static_cast<Index>(order.size()) > k) order.resize(static_cast<std::size_t>(k));
  return NeighborSet{std::move(order)};
}

SymMatrix feature_map_psi(const Vector& x, const NeighborSet& h, const Matrix& train) {
  Matrix psi = Matrix::Zero(x.size(), x.size());
  for (const Index j : h.indices) {
    const Vector diff = x - train.row(j).transpose();
    psi.noalias() -= diff * diff.transpose();
  }
  return SymMatrix(psi);
}

AsymmetricGradient asymmetric_score_gradient(const AsymmetricMetric& metric, const Vector& x, const NeighborSet& h,
                                             const Matrix& train) {
  const Vector ux = metric.u * x;
  AsymmetricGradient g{Matrix::Zero(metric.u.rows(), metric.u.cols()), Matrix::Zero(metric.v.rows(), metric.v.cols())};
  for (const Index j : h.indices) {
    const Vector xj = train.row(j).transpose();
    const Vector residual = ux - metric.v * xj;  // U x - V x_j
    g.du.noalias() -= 2.0 * residual * x.transpose();
    g.dv.noalias() += 2.0 * residual * xj.transpose();
  }
  return g;
}

AsymmetricGradient asymmetric_regularizer_gradient(const AsymmetricMetric& metric) {
  const Matrix uut = metric.u * metric.u.transpose();
  const Matrix vvt = metric.v * metric.v.transpose();
  return {2.0 * uut * metric.u + 2.0 * vvt * metric.u, 2.0 * vvt * metric.v + 2.0 * uut * metric.v};
}

double asymmetric_regularizer(const AsymmetricMetric& metric) {
  const Matrix utu = metric.u.transpose() * metric.u;
  const Matrix utv = metric.u.transpose() * metric.v;
  const Matrix vtv = metric.v.transpose() * metric.v;
  return 0.5 * (utu.squaredNorm() + 2.0 * utv.squaredNorm() + vtv.squaredNorm());
}

std::pair<Matrix, std::optional<Matrix>> MetricModel::neighbor_maps() const {
  if (variant == MetricVariant::Symmetric) return {whitening_transform(symmetric.w).matrix(), std::nullopt};
  return {asymmetric.v, asymmetric.u};
}

MetricModel initial_model(const Dataset& train, const GerryTrainConfig& config, MetricVariant variant) {
  const Index d = train.d();
  MetricModel model;
  model.variant = variant;
  model.k = config.k;
  const bool have_weights = config.init_weights.size() == d;
  if (config.init == MetricInit::DiagonalWeights && !have_weights) {
    throw std::invalid_argument("diagonal-weights init needs a weight vector of length d");
  }
  if (variant == MetricVariant::Symmetric) {
    switch (config.init) {
      case MetricInit::Zeros: model.symmetric.w = SymMatrix::zeros(d); break;
      case MetricInit::Identity: model.symmetric.w = SymMatrix::identity(d); break;
      case MetricInit::DiagonalWeights: model.symmetric.w = SymMatrix::diagonal(config.init_weights); break;
    }
  } else {
    Matrix start = Matrix::Identity(d, d);
    if (have_weights) start = config.init_weights.cwiseMax(0.0).cwiseSqrt().asDiagonal();
    model.asymmetric = AsymmetricMetric{start, start};
  }
  return model;
}

namespace {

struct SampleTerms {
  std::optional<SurrogateTerms> terms;
};

SampleTerms infer_sample(const MetricModel& model, const Dataset& train, Index i, Index k, const LossMatrix& loss) {
  const Vector x = train.features().row(i).transpose();
  const Vector s = model.variant == MetricVariant::Symmetric ? point_scores(model.symmetric, x, train.features())
                                                             : point_scores(model.asymmetric, x, train.features());
  InferenceProblem p = make_problem(s, train, k, i);
  return {surrogate_loss(p, train.labels()[static_cast<std::size_t>(i)], loss)};
}

}  // namespace

bool PlateauStop::should_stop(double epoch_mean) {
  if (epoch_mean < best_ * (1.0 - tolerance_)) {
    best_ = epoch_mean;
    stale_ = 0;
    return false;
  }
  best_ = std::min(best_, epoch_mean);
  return ++stale_ >= patience_;
}

void apply_sgd_step(MetricModel& model, const Vector& xi, const NeighborSet& h_hat, const NeighborSet& h_star,
                    const Matrix& train, double C, double reg_weight, double eta) {
  if (model.variant == MetricVariant::Symmetric) {
    const Matrix delta =
        feature_map_psi(xi, h_hat, train).matrix() - feature_map_psi(xi, h_star, train).matrix();
    const Matrix next = (1.0 - eta) * model.symmetric.w.matrix() - C * delta;
    model.symmetric.w = psd_project(SymMatrix(next));
    return;
  }
  const auto g_hat = asymmetric_score_gradient(model.asymmetric, xi, h_hat, train);
  const auto g_star = asymmetric_score_gradient(model.asymmetric, xi, h_star, train);
  const auto g_reg = asymmetric_regularizer_gradient(model.asymmetric);
  model.asymmetric.u -= eta * (C * (g_hat.du - g_star.du) + reg_weight * g_reg.du);
  model.asymmetric.v -= eta * (C * (g_hat.dv - g_star.dv) + reg_weight * g_reg.dv);
}

MetricModel train_sgd(const Dataset& train, const GerryTrainConfig& config, MetricVariant variant,
                      const UpdateObserver& observer) {
  if (!train.is_classed()) throw std::invalid_argument("train_sgd: dataset must be classed");
  if (!(config.C > 0.0)) throw std::invalid_argument("train_sgd: C must be > 0");
  if (config.k < 1) throw std::invalid_argument("train_sgd: k must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train_sgd: batch_size must be >= 1");
  const LossMatrix loss = config.loss ? *config.loss : LossMatrix::zero_one(train.num_classes());
  if (loss.num_classes() != train.num_classes()) throw std::invalid_argument("train_sgd: loss matrix size mismatch");

  MetricModel model = initial_model(train, config, variant);
  const Matrix& x = train.features();
  const Index n = train.n();
  std::mt19937_64 rng(derive_seed(config.seed, 0x736764ULL));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});

  PlateauStop plateau(config.tolerance, config.patience);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(perm.begin(), perm.end(), rng);
    double total = 0.0;
    Index used = 0;
    Index skipped = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<SampleTerms> batch(stop - start);
      tbb::parallel_for(start, stop, [&](std::size_t b) {
        batch[b - start] = infer_sample(model, train, perm[b], config.k, loss);
      });
      for (std::size_t b = start; b < stop; ++b) {
        const auto& terms = batch[b - start].terms;
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
    if (used == 0 || mean == 0.0 || plateau.should_stop(mean)) break;
  }
  return model;
}

}  // namespace nnml
