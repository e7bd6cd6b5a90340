#include "nnml/hamming.hpp"
#include "nnml/predictors.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nnml {

namespace {

double sign_of(double z) { return z >= 0.0 ? 1.0 : -1.0; }

Vector sign_of(const Vector& z) { return z.unaryExpr([](double v) { return sign_of(v); }); }

Vector relax(const Vector& z, Relaxation r) {
  return r == Relaxation::Tanh ? Vector(z.array().tanh()) : z;
}

Vector relax_derivative(const Vector& z, Relaxation r) {
  if (r == Relaxation::Identity) return Vector::Ones(z.size());
  return (1.0 - z.array().tanh().square()).matrix();
}

void normalize_frobenius(Matrix& m) {
  const double norm = m.norm();
  if (norm > 0.0) m /= norm;
}

}  // namespace

BinaryCode binarize(const Matrix& m, const Vector& x) { return {sign_of(Vector(m * x))}; }

Matrix binarize_rows(const Matrix& m, const Matrix& x) {
  return (x * m.transpose()).unaryExpr([](double v) { return sign_of(v); });
}

Index hamming_distance(const BinaryCode& a, const BinaryCode& b) {
  return static_cast<Index>((a.bits.array() != b.bits.array()).count());
}

double hamming_score(const HammingHasher& hasher, const Vector& x, const NeighborSet& h, const Matrix& train) {
  const Vector query = binarize(hasher.u, x).bits;
  Vector sum = Vector::Zero(hasher.code_length());
  for (const Index j : h.indices) sum += binarize(hasher.v, train.row(j).transpose()).bits;
  return query.dot(sum);
}

Vector hamming_point_scores(const HammingHasher& hasher, const Vector& x, const Matrix& database_codes) {
  return database_codes * binarize(hasher.u, x).bits;
}

double asym_hamming_distance(const Vector& projection, const BinaryCode& code, const Vector& scales) {
  if (projection.size() != code.bits.size() || scales.size() != code.bits.size()) {
    throw std::invalid_argument("asym_hamming_distance: length mismatch");
  }
  const Vector relaxed = scales.cwiseProduct(projection).array().tanh().matrix();
  return 0.25 * (code.bits - relaxed).squaredNorm();
}

Vector calibrate_scales(const Matrix& train, const Matrix& u, double target) {
  const Matrix proj = train * u.transpose();
  const Index c = u.rows();
  if (proj.size() == 0 || proj.cwiseAbs().maxCoeff() == 0.0) return Vector::Ones(c);
  const auto mean_abs = [&](double alpha) { return (alpha * proj.array()).tanh().abs().mean(); };
  double lo = 0.0;
  double hi = 1.0;
  while (mean_abs(hi) < target) {
    hi *= 2.0;
    if (hi > 1e12) return Vector::Constant(c, hi);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_abs(mid) < target ? lo : hi) = mid;
  }
  return Vector::Constant(c, 0.5 * (lo + hi));
}

HammingHasher random_hasher(Index d, Index code_length, HashMode mode, Relaxation relaxation, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x68617368ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto draw = [&] {
    Matrix m(code_length, d);
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i < code_length; ++i) m(i, j) = normal(rng);
    }
    normalize_frobenius(m);
    return m;
  };
  HammingHasher h;
  h.mode = mode;
  h.relaxation = relaxation;
  h.u = draw();
  h.v = mode == HashMode::Symmetric ? h.u : draw();
  return h;
}

HammingGradient hamming_batch_gradient(const HammingHasher& hasher, const Matrix& train, std::span<const Index> batch,
                                       std::span<const NeighborSet> h_hat, std::span<const NeighborSet> h_star,
                                       double C, double zero_mean_weight) {
  const Index c = hasher.code_length();
  const Index d = hasher.u.cols();
  const Relaxation r = hasher.relaxation;
  Matrix du = Matrix::Zero(c, d);
  Matrix dv = Matrix::Zero(c, d);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Vector xi = train.row(batch[b]).transpose();
    const Vector qi = hasher.u * xi;
    const Vector query_sign = sign_of(qi);
    Vector code_diff = Vector::Zero(c);
    for (const Index j : h_hat[b].indices) code_diff += sign_of(Vector(hasher.v * train.row(j).transpose()));
    for (const Index j : h_star[b].indices) code_diff -= sign_of(Vector(hasher.v * train.row(j).transpose()));
    du.noalias() += C * relax_derivative(qi, r).cwiseProduct(code_diff) * xi.transpose();

    const auto add_db = [&](const NeighborSet& h, double sgn) {
      for (const Index j : h.indices) {
        const Vector xj = train.row(j).transpose();
        const Vector pj = hasher.v * xj;
        dv.noalias() += (sgn * C) * query_sign.cwiseProduct(relax_derivative(pj, r)) * xj.transpose();
      }
    };
    add_db(h_hat[b], 1.0);
    add_db(h_star[b], -1.0);
  }

  if (zero_mean_weight != 0.0 && !batch.empty()) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    const auto penalty_grad = [&](const Matrix& m) {
      Vector mean = Vector::Zero(c);
      for (const Index i : batch) mean += relax(Vector(m * train.row(i).transpose()), r);
      mean *= inv;
      Matrix g = Matrix::Zero(c, d);
      for (const Index i : batch) {
        const Vector xi = train.row(i).transpose();
        g.noalias() += mean.cwiseProduct(relax_derivative(Vector(m * xi), r)) * xi.transpose();
      }
      return Matrix(g * (inv * zero_mean_weight));
    };
    du += penalty_grad(hasher.u);
    if (hasher.mode == HashMode::Asymmetric) dv += penalty_grad(hasher.v);
  }

  if (hasher.mode == HashMode::Symmetric) return {du + dv, Matrix()};
  return {du, dv};
}

namespace {

struct HammingSample {
  std::optional<SurrogateTerms> terms;
};

}  // namespace

HammingModel train_hamming(const Dataset& train, const HammingTrainConfig& config, HashMode mode,
                           const HammingObserver& observer) {
  if (!train.is_classed()) throw std::invalid_argument("train_hamming: dataset must be classed");
  if (config.code_length < 1 || config.k < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train_hamming: code_length, k, batch_size must be >= 1");
  }
  const LossMatrix loss = config.loss ? *config.loss : LossMatrix::zero_one(train.num_classes());
  const Matrix& x = train.features();
  const Index n = train.n();

  HammingModel model;
  model.hasher = random_hasher(train.d(), config.code_length, mode, config.relaxation, config.seed);
  Matrix momentum_u = Matrix::Zero(model.hasher.u.rows(), model.hasher.u.cols());
  Matrix momentum_v = momentum_u;

  std::mt19937_64 rng(derive_seed(config.seed, 0x68736764ULL));
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
      const Matrix codes = binarize_rows(model.hasher.v, x);
      std::vector<HammingSample> samples(stop - start);
      tbb::parallel_for(start, stop, [&](std::size_t b) {
        const Index i = perm[b];
        const Vector scores = hamming_point_scores(model.hasher, x.row(i).transpose(), codes);
        InferenceProblem p;
        p.scores = std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size()));
        p.labels = train.labels();
        p.num_classes = train.num_classes();
        p.k = config.k;
        p.exclude = i;
        samples[b - start].terms = surrogate_loss(p, train.labels()[static_cast<std::size_t>(i)], loss);
      });

      std::vector<Index> batch;
      std::vector<NeighborSet> hats;
      std::vector<NeighborSet> stars;
      for (std::size_t b = start; b < stop; ++b) {
        auto& t = samples[b - start].terms;
        if (!t) {
          ++skipped;
          continue;
        }
        total += t->value;
        ++used;
        batch.push_back(perm[b]);
        hats.push_back(std::move(t->h_hat));
        stars.push_back(std::move(t->h_star));
      }
      if (batch.empty()) continue;

      const auto grad =
          hamming_batch_gradient(model.hasher, x, batch, hats, stars, config.C, config.zero_mean_weight);
      ++model.steps;
      const double eta = config.lr / static_cast<double>(model.steps);
      momentum_u = config.momentum * momentum_u + grad.du;
      model.hasher.u -= eta * momentum_u;
      normalize_frobenius(model.hasher.u);
      if (mode == HashMode::Symmetric) {
        model.hasher.v = model.hasher.u;
      } else {
        momentum_v = config.momentum * momentum_v + grad.dv;
        model.hasher.v -= eta * momentum_v;
        normalize_frobenius(model.hasher.v);
      }
      if (observer) observer(model);
    }
    const double mean = used ? total / static_cast<double>(used) : 0.0;
    model.trace.push_back({epoch, mean, skipped});
    if (used == 0 || mean == 0.0) break;
    if (plateau.should_stop(mean)) break;
  }
  return model;
}

HammingRetriever::HammingRetriever(const Dataset& database, HammingHasher hasher, Vector scales)
    : database_(database), hasher_(std::move(hasher)), scales_(std::move(scales)) {
  codes_ = binarize_rows(hasher_.v, database_.features());
}

HammingRetriever::HammingRetriever(const Dataset& database, HammingHasher hasher)
    : HammingRetriever(database, hasher, calibrate_scales(database.features(), hasher.u)) {}

std::vector<Index> HammingRetriever::neighbors(const Vector& query, Index k) const {
  const Vector relaxed = scales_.cwiseProduct(hasher_.u * query).array().tanh().matrix();
  // 4 * AsymH(code_j) = c + ||relaxed||^2 - 2 <code_j, relaxed>
  const Vector affinity = codes_ * relaxed;
  std::vector<Index> order(static_cast<std::size_t>(codes_.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](Index a, Index b) { return affinity(a) > affinity(b) || (affinity(a) == affinity(b) && a < b); });
  order.resize(keep);
  return order;
}

int HammingRetriever::classify(const Vector& query, Index k) const {
  return majority_vote(neighbors(query, k), database_.labels(), database_.num_classes());
}

Vector HammingRetriever::predict(const Matrix& queries, Index k) const {
  Vector out(queries.rows());
  tbb::parallel_for(Index{0}, queries.rows(),
                    [&](Index i) { out(i) = classify(queries.row(i).transpose(), k); });
  return out;
}

}  // namespace nnml
