#include "helpers.hpp"
#include "nnml/gerrymander.hpp"
#include "nnml/predictors.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <bit>
#include <random>

using namespace nnml;

namespace {

InferenceProblem problem_of(const std::vector<double>& scores, const std::vector<int>& labels, int r, Index k,
                            Index exclude = -1) {
  InferenceProblem p;
  p.scores = scores;
  p.labels = labels;
  p.num_classes = r;
  p.k = k;
  p.exclude = exclude;
  return p;
}

// Independent references below walk every size-k subset via a bitmask.
std::vector<int> counts_of(unsigned mask, const std::vector<int>& labels, int r) {
  std::vector<int> c(static_cast<std::size_t>(r) + 1, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (mask >> i & 1u) ++c[static_cast<std::size_t>(labels[i])];
  }
  return c;
}

double mask_score(unsigned mask, const std::vector<double>& s) {
  double t = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (mask >> i & 1u) t += s[i];
  }
  return t;
}

double brute_targeted(const std::vector<double>& s, const std::vector<int>& labels, int r, Index k, int target,
                      bool strict) {
  double best = -std::numeric_limits<double>::infinity();
  const unsigned n = static_cast<unsigned>(s.size());
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    const auto c = counts_of(mask, labels, r);
    bool ok = true;
    for (int q = 1; q <= r; ++q) {
      if (q == target) continue;
      if (strict ? c[q] >= c[target] : c[q] > c[target]) ok = false;
    }
    if (ok) best = std::max(best, mask_score(mask, s));
  }
  return best;
}

double brute_augmented(const std::vector<double>& s, const std::vector<int>& labels, int r, Index k, int y) {
  double best = -std::numeric_limits<double>::infinity();
  const unsigned n = static_cast<unsigned>(s.size());
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    const auto c = counts_of(mask, labels, r);
    const int top = *std::max_element(c.begin() + 1, c.end());
    bool wrong_leader = false;
    for (int q = 1; q <= r; ++q) wrong_leader = wrong_leader || (q != y && c[q] == top);
    best = std::max(best, mask_score(mask, s) + (wrong_leader ? 1.0 : 0.0));
  }
  return best;
}

std::vector<double> random_scores(std::mt19937_64& rng, std::size_t n, bool integer) {
  std::uniform_real_distribution<double> u(-5.0, 0.0);
  std::uniform_int_distribution<int> ui(-4, 0);
  std::vector<double> s(n);
  for (auto& v : s) v = integer ? ui(rng) : u(rng);
  return s;
}

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int r) {
  std::uniform_int_distribution<int> ul(1, r);
  std::vector<int> l(n);
  for (auto& v : l) v = ul(rng);
  return l;
}

Dataset two_blobs(std::uint64_t seed, Index n = 60, Index d = 3) {
  return synth_blobs({.n = n, .d = d, .num_classes = 2, .informative = d, .noise_scale = 1.0, .seed = seed});
}

}  // namespace

TEST_CASE("n_star") {
  CHECK(n_star(2, 3, true) == 2);
  CHECK(n_star(3, 9, false) == 3);
  CHECK(n_star(10, 7, true) == 2);
  CHECK(n_star(2, 4, false) == 2);
  CHECK(n_star(2, 4, true) == 3);
}

TEST_CASE("targeted inference on a small hand example") {
  // Class 1 rows at squared distances 1 and 4, class 2 rows at 2 and 3.
  const std::vector<double> scores{-1.0, -4.0, -2.0, -3.0};
  const std::vector<int> labels{1, 1, 2, 2};
  const auto h = targeted_inference(problem_of(scores, labels, 2, 3), 1, true);
  REQUIRE(h);
  CHECK(h->indices == std::vector<Index>{0, 2, 1});
  double total = 0;
  for (const Index j : h->indices) total += scores[static_cast<std::size_t>(j)];
  CHECK(total == -7.0);

  CHECK_FALSE(targeted_inference(problem_of(scores, labels, 2, 3, 0), 1, true));
}

TEST_CASE("targeted and loss-augmented inference match enumeration") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pick_r(2, 4);
  for (int trial = 0; trial < 300; ++trial) {
    const int r = pick_r(rng);
    const std::size_t n = 4 + static_cast<std::size_t>(trial % 8);
    const Index k = 1 + static_cast<Index>(trial % std::min<std::size_t>(5, n - 1));
    const auto s = random_scores(rng, n, trial % 2 == 0);
    const auto labels = random_labels(rng, n, r);
    const auto p = problem_of(s, labels, r, k);
    for (int target = 1; target <= r; ++target) {
      for (const bool strict : {true, false}) {
        const double ref = brute_targeted(s, labels, r, k, target, strict);
        const auto h = targeted_inference(p, target, strict);
        if (!std::isfinite(ref)) {
          CHECK_FALSE(h);
          continue;
        }
        REQUIRE(h);
        CHECK(h->size() == k);
        double total = 0;
        for (const Index j : h->indices) total += s[static_cast<std::size_t>(j)];
        CHECK(total == doctest::Approx(ref).epsilon(1e-12));
      }
    }
    const int y = labels[0];
    const auto aug = loss_augmented_inference(p, y, LossMatrix::zero_one(r));
    REQUIRE(aug);
    CHECK(aug->value == doctest::Approx(brute_augmented(s, labels, r, k, y)).epsilon(1e-12));
  }
}

TEST_CASE("task loss tie policies") {
  const std::vector<int> labels{2, 1, 1, 2};
  const NeighborSet h{{0, 1, 2, 3}};
  const LossMatrix loss = LossMatrix::zero_one(2);
  CHECK(task_loss(1, h, labels, loss) == 1.0);
  CHECK(task_loss(2, h, labels, loss) == 0.0);
  CHECK(task_loss(2, h, labels, loss, TiePolicy::Pessimistic) == 1.0);
  CHECK(task_loss(1, NeighborSet{{1, 2, 0}}, labels, loss, TiePolicy::Pessimistic) == 0.0);
}

TEST_CASE("surrogate is nonnegative and bounds the prediction loss") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int r = 2 + trial % 3;
    const std::size_t n = 6 + static_cast<std::size_t>(trial % 6);
    const Index k = 1 + trial % 4;
    const auto s = random_scores(rng, n, trial % 3 == 0);
    const auto labels = random_labels(rng, n, r);
    const int y = labels[static_cast<std::size_t>(trial) % n];
    const auto p = problem_of(s, labels, r, k);
    const auto terms = surrogate_loss(p, y, LossMatrix::zero_one(r));
    if (!terms) continue;
    CHECK(terms->value >= -1e-12);
    const NeighborSet best = top_k(s, k);
    CHECK(terms->value >= task_loss(y, best, labels, LossMatrix::zero_one(r)) - 1e-12);
  }
}

TEST_CASE("symmetric score is linear in W through Psi") {
  std::mt19937_64 rng(2);
  const Matrix train = testing::gaussian(rng, 8, 4);
  const Vector x = testing::gaussian(rng, 4, 1).col(0);
  const NeighborSet h{{1, 4, 6}};
  const SymMatrix psi = feature_map_psi(x, h, train);
  for (int rep = 0; rep < 5; ++rep) {
    const SymMatrix w(testing::random_psd(rng, 4));
    const double direct = score(MahalanobisMetric{w}, x, h, train);
    CHECK(direct == doctest::Approx((w.matrix().cwiseProduct(psi.matrix())).sum()).epsilon(1e-12));
  }
}

TEST_CASE("asymmetric score and regularizer gradients match finite differences") {
  std::mt19937_64 rng(8);
  const Matrix train = testing::gaussian(rng, 7, 3);
  const Vector x = testing::gaussian(rng, 3, 1).col(0);
  const NeighborSet h{{0, 2, 5}};
  AsymmetricMetric m{testing::gaussian(rng, 3, 3), testing::gaussian(rng, 3, 3)};
  const auto g = asymmetric_score_gradient(m, x, h, train);
  const auto rg = asymmetric_regularizer_gradient(m);
  const double eps = 1e-6;
  for (int which = 0; which < 2; ++which) {
    for (Index a = 0; a < 3; ++a) {
      for (Index b = 0; b < 3; ++b) {
        AsymmetricMetric plus = m;
        AsymmetricMetric minus = m;
        (which == 0 ? plus.u : plus.v)(a, b) += eps;
        (which == 0 ? minus.u : minus.v)(a, b) -= eps;
        const double fd = (score(plus, x, h, train) - score(minus, x, h, train)) / (2 * eps);
        const double analytic = (which == 0 ? g.du : g.dv)(a, b);
        CHECK(analytic == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
        const double rfd = (asymmetric_regularizer(plus) - asymmetric_regularizer(minus)) / (2 * eps);
        CHECK((which == 0 ? rg.du : rg.dv)(a, b) == doctest::Approx(rfd).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("symmetric training keeps W PSD and is deterministic") {
  const Dataset ds = two_blobs(4);
  GerryTrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 9;
  double worst = std::numeric_limits<double>::infinity();
  Index updates = 0;
  const MetricModel model = train_sgd(ds, cfg, MetricVariant::Symmetric, [&](const MetricModel& m) {
    worst = std::min(worst, sym_eig(m.symmetric.w).values.minCoeff());
    ++updates;
  });
  CHECK(updates > 0);
  CHECK(worst >= -1e-9);
  CHECK_FALSE(model.trace.empty());
  for (const auto& row : model.trace) CHECK(row.mean_surrogate >= 0.0);

  const MetricModel again = train_sgd(ds, cfg, MetricVariant::Symmetric);
  CHECK(again.symmetric.w.matrix() == model.symmetric.w.matrix());
  CHECK(again.trace.size() == model.trace.size());
}

TEST_CASE("trained metrics classify separable data") {
  const Dataset ds = two_blobs(6, 80, 4);
  GerryTrainConfig cfg;
  cfg.epochs = 4;
  for (const auto variant : {MetricVariant::Symmetric, MetricVariant::Asymmetric}) {
    if (variant == MetricVariant::Asymmetric) cfg.lr.base = 0.05;
    const MetricModel model = train_sgd(ds, cfg, variant);
    const auto [db, q] = model.neighbor_maps();
    const NeighborIndex idx(ds, db, q);
    Index wrong = 0;
    for (Index i = 0; i < ds.n(); ++i) {
      wrong += idx.classify(ds.features().row(i).transpose(), NeighborRule::knn(3), i) !=
               ds.labels()[static_cast<std::size_t>(i)];
    }
    CHECK(wrong <= ds.n() / 5);
  }
}

TEST_CASE("infeasible samples are skipped and counted") {
  // k = 3 with a single class-2 row: class-2 queries have no zero-loss set.
  Matrix x(5, 1);
  x << 0.0, 0.1, 0.2, 0.3, 5.0;
  const Dataset ds = Dataset::classed(x, {1, 1, 1, 1, 2}, 2);
  GerryTrainConfig cfg;
  cfg.epochs = 1;
  const MetricModel model = train_sgd(ds, cfg, MetricVariant::Symmetric);
  REQUIRE(model.trace.size() == 1);
  CHECK(model.trace[0].skipped == 1);
}

TEST_CASE("plateau stopping rule") {
  PlateauStop strict(1e-4, 1);
  CHECK_FALSE(strict.should_stop(10.0));
  CHECK_FALSE(strict.should_stop(9.0));
  CHECK(strict.should_stop(9.0));

  PlateauStop patient(1e-4, 2);
  CHECK_FALSE(patient.should_stop(10.0));
  CHECK_FALSE(patient.should_stop(11.0));
  CHECK_FALSE(patient.should_stop(8.0));
  CHECK_FALSE(patient.should_stop(8.0));
  CHECK(patient.should_stop(12.0));
}

TEST_CASE("zero epochs returns the initialization") {
  const Dataset ds = two_blobs(3);
  GerryTrainConfig cfg;
  cfg.epochs = 0;
  cfg.init = MetricInit::Identity;
  const MetricModel m = train_sgd(ds, cfg, MetricVariant::Symmetric);
  CHECK(m.symmetric.w.matrix() == Matrix::Identity(3, 3));
  CHECK(m.trace.empty());
}

TEST_CASE("learning a scaled coordinate") {
  // Classes differ only along coordinate 2, which is tiny next to coordinate 1.
  std::mt19937_64 rng(10);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto make = [&](Index n) {
    Matrix x(n, 2);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
      const int c = 1 + static_cast<int>(i % 2);
      labels[static_cast<std::size_t>(i)] = c;
      x(i, 0) = 3.0 * noise(rng);
      x(i, 1) = (c == 1 ? -0.15 : 0.15) + 0.03 * noise(rng);
    }
    return Dataset::classed(x, labels, 2);
  };
  const Dataset train = make(120);
  const Dataset test = make(200);
  GerryTrainConfig cfg;
  cfg.epochs = 20;
  cfg.C = 0.1;
  const MetricModel m = train_sgd(train, cfg, MetricVariant::Symmetric);
  REQUIRE(m.trace.size() >= 2);
  for (std::size_t e = 1; e + 1 < m.trace.size(); ++e) {
    CHECK(m.trace[e].mean_surrogate < m.trace[e - 1].mean_surrogate);
  }
  const auto error = [&](const NeighborIndex& idx) {
    const Vector p = idx.predict(test.features(), NeighborRule::knn(3));
    double wrong = 0;
    for (Index i = 0; i < test.n(); ++i) wrong += p(i) != test.targets()(i);
    return wrong / static_cast<double>(test.n());
  };
  const double learned = error(NeighborIndex(train, m.neighbor_maps().first));
  const double euclid = error(NeighborIndex(train));
  MESSAGE("learned " << learned << " euclidean " << euclid);
  CHECK(learned < euclid);
}
