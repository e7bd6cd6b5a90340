#include "helpers.hpp"
#include "nnml/predictors.hpp"
#include "nnml/regression_ml.hpp"

#include <doctest.h>

#include <algorithm>
#include <limits>
#include <bit>
#include <cmath>
#include <numeric>
#include <random>

using namespace nnml;

namespace {

double set_score(const NeighborSet& h, const std::vector<double>& s) {
  double t = 0;
  for (const Index j : h.indices) t += s[static_cast<std::size_t>(j)];
  return t;
}

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::vector<Index> sorted(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("exact and separable regression losses") {
  const std::vector<double> t{1.0, 1.0, -1.0, 2.0, 4.0};
  CHECK(delta_reg(1.0, NeighborSet{{0, 1}}, t) == 0.0);
  CHECK(delta_reg(0.0, NeighborSet{{0, 2}}, t) == 0.0);
  CHECK(delta_reg(0.0, NeighborSet{{3, 4}}, t) == 9.0);
  CHECK(delta_reg_ub(0.0, NeighborSet{{0, 2}}, t) == 1.0);

  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto targets = draw(rng, 8, -3, 3);
    const double y = draw(rng, 1, -3, 3)[0];
    std::vector<Index> idx(8);
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(1 + i % 7));
    const NeighborSet h{idx};
    CHECK(delta_reg_ub(y, h, targets) >= delta_reg(y, h, targets) - 1e-12);
  }
}

TEST_CASE("reg_inference limits in gamma") {
  std::mt19937_64 rng(2);
  const auto s = draw(rng, 12, -5, 0);
  const auto t = draw(rng, 12, -2, 2);
  const double y = 0.3;
  const Index k = 4;
  CHECK(reg_inference(s, t, y, k, 0.0, RegDirection::Targeted) == top_k(s, k));
  CHECK(reg_inference(s, t, y, k, 0.0, RegDirection::LossAugmented) == top_k(s, k));

  const NeighborSet far = reg_inference(s, t, y, k, 1e6, RegDirection::Targeted);
  std::vector<Index> by_target(12);
  std::iota(by_target.begin(), by_target.end(), Index{0});
  std::sort(by_target.begin(), by_target.end(), [&](Index a, Index b) {
    return std::abs(t[static_cast<std::size_t>(a)] - y) < std::abs(t[static_cast<std::size_t>(b)] - y);
  });
  by_target.resize(static_cast<std::size_t>(k));
  CHECK(sorted(far.indices) == sorted(by_target));
}

TEST_CASE("reg_inference is exact for the separable objective") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 5 + static_cast<std::size_t>(trial % 6);
    const Index k = 1 + trial % 4;
    const auto s = draw(rng, n, -5, 0);
    const auto t = draw(rng, n, -2, 2);
    const double y = draw(rng, 1, -2, 2)[0];
    const double gamma = std::pow(10.0, trial % 5 - 2);
    for (const auto dir : {RegDirection::Targeted, RegDirection::LossAugmented}) {
      const double sign = dir == RegDirection::Targeted ? -1.0 : 1.0;
      double best = -std::numeric_limits<double>::infinity();
      for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (std::popcount(mask) != k) continue;
        std::vector<Index> m;
        for (std::size_t i = 0; i < n; ++i) {
          if (mask >> i & 1u) m.push_back(static_cast<Index>(i));
        }
        const NeighborSet h{m};
        best = std::max(best, set_score(h, s) + sign * gamma * delta_reg_ub(y, h, t));
      }
      const NeighborSet got = reg_inference(s, t, y, k, gamma, dir);
      CHECK(set_score(got, s) + sign * gamma * delta_reg_ub(y, got, t) == doctest::Approx(best).epsilon(1e-12));
    }
  }
}

TEST_CASE("targeted loss shrinks as gamma grows") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = draw(rng, 15, -5, 0);
    const auto t = draw(rng, 15, -2, 2);
    double previous = std::numeric_limits<double>::infinity();
    for (const double gamma : default_gamma_grid()) {
      const double loss = delta_reg_ub(0.1, reg_inference(s, t, 0.1, 3, gamma, RegDirection::Targeted), t);
      CHECK(loss <= previous + 1e-12);
      previous = loss;
    }
  }
}

TEST_CASE("alternate h-star heuristics") {
  const std::vector<double> t{0.9, 1.1, 5.0, 6.0};
  const std::vector<double> s{-4.0, -3.0, -1.0, -2.0};
  const auto min_loss = hstar_alternate(s, t, 1.0, 2, RegLossVariant::min_loss(1.0));
  REQUIRE(min_loss);
  CHECK(sorted(min_loss->indices) == std::vector<Index>{0, 1});

  const auto loose = hstar_alternate(s, t, 1.0, 2, RegLossVariant::eps_insensitive(
                                                       std::numeric_limits<double>::infinity(), 1.0));
  REQUIRE(loose);
  CHECK(sorted(loose->indices) == sorted(top_k(s, 2).indices));

  const auto tight = hstar_alternate(s, t, 1.0, 2, RegLossVariant::eps_insensitive(0.01, 1.0));
  REQUIRE(tight);
  CHECK(delta_reg(1.0, *tight, t) <= 0.01);

  // Every target far above y: no set reaches epsilon.
  const std::vector<double> high{9.0, 8.0, 7.0};
  const std::vector<double> s3{-1.0, -2.0, -3.0};
  CHECK_FALSE(hstar_alternate(s3, high, 0.0, 2, RegLossVariant::eps_insensitive(0.5, 1.0)));

  CHECK_THROWS(hstar_alternate(s, t, 1.0, 2, RegLossVariant::upper_bound(1.0)));
  CHECK_THROWS(RegLossVariant::upper_bound(0.0));
  CHECK_THROWS(RegLossVariant::eps_insensitive(-1.0, 1.0));
}

TEST_CASE("regression surrogate is nonnegative and bounds the loss of the best set") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto s = draw(rng, 10, -5, 0);
    const auto t = draw(rng, 10, -2, 2);
    const double y = draw(rng, 1, -2, 2)[0];
    const double gamma = std::pow(10.0, trial % 4 - 1);
    const auto sur = reg_surrogate(s, t, y, 3, RegLossVariant::upper_bound(gamma));
    REQUIRE(sur);
    CHECK(sur->value >= -1e-12);
    CHECK(sur->value >= gamma * delta_reg(y, top_k(s, 3), t) - 1e-9);
  }
}

TEST_CASE("tiny gamma and C leave the metric almost unchanged") {
  const Dataset ds = synth_sin({.n = 80, .d = 3, .seed = 1});
  RegTrainConfig cfg;
  cfg.variant = RegLossVariant::upper_bound(1e-9);
  cfg.C = 1e-9;
  cfg.epochs = 1;
  cfg.init = MetricInit::Identity;
  cfg.lr = LearningRate{LearningRate::Schedule::Constant, 0.01};
  const MetricModel m = train_reg_sgd(ds, cfg, MetricVariant::Symmetric);
  REQUIRE(m.updates > 0);
  // With h_hat == h_star only the weight decay acts.
  const double shrink = std::pow(0.99, static_cast<double>(m.updates));
  CHECK((m.symmetric.w.matrix() - shrink * Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("training keeps W PSD") {
  const Dataset ds = synth_sin({.n = 120, .d = 4, .seed = 2});
  RegTrainConfig cfg;
  cfg.variant = RegLossVariant::upper_bound(1.0);
  cfg.epochs = 3;
  double worst = std::numeric_limits<double>::infinity();
  train_reg_sgd(ds, cfg, MetricVariant::Symmetric,
                [&](const MetricModel& m) { worst = std::min(worst, sym_eig(m.symmetric.w).values.minCoeff()); });
  CHECK(worst >= -1e-9);
}

TEST_CASE("learned metric beats Euclidean on synth_sin d=5") {
  const Dataset all = synth_sin({.n = 900, .d = 5, .seed = 3});
  std::vector<Index> tr(600), te(300);
  std::iota(tr.begin(), tr.end(), Index{0});
  std::iota(te.begin(), te.end(), Index{600});
  const Dataset train = all.subset(tr);
  const Dataset test = all.subset(te);

  RegTrainConfig cfg;
  cfg.k = 5;
  cfg.C = 1.0;
  cfg.variant = RegLossVariant::upper_bound(1.0);
  cfg.epochs = 10;
  cfg.seed = 3;
  const MetricModel model = train_reg_sgd(train, cfg, MetricVariant::Symmetric);

  const auto nmse = [&](const NeighborIndex& idx) {
    const Vector p = idx.predict(test.features(), NeighborRule::knn(5));
    const std::vector<double> pred(p.data(), p.data() + p.size());
    const std::vector<double> truth(test.targets().data(), test.targets().data() + test.n());
    return evaluate(pred, truth, Task::Regress).value;
  };
  const double learned = nmse(NeighborIndex(train, model.neighbor_maps().first));
  const double euclid = nmse(NeighborIndex(train));
  MESSAGE("learned " << learned << " euclidean " << euclid);
  CHECK(learned < euclid);
}
