// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include "nnml/gerrymander.hpp"
#include "nnml/gradient_metrics.hpp"
#include "nnml/hamming.hpp"
#include "nnml/harness.hpp"
#include "nnml/oracle.hpp"
#include "nnml/predictors.hpp"
#include "nnml/regression_ml.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace nnml;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // <= 0: no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double median_distance(const Matrix& x) {
  const Index m = std::min<Index>(x.rows(), 400);
  std::vector<double> dist;
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) dist.push_back((x.row(i) - x.row(j)).norm());
  }
  return median(dist);
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

Matrix gaussian(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  }
  return m;
}

std::vector<Index> iota_rows(Index begin, Index end) {
  std::vector<Index> v(static_cast<std::size_t>(end - begin));
  std::iota(v.begin(), v.end(), begin);
  return v;
}

double error_rate(const Vector& pred, const Dataset& truth) {
  Index wrong = 0;
  for (Index i = 0; i < truth.n(); ++i) wrong += std::lround(pred(i)) != std::lround(truth.targets()(i));
  return static_cast<double>(wrong) / static_cast<double>(truth.n());
}

InferenceProblem problem_of(const oracle::ClassInstance& inst, const std::vector<double>& scores) {
  InferenceProblem p;
  p.scores = scores;
  p.labels = inst.labels;
  p.num_classes = inst.num_classes;
  p.k = inst.k;
  return p;
}

double set_score(const NeighborSet& h, const std::vector<double>& s) {
  double t = 0.0;
  for (const Index j : h.indices) t += s[static_cast<std::size_t>(j)];
  return t;
}

// 1. Targeted and loss-augmented inference against exhaustive enumeration.
Outcome inference_exactness() {
  std::mt19937_64 rng(101);
  const int instances = 500;
  Index checks = 0;
  Index failures = 0;
  for (int it = 0; it < instances; ++it) {
    const auto inst = oracle::random_class_instance(rng, 12, 5, 4);
    const auto s = inst.scores();
    const auto p = problem_of(inst, s);
    for (int target = 1; target <= inst.num_classes; ++target) {
      for (const bool strict : {true, false}) {
        const auto ref = oracle::brute_targeted(s, inst.labels, inst.num_classes, inst.k, target, strict);
        const auto got = targeted_inference(p, target, strict);
        ++checks;
        if (ref.has_value() != got.has_value() || (ref && !close(set_score(*got, s), *ref, 1e-9))) ++failures;
      }
    }
    const LossMatrix loss = LossMatrix::zero_one(inst.num_classes);
    const double ref = oracle::brute_loss_augmented(s, inst.labels, inst.num_classes, inst.k, inst.y, loss);
    const auto got = loss_augmented_inference(p, inst.y, loss);
    ++checks;
    if (!got || !close(got->value, ref, 1e-9)) ++failures;
  }
  return {failures == 0, fmt("%d instances, %lld comparisons, %lld mismatches", instances,
                             static_cast<long long>(checks), static_cast<long long>(failures))};
}

// 2. Surrogate is nonnegative and bounds the prediction-rule loss of argmax score.
Outcome surrogate_bound() {
  std::mt19937_64 rng(202);
  const int instances = 500;
  Index evaluated = 0;
  Index violations = 0;
  for (int it = 0; it < instances; ++it) {
    const auto inst = oracle::random_class_instance(rng, 12, 5, 4);
    const auto s = inst.scores();
    const LossMatrix loss = LossMatrix::zero_one(inst.num_classes);
    const auto terms = surrogate_loss(problem_of(inst, s), inst.y, loss);
    if (!terms) continue;  // no zero-loss set exists for this query
    ++evaluated;
    const double delta = task_loss(inst.y, top_k(s, inst.k), inst.labels, loss);
    if (terms->value < -1e-12 || terms->value < delta - 1e-12) ++violations;
  }
  return {violations == 0 && evaluated >= instances / 2,
          fmt("%lld of %d instances feasible, %lld violations", static_cast<long long>(evaluated), instances,
              static_cast<long long>(violations))};
}

// 3. n_star is necessary and tight for strict wins.
Outcome nstar_necessity() {
  int cases = 0;
  int bad = 0;
  for (int r = 2; r <= 4; ++r) {
    for (Index k = 1; k <= 7; ++k) {
      ++cases;
      if (!oracle::nstar_tight(r, k)) ++bad;
    }
  }
  return {bad == 0, fmt("%d (R, k) pairs, %d failures", cases, bad)};
}

// 4. Score gradients against central finite differences.
Outcome gradient_correctness() {
  std::mt19937_64 rng(404);
  const Index d = 4;
  const Matrix train = gaussian(rng, 10, d);
  const Vector x = gaussian(rng, d, 1).col(0);
  const NeighborSet h{{0, 3, 4, 8}};
  const Matrix a = gaussian(rng, d, d);
  const SymMatrix w(Matrix(a * a.transpose()));
  const SymMatrix psi = feature_map_psi(x, h, train);
  const double eps = 1e-5;

  double worst_sym = 0.0;
  for (int dir = 0; dir < 50; ++dir) {
    const Matrix e0 = gaussian(rng, d, d);
    const Matrix e = 0.5 * (e0 + e0.transpose());
    const double analytic = e.cwiseProduct(psi.matrix()).sum();
    const double plus = score(MahalanobisMetric{SymMatrix(Matrix(w.matrix() + eps * e))}, x, h, train);
    const double minus = score(MahalanobisMetric{SymMatrix(Matrix(w.matrix() - eps * e))}, x, h, train);
    const double fd = (plus - minus) / (2 * eps);
    worst_sym = std::max(worst_sym, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
  }

  const AsymmetricMetric m{gaussian(rng, d, d), gaussian(rng, d, d)};
  const auto g = asymmetric_score_gradient(m, x, h, train);
  double worst_asym = 0.0;
  for (int dir = 0; dir < 50; ++dir) {
    for (const bool u_side : {true, false}) {
      const Matrix e = gaussian(rng, d, d);
      AsymmetricMetric plus = m;
      AsymmetricMetric minus = m;
      (u_side ? plus.u : plus.v) += eps * e;
      (u_side ? minus.u : minus.v) -= eps * e;
      const double fd = (score(plus, x, h, train) - score(minus, x, h, train)) / (2 * eps);
      const double analytic = e.cwiseProduct(u_side ? g.du : g.dv).sum();
      worst_asym = std::max(worst_asym, std::abs(analytic - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return {worst_sym <= 1e-6 && worst_asym <= 1e-5,
          fmt("max rel. error symmetric %.2e (tol 1e-6), asymmetric %.2e (tol 1e-5)", worst_sym, worst_asym)};
}

// 5. PSD after every update over a full 20-epoch run.
Outcome psd_maintenance() {
  const Dataset ds = synth_blobs({.n = 200, .d = 5, .num_classes = 2, .seed = 5});
  GerryTrainConfig cfg;
  cfg.epochs = 20;
  cfg.patience = cfg.epochs;  // a full run: the plateau rule never fires before the epoch cap
  cfg.C = 1e-4;
  cfg.seed = 5;
  double worst = std::numeric_limits<double>::infinity();
  Index updates = 0;
  const MetricModel model = train_sgd(ds, cfg, MetricVariant::Symmetric, [&](const MetricModel& m) {
    worst = std::min(worst, sym_eig(m.symmetric.w).values.minCoeff());
    ++updates;
  });
  const bool full = model.trace.size() == 20;
  return {full && worst >= -1e-9, fmt("%zu epochs, %lld updates, min eigenvalue %.3e (tol -1e-9)",
                                      model.trace.size(), static_cast<long long>(updates), worst)};
}

// 6. Learned metric versus Euclidean on raw anisotropic blobs, C tuned on a
// 75/25 split of the training rows.
Outcome learning_works() {
  std::vector<double> euclid;
  std::vector<double> learned;
  std::vector<double> reduction;
  const std::vector<double> c_grid{1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset all = synth_blobs(
        {.n = 400, .d = 5, .num_classes = 2, .informative = 1, .informative_std = 1.0, .noise_scale = 10.0, .seed = seed});
    const Dataset train = all.subset(iota_rows(0, 200));
    const Dataset test = all.subset(iota_rows(200, 400));
    const FoldPair split = holdout(train.n(), 0.25, seed);
    const Dataset fit = train.subset(split.fit);
    const Dataset val = train.subset(split.validate);

    GerryTrainConfig cfg;
    cfg.k = 3;
    cfg.epochs = 20;
    cfg.seed = seed;
    double best_err = std::numeric_limits<double>::infinity();
    double best_c = c_grid.front();
    for (const double c : c_grid) {
      cfg.C = c;
      const MetricModel m = train_sgd(fit, cfg, MetricVariant::Symmetric);
      const double err =
          error_rate(NeighborIndex(fit, m.neighbor_maps().first).predict(val.features(), NeighborRule::knn(3)), val);
      if (err < best_err) {
        best_err = err;
        best_c = c;
      }
    }
    cfg.C = best_c;
    const MetricModel model = train_sgd(train, cfg, MetricVariant::Symmetric);
    const double e = error_rate(NeighborIndex(train).predict(test.features(), NeighborRule::knn(3)), test);
    const double l = error_rate(
        NeighborIndex(train, model.neighbor_maps().first).predict(test.features(), NeighborRule::knn(3)), test);
    euclid.push_back(e);
    learned.push_back(l);
    reduction.push_back(e > 0 ? (e - l) / e : 0.0);
  }
  const double red = median(reduction);
  return {red >= 0.30, fmt("median test error euclidean %.3f, learned %.3f; median relative reduction %.1f%% (need >= 30%%)",
                           median(euclid), median(learned), 100 * red)};
}

// 7. Separable regression bound and exactness of its inference.
Outcome regression_bound() {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  Index violations = 0;
  for (int it = 0; it < 1000; ++it) {
    const Index n = 2 + it % 15;
    const Index k = 1 + it % std::min<Index>(n, 6);
    std::vector<double> targets(static_cast<std::size_t>(n));
    for (auto& t : targets) t = u(rng);
    std::vector<Index> idx = iota_rows(0, n);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    const NeighborSet h{idx};
    const double y = u(rng);
    if (delta_reg_ub(y, h, targets) < delta_reg(y, h, targets) - 1e-12) ++violations;
  }

  Index mismatches = 0;
  int instances = 0;
  while (instances < 200) {
    const Index n = 4 + static_cast<Index>(rng() % 17);
    const Index k = 1 + static_cast<Index>(rng() % 6);
    if (k >= n || oracle::binomial(n, k) > 100000) continue;
    ++instances;
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<double> targets(static_cast<std::size_t>(n));
    for (auto& s : scores) s = -std::abs(u(rng));
    for (auto& t : targets) t = u(rng);
    const double y = u(rng);
    const double gamma = std::pow(10.0, static_cast<double>(instances % 8) - 5.0);
    for (const auto dir : {RegDirection::Targeted, RegDirection::LossAugmented}) {
      const double sign = dir == RegDirection::Targeted ? -1.0 : 1.0;
      const NeighborSet got = reg_inference(scores, targets, y, k, gamma, dir);
      const double value = set_score(got, scores) + sign * gamma * delta_reg_ub(y, got, targets);
      if (!close(value, oracle::brute_reg(scores, targets, y, k, gamma, dir), 1e-9)) ++mismatches;
    }
  }
  return {violations == 0 && mismatches == 0,
          fmt("1000 bound draws, %lld violations; %d exhaustive instances x 2 directions, %lld mismatches",
              static_cast<long long>(violations), instances, static_cast<long long>(mismatches))};
}

// 8. Oracle EGOP of a linear function.
Outcome egop_linear() {
  std::mt19937_64 rng(808);
  const Index d = 6;
  const Vector a = gaussian(rng, d, 1).col(0);
  const Matrix x = gaussian(rng, 500, d);
  const auto est = estimate_egop(x, [&](const Vector& v) { return a.dot(v); }, 0.1);
  const double err = (est.g.matrix() - a * a.transpose()).cwiseAbs().maxCoeff();
  return {err <= 1e-8, fmt("max-entry error %.2e (tol 1e-8)", err)};
}

ExperimentConfig base_config(Task task, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.task = task;
  cfg.seed = seed;
  cfg.rule = task == Task::Regress ? RuleKind::Radius : RuleKind::Knn;
  return cfg;
}

struct Normalized {
  Dataset train;
  Dataset test;
};

Normalized prepare(const ExperimentConfig& cfg) {
  const TrainTest tt = load_data(cfg);
  auto [stats, sets] = zscore_fit_apply(tt.train, {tt.test});
  return {sets[0], sets[1]};
}

// 9. hNN regression with EGOP, GW and Euclidean metrics, with and without rotation.
Outcome rotation_behavior() {
  std::vector<double> egop_unrot, egop_rot, euc_unrot, euc_rot, gw_unrot, gw_rot;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const bool rotate : {false, true}) {
      ExperimentConfig cfg = base_config(Task::Regress, seed);
      cfg.data.kind = DataSourceConfig::Kind::SynthSin;
      cfg.data.synth = {.n = 1000, .d = 20, .c1 = 50.0, .decay = 0.6, .rotate = rotate, .noise_std = 0.1, .seed = seed};
      cfg.data.n_test = 500;
      const Normalized data = prepare(cfg);
      const double e = run_method(Method::Euclidean, data.train, data.test, cfg).test.value;
      const double g = run_method(Method::Gw, data.train, data.test, cfg).test.value;
      const double o = run_method(Method::Egop, data.train, data.test, cfg).test.value;
      (rotate ? euc_rot : euc_unrot).push_back(e);
      (rotate ? gw_rot : gw_unrot).push_back(g);
      (rotate ? egop_rot : egop_unrot).push_back(o);
    }
  }
  const double eu = median(euc_unrot), er = median(euc_rot);
  const double ou = median(egop_unrot), orr = median(egop_rot);
  const double gu = median(gw_unrot), gr = median(gw_rot);
  std::vector<double> egop_gap, gw_gap;
  for (std::size_t i = 0; i < 5; ++i) {
    egop_gap.push_back(egop_rot[i] - egop_unrot[i]);
    gw_gap.push_back(gw_rot[i] - gw_unrot[i]);
  }
  const double og = median(egop_gap), gg = median(gw_gap);
  const bool pass = ou < eu && orr < er && og < gg;
  return {pass, fmt("median nMSE unrotated: euclidean %.3f gw %.3f egop %.3f; rotated: euclidean %.3f gw %.3f egop "
                    "%.3f; rotation gap egop %.3f vs gw %.3f",
                    eu, gu, ou, er, gr, orr, og, gg)};
}

// 10. Single-index subspace recovery.
Outcome subspace_recovery() {
  std::vector<double> angles;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(derive_seed(seed, 10));
    const Index d = 10;
    const Index n = 2000;
    const Vector v = gaussian(rng, d, 1).col(0).normalized();
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Matrix x(n, d);
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i < n; ++i) x(i, j) = u(rng);
    }
    Vector y(n);
    for (Index i = 0; i < n; ++i) y(i) = std::sin(5.0 * x.row(i).dot(v));
    EstimatorConfig ec;
    // Scale-free choice as in the harness grid: bandwidth a fraction of the
    // median pairwise distance, t a fraction of the bandwidth.
    ec.kernel.bandwidth = 0.4 * median_distance(x);
    ec.t = 0.1 * ec.kernel.bandwidth;
    const auto est = estimate_egop(Dataset::regression(x, y), ec);
    const double c = std::min(1.0, std::abs(est.eig.vectors.col(0).dot(v)));
    angles.push_back(std::acos(c) * 180.0 / std::acos(-1.0));
  }
  const double a = median(angles);
  return {a < 15.0, fmt("median angle %.2f deg (need < 15)", a)};
}

// 11. kNN with the EJOP metric on 3-class blobs with 8 noise coordinates.
Outcome ejop_classification() {
  std::vector<double> ejop, euc;
  double worst_eig = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = base_config(Task::Classify, seed);
    cfg.data.kind = DataSourceConfig::Kind::Blobs;
    cfg.data.blobs = {.n = 300, .d = 10, .num_classes = 3, .informative = 2, .seed = seed};
    cfg.data.n_test = 300;
    const Normalized data = prepare(cfg);
    euc.push_back(run_method(Method::Euclidean, data.train, data.test, cfg).test.value);
    const MethodOutcome o = run_method(Method::Ejop, data.train, data.test, cfg);
    ejop.push_back(o.test.value);
    const double med = median_distance(data.train.features());
    for (const double frac : cfg.grid.bandwidth) {
      EstimatorConfig ec;
      ec.kernel.bandwidth = frac * med;
      ec.t = cfg.grid.t.front() * ec.kernel.bandwidth;
      worst_eig = std::min(worst_eig, estimate_ejop(data.train, ec).eig.values.minCoeff());
    }
  }
  const double me = median(ejop), mu = median(euc);
  return {me <= mu && worst_eig >= -1e-9,
          fmt("median test error euclidean %.3f, ejop %.3f; min EJOP eigenvalue %.2e", mu, me, worst_eig)};
}

// 12. Hamming score identity; trained hasher versus its random initialization.
Outcome hamming_learning() {
  std::mt19937_64 rng(1212);
  Index identity_failures = 0;
  for (int draw = 0; draw < 100; ++draw) {
    const Index d = 3 + draw % 5;
    const Index c = 4 + draw % 9;
    const Matrix train = gaussian(rng, 12, d);
    const HammingHasher hh = random_hasher(d, c, HashMode::Asymmetric, Relaxation::Tanh, static_cast<std::uint64_t>(draw));
    const Vector x = gaussian(rng, d, 1).col(0);
    std::vector<Index> members = iota_rows(0, 12);
    std::shuffle(members.begin(), members.end(), rng);
    members.resize(static_cast<std::size_t>(1 + draw % 6));
    const NeighborSet h{members};
    const BinaryCode q = binarize(hh.u, x);
    double expected = 0.0;
    for (const Index j : members) {
      expected += static_cast<double>(c - 2 * hamming_distance(q, binarize(hh.v, train.row(j).transpose())));
    }
    if (hamming_score(hh, x, h, train) != expected) ++identity_failures;
  }

  std::vector<double> trained_err, random_err;
  const std::vector<double> c_grid{1e-3, 1e-2, 1e-1, 1.0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = base_config(Task::Classify, seed);
    cfg.data.kind = DataSourceConfig::Kind::Blobs;
    cfg.data.blobs = {.n = 300, .d = 10, .num_classes = 2, .informative = 2, .seed = seed};
    cfg.data.n_test = 300;
    const Normalized data = prepare(cfg);
    const FoldPair split = holdout(data.train.n(), 0.25, seed);
    const Dataset fit = data.train.subset(split.fit);
    const Dataset val = data.train.subset(split.validate);

    HammingTrainConfig hc;
    hc.k = 3;
    hc.code_length = 8;
    hc.seed = seed;
    double best_err = std::numeric_limits<double>::infinity();
    double best_c = c_grid.front();
    for (const double c : c_grid) {
      hc.C = c;
      const HammingModel m = train_hamming(fit, hc, HashMode::Asymmetric);
      const double err = error_rate(HammingRetriever(fit, m.hasher).predict(val.features(), 3), val);
      if (err < best_err) {
        best_err = err;
        best_c = c;
      }
    }
    hc.C = best_c;
    const HammingModel model = train_hamming(data.train, hc, HashMode::Asymmetric);
    trained_err.push_back(error_rate(HammingRetriever(data.train, model.hasher).predict(data.test.features(), 3), data.test));
    const HammingHasher baseline = random_hasher(data.train.d(), 8, HashMode::Asymmetric, Relaxation::Tanh, seed);
    random_err.push_back(error_rate(HammingRetriever(data.train, baseline).predict(data.test.features(), 3), data.test));
  }
  const double mt = median(trained_err), mr = median(random_err);
  return {identity_failures == 0 && mt < mr,
          fmt("identity failures %lld/100; median test error trained %.3f vs random %.3f",
              static_cast<long long>(identity_failures), mt, mr)};
}

// 13. Two identical runs give byte-identical results.csv.
Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "nnml_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto write_config = [&](const std::string& name) {
    std::ofstream out(dir / (name + ".ini"));
    out << "[experiment]\ntask = classify\nmethods = euclidean, ejop, gerry_sym, hamming\nseed = 13\noutput = "
        << (dir / name).string() << "\n[data]\nsource = blobs\nn = 150\nn_test = 100\nd = 4\nclasses = 3\n"
        << "[grid]\nk = 1, 3\nC = 0.01, 1\n[train]\nepochs = 5\n";
  };
  write_config("a");
  write_config("b");
  std::ostringstream log;
  const int ca = cmd_run(dir / "a.ini", {}, log);
  const int cb = cmd_run(dir / "b.ini", {}, log);
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(dir / "a" / "results.csv");
  const std::string b = slurp(dir / "b" / "results.csv");
  const bool ok = ca == kExitOk && cb == kExitOk && !a.empty() && a == b;
  return {ok, fmt("exit codes %d/%d, results.csv %zu bytes, identical: %s", ca, cb, a.size(), a == b ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "inference oracle exactness", 30, inference_exactness},
      {2, "surrogate bound", 30, surrogate_bound},
      {3, "n_star necessity", 5, nstar_necessity},
      {4, "gradient correctness", 10, gradient_correctness},
      {5, "PSD maintenance", 0, psd_maintenance},
      {6, "learning works (anisotropic blobs)", 120, learning_works},
      {7, "regression bound and inference", 0, regression_bound},
      {8, "EGOP oracle linearity", 1, egop_linear},
      {9, "rotation behavior (synth_sin)", 180, rotation_behavior},
      {10, "single-index subspace recovery", 60, subspace_recovery},
      {11, "EJOP improves classification", 0, ejop_classification},
      {12, "Hamming identity and learning", 120, hamming_learning},
      {13, "reproducibility", 0, reproducibility},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.time_limit_s <= 0 || secs < c.time_limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::string limit = c.time_limit_s > 0 ? fmt(", limit %.0fs", c.time_limit_s) : std::string();
    std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
              << fmt(" (%.2fs%s)", secs, limit.c_str()) << (in_time ? "" : " TIME LIMIT EXCEEDED") << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << criteria.size() - static_cast<std::size_t>(failed) << "/"
            << criteria.size() << std::endl;
  return failed ? 1 : 0;
}
