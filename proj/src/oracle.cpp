#include "nnml/oracle.hpp"
#include "nnml/hamming.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace nnml::oracle {

namespace {

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json vector_json(const Vector& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

std::vector<Index> vote_counts(const std::vector<Index>& members, const std::vector<int>& labels, int num_classes) {
  std::vector<Index> counts(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const Index m : members) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(m)])];
  return counts;
}

double subset_score(const std::vector<Index>& members, const std::vector<double>& scores) {
  double s = 0.0;
  for (const Index m : members) s += scores[static_cast<std::size_t>(m)];
  return s;
}

bool close(double a, double b, double tol = 1e-9) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

Matrix gaussian(std::mt19937_64& rng, Index rows, Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

Index uniform_index(std::mt19937_64& rng, Index lo, Index hi) {
  return std::uniform_int_distribution<Index>(lo, hi)(rng);
}

struct Recorder {
  SuiteResult result;

  void fail(const std::string& what, nlohmann::json instance) {
    if (result.failures++ == 0) {
      result.message = what;
      result.failing_instance = std::move(instance);
    }
  }
};

bool valid_set(const NeighborSet& h, Index n, Index k, Index exclude) {
  if (h.size() != k) return false;
  std::vector<Index> sorted = h.indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return false;
  return std::all_of(sorted.begin(), sorted.end(), [&](Index i) { return i >= 0 && i < n && i != exclude; });
}

InferenceProblem problem_of(const std::vector<double>& scores, const ClassInstance& inst, Index exclude) {
  InferenceProblem p;
  p.scores = scores;
  p.labels = inst.labels;
  p.num_classes = inst.num_classes;
  p.k = inst.k;
  p.exclude = exclude;
  return p;
}

SuiteResult suite_inference(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  const LossMatrix loss01 = LossMatrix::zero_one(4);
  for (Index it = 0; it < budget; ++it) {
    const ClassInstance inst = random_class_instance(rng);
    const auto scores = inst.scores();
    const Index n = inst.x.rows();
    const Index exclude = (it % 2 == 1) ? uniform_index(rng, 0, n - 1) : -1;
    const InferenceProblem p = problem_of(scores, inst, exclude);
    nlohmann::json record = inst.to_json();
    record["exclude"] = exclude;
    ++rec.result.instances;

    for (int target = 1; target <= inst.num_classes; ++target) {
      for (const bool strict : {true, false}) {
        const auto fast = targeted_inference(p, target, strict);
        const auto ref = brute_targeted(scores, inst.labels, inst.num_classes, inst.k, target, strict, exclude);
        std::ostringstream what;
        what << "targeted(target=" << target << ", ties_forbidden=" << strict << ")";
        if (fast.has_value() != ref.has_value()) {
          rec.fail(what.str() + ": feasibility disagrees with brute force", record);
          continue;
        }
        if (!fast) continue;
        const auto counts = vote_counts(fast->indices, inst.labels, inst.num_classes);
        bool wins = true;
        for (int r = 1; r <= inst.num_classes; ++r) {
          if (r == target) continue;
          const Index mine = counts[static_cast<std::size_t>(target)];
          const Index theirs = counts[static_cast<std::size_t>(r)];
          if (strict ? theirs >= mine : theirs > mine) wins = false;
        }
        if (!valid_set(*fast, n, inst.k, exclude) || !wins) {
          rec.fail(what.str() + ": returned set is not a valid winning set", record);
        } else if (!close(subset_score(fast->indices, scores), *ref)) {
          rec.fail(what.str() + ": score differs from brute-force optimum", record);
        }
      }
    }

    // Random loss matrices alongside 0/1.
    Matrix values = Matrix::Zero(inst.num_classes, inst.num_classes);
    std::uniform_real_distribution<double> unit(0.1, 2.0);
    for (int a = 0; a < inst.num_classes; ++a) {
      for (int b = 0; b < inst.num_classes; ++b) values(a, b) = a == b ? 0.0 : unit(rng);
    }
    const LossMatrix random_loss(values);
    const LossMatrix zero_one = LossMatrix(loss01.values().topLeftCorner(inst.num_classes, inst.num_classes));
    for (const LossMatrix* loss : {&zero_one, &random_loss}) {
      const auto fast = loss_augmented_inference(p, inst.y, *loss);
      const double ref = brute_loss_augmented(scores, inst.labels, inst.num_classes, inst.k, inst.y, *loss, exclude);
      if (!fast || !valid_set(fast->h, n, inst.k, exclude)) {
        rec.fail("loss_augmented: no valid set returned", record);
      } else if (!close(fast->value, ref)) {
        rec.fail("loss_augmented: value differs from brute-force optimum", record);
      }
    }
  }
  return rec.result;
}

SuiteResult suite_surrogate(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  for (Index attempts = 0; rec.result.instances < budget && attempts < 50 * budget; ++attempts) {
    const ClassInstance inst = random_class_instance(rng);
    const auto scores = inst.scores();
    const InferenceProblem p = problem_of(scores, inst, -1);
    const LossMatrix loss = LossMatrix::zero_one(inst.num_classes);
    const auto terms = surrogate_loss(p, inst.y, loss);
    if (!terms) continue;  // no zero-loss set exists for this label
    ++rec.result.instances;
    const NeighborSet best = top_k(scores, inst.k);
    const double realized = task_loss(inst.y, best, inst.labels, loss, TiePolicy::NearestNeighbor);
    if (terms->value < -1e-12) {
      rec.fail("surrogate is negative", inst.to_json());
    } else if (terms->value < realized - 1e-12) {
      rec.fail("surrogate is below the loss of the top-scoring set", inst.to_json());
    }
  }
  return rec.result;
}

SuiteResult suite_nstar() {
  Recorder rec;
  for (int r = 2; r <= 4; ++r) {
    for (Index k = 1; k <= 7; ++k) {
      ++rec.result.instances;
      if (!nstar_tight(r, k)) {
        rec.fail("n_star is not the tight strict-win threshold", nlohmann::json{{"R", r}, {"k", k}});
      }
    }
  }
  return rec.result;
}

SuiteResult suite_regbound(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index it = 0; it < budget; ++it) {
    const Index n = uniform_index(rng, 1, 20);
    const Index k = uniform_index(rng, 1, n);
    std::vector<double> targets(static_cast<std::size_t>(n));
    for (auto& t : targets) t = 3.0 * normal(rng);
    const double y = 3.0 * normal(rng);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    const NeighborSet h{idx};
    ++rec.result.instances;
    const double exact = delta_reg(y, h, targets);
    const double bound = delta_reg_ub(y, h, targets);
    if (bound < exact - 1e-12 * std::max(1.0, exact)) {
      rec.fail("upper bound below exact loss", nlohmann::json{{"targets", targets}, {"y", y}, {"h", idx}});
    }
  }
  return rec.result;
}

SuiteResult suite_reginference(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index it = 0; it < budget; ++it) {
    Index n = 0;
    Index k = 0;
    do {
      n = uniform_index(rng, 2, 16);
      k = uniform_index(rng, 1, std::min<Index>(6, n - 1));
    } while (binomial(n, k) > 100000);
    std::vector<double> scores(static_cast<std::size_t>(n));
    std::vector<double> targets(static_cast<std::size_t>(n));
    for (auto& s : scores) s = -std::abs(4.0 * normal(rng));
    for (auto& t : targets) t = 2.0 * normal(rng);
    const double y = 2.0 * normal(rng);
    const double gamma = std::pow(10.0, std::uniform_real_distribution<double>(-3.0, 2.0)(rng));
    const Index exclude = (it % 2 == 1) ? uniform_index(rng, 0, n - 1) : -1;
    ++rec.result.instances;
    for (const RegDirection dir : {RegDirection::Targeted, RegDirection::LossAugmented}) {
      const NeighborSet h = reg_inference(scores, targets, y, k, gamma, dir, exclude);
      const double sign = dir == RegDirection::Targeted ? -1.0 : 1.0;
      const double value = subset_score(h.indices, scores) + sign * gamma * delta_reg_ub(y, h, targets);
      const double ref = brute_reg(scores, targets, y, k, gamma, dir, exclude);
      if (!valid_set(h, n, k, exclude) || !close(value, ref)) {
        rec.fail(std::string("reg_inference ") + (sign < 0 ? "targeted" : "loss-augmented") +
                     " differs from brute-force optimum",
                 nlohmann::json{{"scores", scores}, {"targets", targets}, {"y", y}, {"k", k}, {"gamma", gamma},
                                {"exclude", exclude}});
      }
    }
  }
  return rec.result;
}

SuiteResult suite_psd(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  for (Index it = 0; it < budget; ++it) {
    const Index d = uniform_index(rng, 1, 8);
    const Matrix a = gaussian(rng, d, d);
    const SymMatrix sym(Matrix(a + a.transpose()));
    ++rec.result.instances;
    const nlohmann::json record{{"matrix", matrix_json(sym.matrix())}};
    const EigenDecomp eig = sym_eig(sym);
    const Matrix rebuilt = eig.vectors * eig.values.asDiagonal() * eig.vectors.transpose();
    const double scale = std::max(1.0, sym.matrix().norm());
    if ((rebuilt - sym.matrix()).norm() > 1e-9 * scale) {
      rec.fail("eigendecomposition does not reconstruct the input", record);
      continue;
    }
    const SymMatrix proj = psd_project(sym);
    const double min_eig = sym_eig(proj).values.minCoeff();
    if (min_eig < -1e-9 * scale) rec.fail("projection has a negative eigenvalue", record);
    if ((psd_project(proj).matrix() - proj.matrix()).norm() > 1e-9 * scale) {
      rec.fail("projection is not idempotent", record);
    }
  }
  return rec.result;
}

SuiteResult suite_hamming(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  for (Index it = 0; it < budget; ++it) {
    const Index d = uniform_index(rng, 1, 6);
    const Index c = uniform_index(rng, 1, 16);
    const Index n = uniform_index(rng, 2, 12);
    const Index k = uniform_index(rng, 1, n);
    const HashMode mode = it % 2 ? HashMode::Symmetric : HashMode::Asymmetric;
    const HammingHasher hasher = random_hasher(d, c, mode, Relaxation::Tanh, rng());
    const Matrix x = gaussian(rng, n, d);
    const Vector q = gaussian(rng, d, 1);
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    const NeighborSet h{idx};
    ++rec.result.instances;
    const BinaryCode query = binarize(hasher.u, q);
    double expected = 0.0;
    for (const Index j : idx) {
      expected += static_cast<double>(c - 2 * hamming_distance(query, binarize(hasher.v, x.row(j).transpose())));
    }
    if (hamming_score(hasher, q, h, x) != expected) {
      rec.fail("Hamming score differs from sum of (c - 2 D)",
               nlohmann::json{{"u", matrix_json(hasher.u)}, {"v", matrix_json(hasher.v)}, {"x", matrix_json(x)},
                              {"query", vector_json(q)}, {"h", idx}});
    }
  }
  return rec.result;
}

SuiteResult suite_gradient(Index budget, std::uint64_t seed) {
  Recorder rec;
  std::mt19937_64 rng(seed);
  for (Index it = 0; it < budget; ++it) {
    const Index d = uniform_index(rng, 1, 6);
    const Index n = uniform_index(rng, 2, 10);
    const Index k = uniform_index(rng, 1, n);
    const Matrix x = gaussian(rng, n, d);
    const Vector q = gaussian(rng, d, 1);
    const Matrix a = gaussian(rng, d, d);
    const MahalanobisMetric w{SymMatrix(Matrix(a * a.transpose()))};
    const Matrix e_raw = gaussian(rng, d, d);
    const Matrix e = 0.5 * (e_raw + e_raw.transpose());
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(k));
    const NeighborSet h{idx};
    ++rec.result.instances;
    const double analytic = (e.array() * feature_map_psi(q, h, x).matrix().array()).sum();
    const double step = 1e-4;
    const double up = score(MahalanobisMetric{SymMatrix(Matrix(w.w.matrix() + step * e))}, q, h, x);
    const double down = score(MahalanobisMetric{SymMatrix(Matrix(w.w.matrix() - step * e))}, q, h, x);
    const double numeric = (up - down) / (2.0 * step);
    if (std::abs(analytic - numeric) > 1e-6 * std::max(1.0, std::abs(analytic))) {
      rec.fail("<E, Psi> differs from finite difference of the score",
               nlohmann::json{{"x", matrix_json(x)}, {"query", vector_json(q)}, {"w", matrix_json(w.w.matrix())},
                              {"e", matrix_json(e)}, {"k", k}});
    }
  }
  return rec.result;
}

}  // namespace

void for_each_subset(Index n, Index k, Index exclude, const std::function<void(const std::vector<Index>&)>& visit) {
  std::vector<Index> pool;
  for (Index i = 0; i < n; ++i) {
    if (i != exclude) pool.push_back(i);
  }
  const Index m = static_cast<Index>(pool.size());
  if (k < 0 || k > m) return;
  std::vector<Index> pos(static_cast<std::size_t>(k));
  std::iota(pos.begin(), pos.end(), Index{0});
  std::vector<Index> subset(static_cast<std::size_t>(k));
  while (true) {
    for (Index i = 0; i < k; ++i) subset[static_cast<std::size_t>(i)] = pool[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
    visit(subset);
    Index i = k - 1;
    while (i >= 0 && pos[static_cast<std::size_t>(i)] == m - k + i) --i;
    if (i < 0) return;
    ++pos[static_cast<std::size_t>(i)];
    for (Index j = i + 1; j < k; ++j) pos[static_cast<std::size_t>(j)] = pos[static_cast<std::size_t>(j - 1)] + 1;
  }
}

std::int64_t binomial(Index n, Index k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::int64_t out = 1;
  for (Index i = 1; i <= k; ++i) {
    const std::int64_t num = static_cast<std::int64_t>(n - k + i);
    if (out > std::numeric_limits<std::int64_t>::max() / num) return std::numeric_limits<std::int64_t>::max();
    out = out * num / static_cast<std::int64_t>(i);
  }
  return out;
}

std::optional<double> brute_targeted(const std::vector<double>& scores, const std::vector<int>& labels, int num_classes,
                                     Index k, int target, bool ties_forbidden, Index exclude) {
  std::optional<double> best;
  for_each_subset(static_cast<Index>(scores.size()), k, exclude, [&](const std::vector<Index>& h) {
    const auto counts = vote_counts(h, labels, num_classes);
    const Index mine = counts[static_cast<std::size_t>(target)];
    for (int r = 1; r <= num_classes; ++r) {
      if (r == target) continue;
      const Index theirs = counts[static_cast<std::size_t>(r)];
      if (ties_forbidden ? theirs >= mine : theirs > mine) return;
    }
    const double s = subset_score(h, scores);
    if (!best || s > *best) best = s;
  });
  return best;
}

double brute_loss_augmented(const std::vector<double>& scores, const std::vector<int>& labels, int num_classes,
                            Index k, int y, const LossMatrix& loss, Index exclude) {
  double best = -std::numeric_limits<double>::infinity();
  for_each_subset(static_cast<Index>(scores.size()), k, exclude, [&](const std::vector<Index>& h) {
    const auto counts = vote_counts(h, labels, num_classes);
    const Index top = *std::max_element(counts.begin() + 1, counts.end());
    double worst = 0.0;
    for (int r = 1; r <= num_classes; ++r) {
      if (counts[static_cast<std::size_t>(r)] == top) worst = std::max(worst, loss(y, r));
    }
    best = std::max(best, subset_score(h, scores) + worst);
  });
  return best;
}

double brute_reg(const std::vector<double>& scores, const std::vector<double>& targets, double y, Index k,
                 double gamma, RegDirection direction, Index exclude) {
  const double sign = direction == RegDirection::Targeted ? -1.0 : 1.0;
  double best = -std::numeric_limits<double>::infinity();
  for_each_subset(static_cast<Index>(scores.size()), k, exclude, [&](const std::vector<Index>& h) {
    double bound = 0.0;
    for (const Index i : h) bound += (y - targets[static_cast<std::size_t>(i)]) * (y - targets[static_cast<std::size_t>(i)]);
    best = std::max(best, subset_score(h, scores) + sign * gamma * bound / static_cast<double>(k));
  });
  return best;
}

double brute_min_delta(const std::vector<double>& targets, double y, Index k, Index exclude) {
  double best = std::numeric_limits<double>::infinity();
  for_each_subset(static_cast<Index>(targets.size()), k, exclude, [&](const std::vector<Index>& h) {
    double mean = 0.0;
    for (const Index i : h) mean += targets[static_cast<std::size_t>(i)];
    mean /= static_cast<double>(k);
    best = std::min(best, (y - mean) * (y - mean));
  });
  return best;
}

bool nstar_tight(int num_classes, Index k) {
  // Enumerate vote-count vectors (c_1 = target, c_2..c_R others) summing to k.
  const Index threshold = n_star(num_classes, k, true);
  bool necessary = true;
  bool attained = false;
  std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
  std::function<void(int, Index)> rec = [&](int pos, Index left) {
    if (pos == num_classes - 1) {
      counts[static_cast<std::size_t>(pos)] = left;
      const Index mine = counts[0];
      const bool strict = std::all_of(counts.begin() + 1, counts.end(), [&](Index c) { return c < mine; });
      if (strict) {
        if (mine < threshold) necessary = false;
        if (mine == threshold) attained = true;
      }
      return;
    }
    for (Index c = 0; c <= left; ++c) {
      counts[static_cast<std::size_t>(pos)] = c;
      rec(pos + 1, left - c);
    }
  };
  rec(0, k);
  return necessary && attained;
}

std::vector<double> ClassInstance::scores() const {
  const Vector s = point_scores(MahalanobisMetric{w}, query, x);
  return std::vector<double>(s.data(), s.data() + s.size());
}

nlohmann::json ClassInstance::to_json() const {
  return nlohmann::json{{"x", matrix_json(x)},     {"labels", labels},        {"num_classes", num_classes},
                        {"k", k},                  {"w", matrix_json(w.matrix())}, {"query", vector_json(query)},
                        {"y", y}};
}

ClassInstance random_class_instance(std::mt19937_64& rng, Index max_n, Index max_k, int max_classes) {
  ClassInstance inst;
  inst.num_classes = static_cast<int>(uniform_index(rng, 2, max_classes));
  inst.k = uniform_index(rng, 1, max_k);
  const Index n = uniform_index(rng, inst.k + 1, std::max(inst.k + 1, max_n));
  const Index d = uniform_index(rng, 1, 4);
  const bool integral = std::bernoulli_distribution(0.5)(rng);
  if (integral) {
    std::uniform_int_distribution<int> cell(-2, 2);
    inst.x = Matrix(n, d);
    inst.query = Vector(d);
    for (Index j = 0; j < d; ++j) {
      for (Index i = 0; i < n; ++i) inst.x(i, j) = cell(rng);
      inst.query(j) = cell(rng);
    }
    inst.w = SymMatrix::identity(d);
  } else {
    inst.x = gaussian(rng, n, d);
    inst.query = gaussian(rng, d, 1);
    const Matrix a = gaussian(rng, d, d);
    inst.w = SymMatrix(Matrix(a * a.transpose()));
  }
  inst.labels.resize(static_cast<std::size_t>(n));
  for (auto& l : inst.labels) l = static_cast<int>(uniform_index(rng, 1, inst.num_classes));
  inst.y = static_cast<int>(uniform_index(rng, 1, inst.num_classes));
  return inst;
}

std::vector<std::string> suite_names() {
  return {"inference", "surrogate", "nstar", "regbound", "reginference", "psd", "hamming", "gradient"};
}

SuiteResult run_suite(const std::string& name, Index budget, std::uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("oracle budget must be >= 1");
  SuiteResult r;
  if (name == "inference") r = suite_inference(budget, seed);
  else if (name == "surrogate") r = suite_surrogate(budget, seed);
  else if (name == "nstar") r = suite_nstar();
  else if (name == "regbound") r = suite_regbound(budget, seed);
  else if (name == "reginference") r = suite_reginference(budget, seed);
  else if (name == "psd") r = suite_psd(budget, seed);
  else if (name == "hamming") r = suite_hamming(budget, seed);
  else if (name == "gradient") r = suite_gradient(budget, seed);
  else throw UnknownSuite("unknown oracle suite '" + name + "'");
  r.suite = name;
  return r;
}

}  // namespace nnml::oracle
