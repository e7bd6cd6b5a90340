#include "nnml/predictors.hpp"

#include <json.hpp>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nnml {

NeighborRule NeighborRule::knn(Index k) {
  if (k < 1) throw std::invalid_argument("NeighborRule: k must be >= 1");
  NeighborRule r;
  r.kind = Kind::Knn;
  r.k = k;
  return r;
}

NeighborRule NeighborRule::within(double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("NeighborRule: radius must be > 0");
  NeighborRule r;
  r.kind = Kind::Radius;
  r.radius = radius;
  return r;
}

int majority_vote(std::span<const Index> members, std::span<const int> labels, int num_classes) {
  if (members.empty()) throw std::invalid_argument("majority_vote: empty neighbor set");
  std::vector<int> counts(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const Index m : members) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(m)])];
  const int top = *std::max_element(counts.begin(), counts.end());
  for (const Index m : members) {
    const int label = labels[static_cast<std::size_t>(m)];
    if (counts[static_cast<std::size_t>(label)] == top) return label;
  }
  return 0;  // unreachable: some member carries the top count
}

int global_majority(std::span<const int> labels, int num_classes) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes) + 1, 0);
  for (const int l : labels) ++counts[static_cast<std::size_t>(l)];
  int best = 1;
  for (int r = 2; r <= num_classes; ++r) {
    if (counts[static_cast<std::size_t>(r)] > counts[static_cast<std::size_t>(best)]) best = r;
  }
  return best;
}

NeighborIndex::NeighborIndex(const Dataset& train, std::optional<Matrix> database_map, std::optional<Matrix> query_map)
    : train_(train), query_map_(std::move(query_map)) {
  if (query_map_ && !database_map) throw std::invalid_argument("NeighborIndex: query map without database map");
  if (database_map) {
    if (database_map->cols() != train.d()) throw std::invalid_argument("NeighborIndex: map/feature dim mismatch");
    if (query_map_ && (query_map_->cols() != train.d() || query_map_->rows() != database_map->rows())) {
      throw std::invalid_argument("NeighborIndex: query map shape mismatch");
    }
    mapped_ = train.features() * database_map->transpose();
    if (!query_map_) query_map_ = std::move(database_map);
  } else {
    mapped_ = train.features();
  }
  global_mean_ = train.targets().mean();
  if (train.is_classed()) global_majority_ = global_majority(train.labels(), train.num_classes());
}

Vector NeighborIndex::squared_distances(const Vector& query) const {
  const Vector q = query_map_ ? Vector(*query_map_ * query) : query;
  return (mapped_.rowwise() - q.transpose()).rowwise().squaredNorm();
}

std::vector<Index> NeighborIndex::select(const Vector& query, const NeighborRule& rule, Index exclude) const {
  const Vector dist = squared_distances(query);
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(dist.size()));
  for (Index i = 0; i < dist.size(); ++i) {
    if (i == exclude) continue;
    if (rule.kind == NeighborRule::Kind::Radius && dist(i) > rule.radius * rule.radius) continue;
    order.push_back(i);
  }
  const auto closer = [&](Index a, Index b) { return dist(a) < dist(b) || (dist(a) == dist(b) && a < b); };
  if (rule.kind == NeighborRule::Kind::Knn) {
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(rule.k), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), closer);
    order.resize(keep);
  } else {
    std::sort(order.begin(), order.end(), closer);
  }
  return order;
}

int NeighborIndex::classify(const Vector& query, const NeighborRule& rule, Index exclude) const {
  if (!train_.is_classed()) throw std::logic_error("classify on regression data");
  const auto members = select(query, rule, exclude);
  if (members.empty()) return global_majority_;
  return majority_vote(members, train_.labels(), train_.num_classes());
}

double NeighborIndex::regress(const Vector& query, const NeighborRule& rule, Index exclude) const {
  const auto members = select(query, rule, exclude);
  if (members.empty()) return global_mean_;
  double s = 0.0;
  for (const Index m : members) s += train_.targets()(m);
  return s / static_cast<double>(members.size());
}

Vector NeighborIndex::predict(const Matrix& queries, const NeighborRule& rule) const {
  Vector out(queries.rows());
  tbb::parallel_for(Index{0}, queries.rows(), [&](Index i) {
    const Vector q = queries.row(i).transpose();
    out(i) = train_.is_classed() ? static_cast<double>(classify(q, rule)) : regress(q, rule);
  });
  return out;
}

double neighbor_predict(const Dataset& train, const std::optional<Matrix>& transform, const Vector& query,
                        const NeighborRule& rule, Task task) {
  const NeighborIndex index(train, transform);
  return task == Task::Classify ? static_cast<double>(index.classify(query, rule)) : index.regress(query, rule);
}

EvalReport evaluate(std::span<const double> predictions, std::span<const double> truth, Task task,
                    const Matrix* loss_matrix) {
  if (predictions.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("evaluate: predictions and truth must have equal nonzero length");
  }
  const double n = static_cast<double>(truth.size());
  EvalReport report;
  report.n_test = static_cast<Index>(truth.size());
  if (task == Task::Classify) {
    double total = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const int t = static_cast<int>(std::lround(truth[i]));
      const int p = static_cast<int>(std::lround(predictions[i]));
      if (loss_matrix) {
        total += (*loss_matrix)(t - 1, p - 1);
      } else {
        total += (t != p) ? 1.0 : 0.0;
      }
    }
    report.metric_name = loss_matrix ? "loss" : "error_rate";
    report.value = total / n;
    return report;
  }
  const double mean = std::accumulate(truth.begin(), truth.end(), 0.0) / n;
  double var = 0.0;
  double mse = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    var += (truth[i] - mean) * (truth[i] - mean);
    mse += (predictions[i] - truth[i]) * (predictions[i] - truth[i]);
  }
  if (var <= 0.0) throw std::domain_error("evaluate: test targets have zero variance, nMSE undefined");
  report.metric_name = "nmse";
  report.value = mse / var;
  return report;
}

std::string params_json(const std::map<std::string, double>& params) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : params) j[k] = v;
  return j.dump();
}

void append_eval_report(const std::filesystem::path& path, const EvalReport& report) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open report " + path.string());
  out.precision(12);
  if (fresh) out << "metric_name,value,n_test,params_json,seed\n";
  std::string params = params_json(report.hyperparams);
  // CSV-quote the JSON field
  std::string quoted = "\"";
  for (const char c : params) quoted += (c == '"') ? std::string("\"\"") : std::string(1, c);
  quoted += '"';
  out << report.metric_name << ',' << report.value << ',' << report.n_test << ',' << quoted << ',' << report.seed
      << '\n';
}

std::vector<ParamSet> expand_grid(const std::vector<std::pair<std::string, std::vector<double>>>& axes) {
  std::vector<ParamSet> grid{ParamSet{}};
  for (const auto& [name, values] : axes) {
    if (values.empty()) throw std::invalid_argument("expand_grid: axis '" + name + "' is empty");
    std::vector<ParamSet> next;
    next.reserve(grid.size() * values.size());
    for (const auto& base : grid) {
      for (const double v : values) {
        ParamSet p = base;
        p[name] = v;
        next.push_back(std::move(p));
      }
    }
    grid = std::move(next);
  }
  return grid;
}

std::vector<FoldPair> fold_pairs(const SplitSpec& split) {
  std::vector<FoldPair> out;
  for (int f = 0; f < split.n_folds; ++f) out.push_back({split.rows_outside(f), split.fold_rows(f)});
  return out;
}

FoldPair holdout(Index n, double validate_fraction, std::uint64_t seed) {
  if (!(validate_fraction > 0.0 && validate_fraction < 1.0)) {
    throw std::invalid_argument("holdout: fraction must be in (0, 1)");
  }
  const Index n_val = std::clamp<Index>(static_cast<Index>(std::lround(validate_fraction * n)), 1, n - 1);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(derive_seed(seed, 0x686f6c64ULL));
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldPair fp;
  fp.validate.assign(perm.begin(), perm.begin() + n_val);
  fp.fit.assign(perm.begin() + n_val, perm.end());
  std::sort(fp.validate.begin(), fp.validate.end());
  std::sort(fp.fit.begin(), fp.fit.end());
  return fp;
}

CvResult cross_validate(const Dataset& train, const std::vector<ParamSet>& grid, const std::vector<FoldPair>& folds,
                        const CvObjective& objective) {
  if (grid.empty()) throw std::invalid_argument("cross_validate: empty grid");
  if (folds.empty()) throw std::invalid_argument("cross_validate: no folds");
  std::vector<std::pair<Dataset, Dataset>> parts;
  parts.reserve(folds.size());
  for (const auto& f : folds) parts.emplace_back(train.subset(f.fit), train.subset(f.validate));

  CvResult result;
  result.mean_errors.assign(grid.size(), 0.0);
  tbb::parallel_for(std::size_t{0}, grid.size(), [&](std::size_t g) {
    double total = 0.0;
    for (const auto& [fit, val] : parts) total += objective(fit, val, grid[g]);
    result.mean_errors[g] = total / static_cast<double>(parts.size());
  });
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (result.mean_errors[g] < result.mean_errors[result.best_index]) result.best_index = g;
  }
  result.best = grid[result.best_index];
  return result;
}

}  // namespace nnml
