#include "nnml/gradient_metrics.hpp"

#include <json.hpp>
#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nnml {

double KernelSpec::operator()(double u) const {
  if (!(u < 1.0)) return 0.0;
  u = std::max(u, 0.0);
  return shape == KernelShape::Triangle ? 1.0 - u : 1.0 - u * u;
}

namespace {

Vector softmax(const Vector& v, double temperature) {
  const Vector z = v / temperature;
  const Vector e = (z.array() - z.maxCoeff()).exp().matrix();
  return e / e.sum();
}

// Rows of outputs the smoother averages: the targets as one column, or class
// indicators as R columns.
Matrix response_matrix(const Dataset& train, bool classes) {
  if (!classes) return train.targets();
  Matrix y = Matrix::Zero(train.n(), train.num_classes());
  for (Index i = 0; i < train.n(); ++i) y(i, train.labels()[static_cast<std::size_t>(i)] - 1) = 1.0;
  return y;
}

void check_config(const Dataset& train, const EstimatorConfig& config) {
  if (train.n() < 2) throw std::invalid_argument("gradient estimate: need n >= 2");
  if (!(config.t > 0.0)) throw std::invalid_argument("gradient estimate: t must be > 0");
  if (!(config.kernel.bandwidth > 0.0)) throw std::invalid_argument("gradient estimate: bandwidth must be > 0");
  if (!(config.temperature > 0.0)) throw std::invalid_argument("gradient estimate: temperature must be > 0");
}

// Smoothed responses given squared distances from one probe point.
struct Smoothed {
  Vector value;
  Index inside = 0;
};

Smoothed smooth(const Vector& sq_dist, const Matrix& responses, const KernelSpec& spec, Index exclude) {
  const double h = spec.bandwidth;
  const double h2 = h * h;
  Smoothed out;
  out.value = Vector::Zero(responses.cols());
  double total = 0.0;
  for (Index l = 0; l < sq_dist.size(); ++l) {
    if (l == exclude || !(sq_dist(l) < h2)) continue;
    ++out.inside;
    const double w = spec(std::sqrt(sq_dist(l)) / h);
    if (w <= 0.0) continue;
    total += w;
    out.value.noalias() += w * responses.row(l).transpose();
  }
  if (total > 0.0) {
    out.value /= total;
    return out;
  }
  Index count = 0;
  for (Index l = 0; l < responses.rows(); ++l) {
    if (l == exclude) continue;
    out.value.noalias() += responses.row(l).transpose();
    ++count;
  }
  out.value /= static_cast<double>(std::max<Index>(count, 1));
  return out;
}

struct SampleJacobian {
  Matrix jacobian;  // d x c
  Index gates = 0;
  std::vector<bool> mask;
};

// Central differences of the smoother at training row j. Probe distances come
// from ||x_j - x_l||^2 +- 2 t (x_j - x_l)_i + t^2.
SampleJacobian sample_jacobian(const Matrix& x, const Matrix& responses, const EstimatorConfig& config, Index j,
                               bool softmaxed) {
  const Index d = x.cols();
  const Index exclude = config.leave_one_out ? j : -1;
  const Matrix diff = (-x).rowwise() + x.row(j);  // row l: x_j - x_l
  const Vector base = diff.rowwise().squaredNorm();
  const double t = config.t;
  SampleJacobian out;
  out.jacobian = Matrix::Zero(d, responses.cols());
  out.mask.assign(static_cast<std::size_t>(d), false);
  for (Index i = 0; i < d; ++i) {
    const Vector plus = (base + 2.0 * t * diff.col(i)).array() + t * t;
    const Vector minus = (base - 2.0 * t * diff.col(i)).array() + t * t;
    Smoothed up = smooth(plus, responses, config.kernel, exclude);
    Smoothed down = smooth(minus, responses, config.kernel, exclude);
    if (up.inside < config.min_count || down.inside < config.min_count) continue;
    ++out.gates;
    out.mask[static_cast<std::size_t>(i)] = true;
    if (softmaxed) {
      up.value = softmax(up.value, config.temperature);
      down.value = softmax(down.value, config.temperature);
    }
    out.jacobian.row(i) = ((up.value - down.value) / (2.0 * t)).transpose();
  }
  return out;
}

std::vector<SampleJacobian> all_jacobians(const Dataset& train, const EstimatorConfig& config, bool classes) {
  const Matrix responses = response_matrix(train, classes);
  const Matrix& x = train.features();
  std::vector<SampleJacobian> out(static_cast<std::size_t>(train.n()));
  tbb::parallel_for(Index{0}, train.n(), [&](Index j) {
    out[static_cast<std::size_t>(j)] = sample_jacobian(x, responses, config, j, classes);
  });
  return out;
}

GradientMetricEstimate outer_product_average(const std::vector<SampleJacobian>& samples, Index d, EstimateKind kind) {
  Matrix g = Matrix::Zero(d, d);
  Index gates = 0;
  for (const auto& s : samples) {
    g.noalias() += s.jacobian * s.jacobian.transpose();
    gates += s.gates;
  }
  g /= static_cast<double>(samples.size());
  GradientMetricEstimate est;
  est.kind = kind;
  est.g = SymMatrix(g);
  est.eig = sym_eig(est.g);
  est.gate_rate = static_cast<double>(gates) / static_cast<double>(samples.size() * static_cast<std::size_t>(d));
  if (gates == 0) est.warning = "every density gate failed; estimate is the zero matrix";
  return est;
}

GradientMetricEstimate gw_from(const std::vector<SampleJacobian>& samples, Index d) {
  Vector sum = Vector::Zero(d);
  std::vector<Index> counts(static_cast<std::size_t>(d), 0);
  Index gates = 0;
  for (const auto& s : samples) {
    gates += s.gates;
    for (Index i = 0; i < d; ++i) {
      if (s.mask[static_cast<std::size_t>(i)]) {
        sum(i) += std::abs(s.jacobian(i, 0));
        ++counts[static_cast<std::size_t>(i)];
      }
    }
  }
  GradientMetricEstimate est;
  est.kind = EstimateKind::Gw;
  est.weights = Vector::Zero(d);
  for (Index i = 0; i < d; ++i) {
    if (counts[static_cast<std::size_t>(i)] > 0) est.weights(i) = sum(i) / static_cast<double>(counts[static_cast<std::size_t>(i)]);
  }
  est.g = SymMatrix::diagonal(est.weights);
  est.eig = sym_eig(est.g);
  est.gate_rate = static_cast<double>(gates) / static_cast<double>(samples.size() * static_cast<std::size_t>(d));
  if (gates == 0) est.warning = "every density gate failed; estimate is the zero matrix";
  return est;
}

}  // namespace

double kernel_regress(const Dataset& train, const KernelSpec& spec, const Vector& x, Index exclude) {
  if (train.n() == 0) throw std::invalid_argument("kernel_regress: empty training set");
  const Vector sq = (train.features().rowwise() - x.transpose()).rowwise().squaredNorm();
  return smooth(sq, train.targets(), spec, exclude).value(0);
}

Vector kernel_class_probs(const Dataset& train, const KernelSpec& spec, const Vector& x, double temperature,
                          Index exclude) {
  if (!train.is_classed()) throw std::invalid_argument("kernel_class_probs: dataset must be classed");
  if (!(temperature > 0.0)) throw std::invalid_argument("kernel_class_probs: temperature must be > 0");
  const Vector sq = (train.features().rowwise() - x.transpose()).rowwise().squaredNorm();
  return softmax(smooth(sq, response_matrix(train, true), spec, exclude).value, temperature);
}

bool density_gate(const Matrix& train, const Vector& x, double t, double h, Index i, Index min_count, Index exclude) {
  const auto count = [&](double shift) {
    Vector p = x;
    p(i) += shift;
    const Vector sq = (train.rowwise() - p.transpose()).rowwise().squaredNorm();
    Index c = 0;
    for (Index l = 0; l < sq.size(); ++l) {
      if (l != exclude && sq(l) < h * h) ++c;
    }
    return c;
  };
  return count(t) >= min_count && count(-t) >= min_count;
}

GradientEstimate finite_diff_gradient(const VectorEvaluator& f, const Vector& x, double t,
                                      const std::vector<bool>& gate) {
  if (!(t > 0.0)) throw std::invalid_argument("finite_diff_gradient: t must be > 0");
  const Index d = x.size();
  if (!gate.empty() && static_cast<Index>(gate.size()) != d) {
    throw std::invalid_argument("finite_diff_gradient: gate length must equal dimension");
  }
  GradientEstimate est;
  est.mask.assign(static_cast<std::size_t>(d), true);
  for (Index i = 0; i < d; ++i) {
    const bool open = gate.empty() || gate[static_cast<std::size_t>(i)];
    est.mask[static_cast<std::size_t>(i)] = open;
    Vector up = x;
    Vector down = x;
    up(i) += t;
    down(i) -= t;
    const Vector fu = f(up);
    if (est.jacobian.size() == 0) est.jacobian = Matrix::Zero(d, fu.size());
    if (!open) continue;
    est.jacobian.row(i) = ((fu - f(down)) / (2.0 * t)).transpose();
  }
  return est;
}

GradientEstimate finite_diff_gradient(const ScalarEvaluator& f, const Vector& x, double t,
                                      const std::vector<bool>& gate) {
  const VectorEvaluator wrapped = [&f](const Vector& p) { return Vector::Constant(1, f(p)); };
  return finite_diff_gradient(wrapped, x, t, gate);
}

std::string to_string(EstimateKind kind) {
  switch (kind) {
    case EstimateKind::Egop: return "egop";
    case EstimateKind::Ejop: return "ejop";
    case EstimateKind::Gw: return "gw";
  }
  return "unknown";
}

GradientMetricEstimate estimate_egop(const Dataset& train, const EstimatorConfig& config) {
  check_config(train, config);
  return outer_product_average(all_jacobians(train, config, false), train.d(), EstimateKind::Egop);
}

namespace {

std::vector<SampleJacobian> oracle_jacobians(const Matrix& x, const ScalarEvaluator& f, double t) {
  if (x.rows() < 1) throw std::invalid_argument("oracle estimate: empty sample");
  std::vector<SampleJacobian> out(static_cast<std::size_t>(x.rows()));
  for (Index j = 0; j < x.rows(); ++j) {
    auto g = finite_diff_gradient(f, Vector(x.row(j).transpose()), t);
    out[static_cast<std::size_t>(j)] = {std::move(g.jacobian), x.cols(), std::move(g.mask)};
  }
  return out;
}

}  // namespace

GradientMetricEstimate estimate_egop(const Matrix& x, const ScalarEvaluator& f, double t) {
  return outer_product_average(oracle_jacobians(x, f, t), x.cols(), EstimateKind::Egop);
}

GradientMetricEstimate estimate_gw(const Dataset& train, const EstimatorConfig& config) {
  check_config(train, config);
  return gw_from(all_jacobians(train, config, false), train.d());
}

GradientMetricEstimate estimate_gw(const Matrix& x, const ScalarEvaluator& f, double t) {
  return gw_from(oracle_jacobians(x, f, t), x.cols());
}

GradientMetricEstimate estimate_ejop(const Dataset& train, const EstimatorConfig& config) {
  check_config(train, config);
  if (!train.is_classed() || train.num_classes() < 2) {
    throw std::invalid_argument("estimate_ejop: need a classed dataset with at least 2 classes");
  }
  return outer_product_average(all_jacobians(train, config, true), train.d(), EstimateKind::Ejop);
}

Vector relieff_weights(const Dataset& train, Index k_hits, Index n_probes, std::uint64_t seed) {
  if (!train.is_classed()) throw std::invalid_argument("relieff_weights: dataset must be classed");
  if (k_hits < 1 || n_probes < 1) throw std::invalid_argument("relieff_weights: k_hits and n_probes must be >= 1");
  const int R = train.num_classes();
  const auto labels = train.labels();
  std::vector<Index> class_size(static_cast<std::size_t>(R) + 1, 0);
  for (const int l : labels) ++class_size[static_cast<std::size_t>(l)];
  for (int r = 1; r <= R; ++r) {
    if (class_size[static_cast<std::size_t>(r)] < k_hits + 1) {
      throw std::invalid_argument("relieff_weights: class " + std::to_string(r) + " has fewer than k_hits + 1 rows");
    }
  }
  const Matrix& x = train.features();
  const Index n = train.n();
  const Index d = train.d();
  const Vector range = x.colwise().maxCoeff() - x.colwise().minCoeff();
  Vector inv_range(d);
  for (Index i = 0; i < d; ++i) inv_range(i) = range(i) > 0.0 ? 1.0 / range(i) : 0.0;

  std::vector<Index> probes(static_cast<std::size_t>(n));
  std::iota(probes.begin(), probes.end(), Index{0});
  if (n_probes < n) {
    std::mt19937_64 rng(derive_seed(seed, 0x72656c66ULL));
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(static_cast<std::size_t>(n_probes));
  }
  const double m = static_cast<double>(probes.size());
  const double kk = static_cast<double>(k_hits);

  Vector w = Vector::Zero(d);
  for (const Index p : probes) {
    const Vector xp = x.row(p).transpose();
    const Matrix diffs = ((x.rowwise() - xp.transpose()).cwiseAbs()) * inv_range.asDiagonal();
    const Vector dist = diffs.rowwise().sum();
    const int own = labels[static_cast<std::size_t>(p)];
    const double own_prior = static_cast<double>(class_size[static_cast<std::size_t>(own)]) / static_cast<double>(n);
    for (int r = 1; r <= R; ++r) {
      std::vector<Index> members;
      for (Index l = 0; l < n; ++l) {
        if (l != p && labels[static_cast<std::size_t>(l)] == r) members.push_back(l);
      }
      const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k_hits), members.size());
      std::partial_sort(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep), members.end(),
                        [&](Index a, Index b) { return dist(a) < dist(b) || (dist(a) == dist(b) && a < b); });
      Vector contribution = Vector::Zero(d);
      for (std::size_t q = 0; q < keep; ++q) contribution += diffs.row(members[q]).transpose();
      if (r == own) {
        w -= contribution / (m * kk);
      } else {
        const double prior = static_cast<double>(class_size[static_cast<std::size_t>(r)]) / static_cast<double>(n);
        w += (prior / (1.0 - own_prior)) * contribution / (m * kk);
      }
    }
  }
  return w.cwiseMax(0.0);
}

void save_estimate(const std::filesystem::path& stem, const GradientMetricEstimate& estimate,
                   const EstimateMeta& meta) {
  write_matrix_csv(stem.string() + ".csv", estimate.g.matrix());
  nlohmann::json j;
  j["kind"] = to_string(estimate.kind);
  j["h"] = meta.h;
  j["t"] = meta.t;
  j["temperature"] = meta.temperature;
  j["n"] = meta.n;
  j["seed"] = meta.seed;
  std::ofstream out(stem.string() + ".json");
  if (!out) throw std::runtime_error("cannot write " + stem.string() + ".json");
  out << j.dump(2) << '\n';
}

}  // namespace nnml
