#include "nnml/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace nnml {

namespace {

void check_finite(const Matrix& x, const char* what) {
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      if (!std::isfinite(x(i, j))) {
        throw DataError(std::string(what) + ": non-finite value at row " + std::to_string(i) + ", column " +
                        std::to_string(j));
      }
    }
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  for (auto& c : cells) {
    const auto b = c.find_first_not_of(" \t\r");
    const auto e = c.find_last_not_of(" \t\r");
    c = (b == std::string::npos) ? std::string() : c.substr(b, e - b + 1);
  }
  return cells;
}

bool parse_real(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

Dataset Dataset::classed(Matrix features, std::vector<int> labels, int num_classes, std::string name,
                         std::vector<std::string> class_names) {
  if (features.rows() < 1 || features.cols() < 1) throw DataError("dataset needs n >= 1 and d >= 1");
  if (static_cast<Index>(labels.size()) != features.rows()) throw DataError("label count does not match rows");
  if (num_classes < 1) throw DataError("num_classes must be >= 1");
  check_finite(features, "features");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 1 || labels[i] > num_classes) {
      throw DataError("class label out of range 1.." + std::to_string(num_classes) + " at row " + std::to_string(i));
    }
  }
  Dataset ds;
  ds.features_ = std::move(features);
  ds.targets_.resize(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) ds.targets_(static_cast<Index>(i)) = labels[i];
  ds.labels_ = std::move(labels);
  ds.num_classes_ = num_classes;
  ds.kind_ = LabelKind::Class;
  ds.name_ = std::move(name);
  ds.class_names_ = std::move(class_names);
  return ds;
}

Dataset Dataset::regression(Matrix features, Vector targets, std::string name) {
  if (features.rows() < 1 || features.cols() < 1) throw DataError("dataset needs n >= 1 and d >= 1");
  if (targets.size() != features.rows()) throw DataError("target count does not match rows");
  check_finite(features, "features");
  for (Index i = 0; i < targets.size(); ++i) {
    if (!std::isfinite(targets(i))) throw DataError("non-finite target at row " + std::to_string(i));
  }
  Dataset ds;
  ds.features_ = std::move(features);
  ds.targets_ = std::move(targets);
  ds.kind_ = LabelKind::Real;
  ds.name_ = std::move(name);
  return ds;
}

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out = *this;
  out.features_.resize(static_cast<Index>(rows.size()), d());
  out.targets_.resize(static_cast<Index>(rows.size()));
  if (is_classed()) out.labels_.resize(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Index src = rows[r];
    out.features_.row(static_cast<Index>(r)) = features_.row(src);
    out.targets_(static_cast<Index>(r)) = targets_(src);
    if (is_classed()) out.labels_[r] = labels_[static_cast<std::size_t>(src)];
  }
  return out;
}

Dataset Dataset::with_features(Matrix features) const {
  if (features.rows() != n()) throw DataError("with_features: row count mismatch");
  check_finite(features, "features");
  Dataset out = *this;
  out.features_ = std::move(features);
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column, LabelKind label_kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || split_line(line).empty()) throw DataError(path.string() + ": empty file");
  const std::vector<std::string> header = split_line(line);
  const auto it = std::find(header.begin(), header.end(), label_column);
  if (it == header.end()) throw DataError(path.string() + ": missing label column '" + label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(it - header.begin());

  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels;
  std::vector<double> real_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(header.size()));
    }
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col && label_kind == LabelKind::Class) {
        if (cells[c].empty()) {
          throw DataError(path.string() + ": empty label at row " + std::to_string(line_no) + ", column '" +
                          header[c] + "'");
        }
        raw_labels.push_back(cells[c]);
        continue;
      }
      double v = 0.0;
      if (!parse_real(cells[c], v) || !std::isfinite(v)) {
        throw DataError(path.string() + ": non-numeric or non-finite cell '" + cells[c] + "' at row " +
                        std::to_string(line_no) + ", column '" + header[c] + "'");
      }
      if (c == label_col) {
        real_labels.push_back(v);
      } else {
        row.push_back(v);
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(path.string() + ": no data rows");

  const Index n = static_cast<Index>(rows.size());
  const Index d = static_cast<Index>(header.size()) - 1;
  if (d < 1) throw DataError(path.string() + ": no feature columns");
  Matrix x(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const std::string name = path.stem().string();
  if (label_kind == LabelKind::Real) {
    return Dataset::regression(std::move(x), Eigen::Map<Vector>(real_labels.data(), n), name);
  }
  std::unordered_map<std::string, int> ids;
  std::vector<std::string> names;
  std::vector<int> labels;
  labels.reserve(raw_labels.size());
  for (const auto& raw : raw_labels) {
    auto [pos, inserted] = ids.emplace(raw, static_cast<int>(names.size()) + 1);
    if (inserted) names.push_back(raw);
    labels.push_back(pos->second);
  }
  const int r = static_cast<int>(names.size());
  return Dataset::classed(std::move(x), std::move(labels), r, name, std::move(names));
}

void save_csv(const std::filesystem::path& path, const Dataset& data, const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.precision(17);
  for (Index j = 0; j < data.d(); ++j) out << 'x' << (j + 1) << ',';
  out << label_column << '\n';
  const auto& names = data.class_names();
  for (Index i = 0; i < data.n(); ++i) {
    for (Index j = 0; j < data.d(); ++j) out << data.features()(i, j) << ',';
    if (data.is_classed()) {
      const int label = data.labels()[static_cast<std::size_t>(i)];
      if (!names.empty()) {
        out << names[static_cast<std::size_t>(label - 1)];
      } else {
        out << label;
      }
    } else {
      out << data.targets()(i);
    }
    out << '\n';
  }
}

Matrix NormStats::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) throw DataError("NormStats::apply: dimension mismatch");
  return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

Matrix NormStats::unapply(const Matrix& z) const {
  if (z.cols() != mean.size()) throw DataError("NormStats::unapply: dimension mismatch");
  Matrix x = z.array().rowwise() * std.transpose().array();
  return x.rowwise() + mean.transpose();
}

std::pair<NormStats, std::vector<Dataset>> zscore_fit_apply(const Dataset& train, const std::vector<Dataset>& others) {
  for (const auto& o : others) {
    if (o.d() != train.d()) {
      throw DataError("zscore: dimension mismatch (" + std::to_string(o.d()) + " vs " + std::to_string(train.d()) +
                      ")");
    }
  }
  const Matrix& x = train.features();
  NormStats stats;
  stats.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - stats.mean.transpose();
  stats.std = (centered.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().transpose();
  for (Index j = 0; j < stats.std.size(); ++j) {
    if (stats.std(j) <= 1e-12 * std::max(1.0, std::abs(stats.mean(j)))) stats.std(j) = 1.0;
  }
  std::vector<Dataset> out;
  out.reserve(others.size() + 1);
  out.push_back(train.with_features(stats.apply(x)));
  for (const auto& o : others) out.push_back(o.with_features(stats.apply(o.features())));
  return {std::move(stats), std::move(out)};
}

std::vector<Index> SplitSpec::fold_rows(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::vector<Index> SplitSpec::rows_outside(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::string SplitSpec::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["n_folds"] = n_folds;
  j["assignment"] = assignment;
  return j.dump();
}

SplitSpec SplitSpec::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SplitSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.n_folds = j.at("n_folds").get<int>();
  s.assignment = j.at("assignment").get<std::vector<int>>();
  return s;
}

SplitSpec kfold(Index n, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw std::invalid_argument("kfold: n_folds must be >= 2");
  if (n < n_folds) {
    throw std::invalid_argument("kfold: n (" + std::to_string(n) + ") < n_folds (" + std::to_string(n_folds) + ")");
  }
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(derive_seed(seed, 0x6b666f6c64ULL));
  std::shuffle(perm.begin(), perm.end(), rng);
  SplitSpec s;
  s.n_folds = n_folds;
  s.seed = seed;
  s.assignment.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    s.assignment[static_cast<std::size_t>(perm[pos])] = static_cast<int>(pos % static_cast<std::size_t>(n_folds));
  }
  return s;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Vector synth_sin_coefficients(Index d, double c1, double decay) {
  Vector c(d);
  double cur = c1;
  for (Index i = 0; i < d; ++i) {
    c(i) = cur;
    cur *= decay;
  }
  return c;
}

Matrix random_rotation(Index d, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("random_rotation: d must be >= 1");
  std::mt19937_64 rng(derive_seed(seed, 0x726f74ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(d, d);
  for (Index j = 0; j < d; ++j) {
    for (Index i = 0; i < d; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  if (q.determinant() < 0.0) q.col(0) = -q.col(0);
  return q;
}

Dataset synth_sin(const SynthSinParams& p) {
  if (p.d < 1) throw std::invalid_argument("synth_sin: d must be >= 1");
  if (p.n < 1) throw std::invalid_argument("synth_sin: n must be >= 1");
  if (!(p.decay > 0.0 && p.decay <= 1.0)) throw std::invalid_argument("synth_sin: decay must be in (0, 1]");
  if (p.noise_std < 0.0) throw std::invalid_argument("synth_sin: noise_std must be >= 0");
  const Vector c = synth_sin_coefficients(p.d, p.c1, p.decay);
  std::mt19937_64 feature_rng(derive_seed(p.seed, 1));
  std::mt19937_64 noise_rng(derive_seed(p.seed, 2));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(p.n, p.d);
  Vector y(p.n);
  for (Index i = 0; i < p.n; ++i) {
    double yi = 0.0;
    for (Index j = 0; j < p.d; ++j) {
      x(i, j) = uniform(feature_rng);
      yi += std::sin(c(j) * x(i, j));
    }
    y(i) = yi + p.noise_std * normal(noise_rng);
  }
  if (p.rotate) x = x * random_rotation(p.d, derive_seed(p.seed, 3));
  return Dataset::regression(std::move(x), std::move(y), p.rotate ? "synth_sin_rotated" : "synth_sin");
}

Dataset synth_blobs(const BlobParams& p) {
  if (p.num_classes < 1 || p.n < 1 || p.d < 1) throw std::invalid_argument("synth_blobs: bad sizes");
  if (p.informative < 1 || p.informative > p.d) throw std::invalid_argument("synth_blobs: bad informative count");
  std::mt19937_64 rng(derive_seed(p.seed, 0x626c6f62ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers = Matrix::Zero(p.num_classes, p.d);
  for (int r = 0; r < p.num_classes; ++r) {
    if (p.informative == 1) {
      centers(r, 0) = (r - 0.5 * (p.num_classes - 1)) * p.separation;
    } else {
      const double angle = 2.0 * std::numbers::pi * r / p.num_classes;
      centers(r, 0) = p.separation * std::cos(angle);
      centers(r, 1) = p.separation * std::sin(angle);
    }
  }
  Matrix x(p.n, p.d);
  std::vector<int> labels(static_cast<std::size_t>(p.n));
  for (Index i = 0; i < p.n; ++i) {
    const int r = static_cast<int>(i % p.num_classes);
    labels[static_cast<std::size_t>(i)] = r + 1;
    for (Index j = 0; j < p.d; ++j) {
      const double s = j < p.informative ? p.informative_std : p.noise_scale;
      x(i, j) = centers(r, j) + s * normal(rng);
    }
  }
  return Dataset::classed(std::move(x), std::move(labels), p.num_classes, "synth_blobs");
}

}  // namespace nnml
