#include "nnml/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnml {

SymMatrix::SymMatrix(const Matrix& source) {
  if (source.rows() != source.cols()) {
    throw std::invalid_argument("SymMatrix: source must be square");
  }
  m_ = source.triangularView<Eigen::Upper>();
  m_.triangularView<Eigen::StrictlyLower>() = m_.transpose().triangularView<Eigen::StrictlyLower>();
}

SymMatrix SymMatrix::zeros(Index d) { return SymMatrix(Matrix::Zero(d, d)); }

SymMatrix SymMatrix::identity(Index d) { return SymMatrix(Matrix::Identity(d, d)); }

SymMatrix SymMatrix::diagonal(const Vector& diag) { return SymMatrix(Matrix(diag.asDiagonal())); }

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (Index j = 0; j < a.cols(); ++j) {
    for (Index i = 0; i < j; ++i) s += 2.0 * a(i, j) * a(i, j);
  }
  return std::sqrt(s);
}

}  // namespace

EigenDecomp sym_eig(const SymMatrix& input) {
  const Matrix& src = input.matrix();
  if (!src.allFinite()) throw std::invalid_argument("sym_eig: non-finite input");
  const Index d = src.rows();
  Matrix a = src;
  Matrix v = Matrix::Identity(d, d);

  const double total = a.norm();
  const double target = 1e-12 * total;
  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps && off_diagonal_norm(a) > target; ++sweep) {
    for (Index p = 0; p < d - 1; ++p) {
      for (Index q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Symmetric 2x2 Schur rotation zeroing a(p, q).
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (Index k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (Index k = 0; k < d; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) > a(j, j); });

  EigenDecomp out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Index col = 0; col < d; ++col) {
    const Index src_col = order[static_cast<std::size_t>(col)];
    out.values(col) = a(src_col, src_col);
    Vector vec = v.col(src_col);
    Index arg = 0;
    for (Index k = 1; k < d; ++k) {
      if (std::abs(vec(k)) > std::abs(vec(arg))) arg = k;
    }
    if (vec(arg) < 0.0) vec = -vec;
    out.vectors.col(col) = vec;
  }
  return out;
}

SymMatrix psd_project(const SymMatrix& a) {
  const EigenDecomp eig = sym_eig(a);
  if (eig.values.size() == 0 || eig.values.minCoeff() >= 0.0) return a;
  const Vector clipped = eig.values.cwiseMax(0.0);
  return SymMatrix(eig.vectors * clipped.asDiagonal() * eig.vectors.transpose());
}

WhiteningTransform whitening_transform(const SymMatrix& g, double rank_tol) {
  const EigenDecomp eig = sym_eig(g);
  const Index d = g.dim();
  if (d == 0) return WhiteningTransform(Matrix(0, 0));
  const double lmax = eig.values(0);
  const double scale = std::max(1.0, std::abs(lmax));
  if (eig.values(d - 1) < -rank_tol * scale) {
    throw std::invalid_argument("whitening_transform: matrix is not PSD (eigenvalue " +
                                std::to_string(eig.values(d - 1)) + ")");
  }
  Vector root(d);
  for (Index i = 0; i < d; ++i) {
    const double lambda = eig.values(i);
    root(i) = (lmax > 0.0 && lambda > rank_tol * lmax) ? std::sqrt(lambda) : 0.0;
  }
  return WhiteningTransform(root.asDiagonal() * eig.vectors.transpose());
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.precision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("ragged matrix CSV: " + path.string());
    }
    rows.push_back(std::move(row));
  }
  const Index r = static_cast<Index>(rows.size());
  const Index c = r ? static_cast<Index>(rows.front().size()) : 0;
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < c; ++j) m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

}  // namespace nnml
