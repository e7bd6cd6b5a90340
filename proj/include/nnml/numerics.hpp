#pragma once

#include <Eigen/Dense>

#include <filesystem>

namespace nnml {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Dense symmetric matrix. The upper triangle of the source is authoritative;
/// the lower triangle is mirrored from it on construction, so the stored
/// matrix is exactly symmetric.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& source);

  static SymMatrix zeros(Index d);
  static SymMatrix identity(Index d);
  static SymMatrix diagonal(const Vector& diag);

  const Matrix& matrix() const { return m_; }
  Index dim() const { return m_.rows(); }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Eigenpairs of a symmetric matrix. Columns of `vectors` are unit
/// eigenvectors; `values` is sorted descending.
struct EigenDecomp {
  Matrix vectors;
  Vector values;
};

/// Cyclic Jacobi eigensolver. Sweeps until the off-diagonal Frobenius norm
/// drops to 1e-12 of the full norm. Each eigenvector column is sign-fixed so
/// that its largest-magnitude entry is positive.
EigenDecomp sym_eig(const SymMatrix& a);

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues are zeroed.
SymMatrix psd_project(const SymMatrix& a);

/// Linear map x -> D^{1/2} V^T x for G = V D V^T, so that squared Euclidean
/// distance after the map equals the G quadratic form.
class WhiteningTransform {
 public:
  WhiteningTransform() = default;
  explicit WhiteningTransform(Matrix map) : map_(std::move(map)) {}

  const Matrix& matrix() const { return map_; }
  Vector apply(const Vector& x) const { return map_ * x; }
  /// Rows of `x` are samples.
  Matrix apply_rows(const Matrix& x) const { return x * map_.transpose(); }

 private:
  Matrix map_;
};

/// Eigenvalues below rank_tol * lambda_max are treated as zero. Throws
/// std::invalid_argument if some eigenvalue is below -rank_tol * max(1, lambda_max).
WhiteningTransform whitening_transform(const SymMatrix& g, double rank_tol = 1e-10);

/// Row-major CSV, full double precision.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace nnml
