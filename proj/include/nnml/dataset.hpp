#pragma once

#include "nnml/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nnml {

enum class LabelKind { Class, Real };

/// Raised for malformed input data; the message carries row/column location.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Immutable feature matrix (rows are samples) with either class labels in
/// 1..R or real targets.
class Dataset {
 public:
  Dataset() = default;

  static Dataset classed(Matrix features, std::vector<int> labels, int num_classes,
                         std::string name = {}, std::vector<std::string> class_names = {});
  static Dataset regression(Matrix features, Vector targets, std::string name = {});

  const Matrix& features() const { return features_; }
  Index n() const { return features_.rows(); }
  Index d() const { return features_.cols(); }
  LabelKind kind() const { return kind_; }
  bool is_classed() const { return kind_ == LabelKind::Class; }
  const std::string& name() const { return name_; }

  /// Class ids in 1..R. Empty for regression data.
  const std::vector<int>& labels() const { return labels_; }
  int num_classes() const { return num_classes_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Real targets; for classed data the class ids as doubles.
  const Vector& targets() const { return targets_; }

  Dataset subset(std::span<const Index> rows) const;
  Dataset with_features(Matrix features) const;

 private:
  Matrix features_;
  Vector targets_;
  std::vector<int> labels_;
  std::vector<std::string> class_names_;
  int num_classes_ = 0;
  LabelKind kind_ = LabelKind::Real;
  std::string name_;
};

/// Reads a headered comma-separated file. Class labels are re-indexed to 1..R
/// in order of first appearance.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column, LabelKind label_kind);

/// Writes features as x1..xd plus a trailing `label_column`; classed data
/// writes original class names when present.
void save_csv(const std::filesystem::path& path, const Dataset& data, const std::string& label_column = "y");

struct NormStats {
  Vector mean;
  Vector std;

  Matrix apply(const Matrix& x) const;
  Matrix unapply(const Matrix& z) const;
};

/// Population-std z-scoring fitted on `train` only. Returns the stats and the
/// normalized train set followed by each of `others`.
std::pair<NormStats, std::vector<Dataset>> zscore_fit_apply(const Dataset& train,
                                                              const std::vector<Dataset>& others = {});

struct SplitSpec {
  int n_folds = 2;
  std::uint64_t seed = 0;
  std::vector<int> assignment;

  std::vector<Index> fold_rows(int fold) const;
  std::vector<Index> rows_outside(int fold) const;
  std::string to_json() const;
  static SplitSpec from_json(const std::string& text);
};

SplitSpec kfold(Index n, int n_folds, std::uint64_t seed);

struct SynthSinParams {
  Index n = 1000;
  Index d = 20;
  double c1 = 50.0;
  double decay = 0.6;
  bool rotate = false;
  double noise_std = 0.1;
  std::uint64_t seed = 0;
};

/// y = sum_i sin(c_i x_i) + noise with x ~ U[0,1]^d, c_1 = c1, c_i = decay * c_{i-1}.
/// With rotate, features are post-multiplied by random_rotation(d, ...) after
/// the targets are drawn.
Dataset synth_sin(const SynthSinParams& p);

/// Coefficient profile used by synth_sin.
Vector synth_sin_coefficients(Index d, double c1, double decay);

/// Seeded Haar-style rotation: QR of a Gaussian matrix with sign-corrected
/// diagonal, det forced to +1.
Matrix random_rotation(Index d, std::uint64_t seed);

struct BlobParams {
  Index n = 200;
  Index d = 5;
  int num_classes = 2;
  Index informative = 1;      // leading coordinates that carry the class signal
  double separation = 3.0;    // class-center spacing on the informative coordinates
  double informative_std = 1.0;
  double noise_scale = 10.0;  // std of the remaining coordinates
  std::uint64_t seed = 0;
};

/// Gaussian class blobs. Class r gets a center whose informative coordinates
/// lie on a circle (or line for one coordinate) of radius `separation`.
Dataset synth_blobs(const BlobParams& p);

/// Per-stream seed derivation so independent draws never share a generator.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace nnml
