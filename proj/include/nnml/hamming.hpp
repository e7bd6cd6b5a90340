#pragma once

// Discriminative learning of linear binary hashes under the gerrymandering
// loss. The score of a neighbor set is <sign(U x), sum_j sign(V x_j)>, i.e.
// sum_j (c - 2 * hamming(x, x_j)).

#include "nnml/dataset.hpp"
#include "nnml/gerrymander.hpp"

#include <cstdint>
#include <functional>

namespace nnml {

enum class HashMode { Symmetric, Asymmetric };
enum class Relaxation { Identity, Tanh };

/// U hashes queries, V hashes database rows; both c x d. In symmetric mode
/// V == U.
struct HammingHasher {
  Matrix u;
  Matrix v;
  HashMode mode = HashMode::Asymmetric;
  Relaxation relaxation = Relaxation::Tanh;

  Index code_length() const { return u.rows(); }
};

struct BinaryCode {
  Vector bits;  // entries exactly +1 or -1
};

/// Entrywise sign of M x with sign(0) = +1.
BinaryCode binarize(const Matrix& m, const Vector& x);

/// Codes of every row of `x` as an n x c matrix of +-1.
Matrix binarize_rows(const Matrix& m, const Matrix& x);

Index hamming_distance(const BinaryCode& a, const BinaryCode& b);

double hamming_score(const HammingHasher& hasher, const Vector& x, const NeighborSet& h, const Matrix& train);

/// Per-row score contributions <sign(U x), sign(V x_j)> = c - 2 D(x, x_j).
Vector hamming_point_scores(const HammingHasher& hasher, const Vector& x, const Matrix& database_codes);

/// 1/4 || code - tanh(diag(scales) projection) ||^2 where `projection` is the
/// real-valued query projection U x.
double asym_hamming_distance(const Vector& projection, const BinaryCode& code, const Vector& scales);

/// Scales s = alpha * 1 with alpha bisected so that the mean of
/// |tanh(alpha (U x)_j)| over the training rows is 0.4. All-zero projections
/// give s = 1.
Vector calibrate_scales(const Matrix& train, const Matrix& u, double target = 0.4);

struct HammingTrainConfig {
  Index k = 3;
  Index code_length = 8;
  double C = 1.0;
  double zero_mean_weight = 0.1;
  int epochs = 20;
  Index batch_size = 10;
  double lr = 1.0;  // eta(t) = lr / t, t counting batches
  double momentum = 0.9;
  Relaxation relaxation = Relaxation::Tanh;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int patience = 1;
  std::optional<LossMatrix> loss;
};

struct HammingModel {
  HammingHasher hasher;
  std::vector<TraceRow> trace;
  std::int64_t steps = 0;
};

/// Gaussian U (and V) normalized to unit Frobenius norm.
HammingHasher random_hasher(Index d, Index code_length, HashMode mode, Relaxation relaxation, std::uint64_t seed);

struct HammingGradient {
  Matrix du;
  Matrix dv;  // zero-sized in symmetric mode, where du holds the full W gradient
};

/// Gradient of the batch objective
///   C * sum_i [S_f(x_i, h_hat_i) - S_f(x_i, h_star_i)] + zero_mean_weight * penalty
/// where S_f relaxes only the sign being differentiated (sign -> f on the U
/// side for dU, on the V side for dV) and the penalty is
/// 0.5 ||mean_b f(U x)||^2 (+ the same for V in asymmetric mode).
HammingGradient hamming_batch_gradient(const HammingHasher& hasher, const Matrix& train, std::span<const Index> batch,
                                       std::span<const NeighborSet> h_hat, std::span<const NeighborSet> h_star,
                                       double C, double zero_mean_weight);

using HammingObserver = std::function<void(const HammingModel&)>;

/// Mini-batch training with momentum, eta(t) = lr / t, and Frobenius
/// normalization of U and V after every step.
HammingModel train_hamming(const Dataset& train, const HammingTrainConfig& config, HashMode mode,
                           const HammingObserver& observer = {});

/// kNN in Hamming space. Database rows are stored as V codes; queries stay
/// real-valued and are ranked by asymmetric Hamming distance.
class HammingRetriever {
 public:
  HammingRetriever(const Dataset& database, HammingHasher hasher, Vector scales);
  HammingRetriever(const Dataset& database, HammingHasher hasher);

  std::vector<Index> neighbors(const Vector& query, Index k) const;
  int classify(const Vector& query, Index k) const;
  Vector predict(const Matrix& queries, Index k) const;

  const Matrix& database_codes() const { return codes_; }

 private:
  Dataset database_;
  HammingHasher hasher_;
  Vector scales_;
  Matrix codes_;
};

}  // namespace nnml
