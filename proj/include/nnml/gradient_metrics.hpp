#pragma once

// Metrics estimated in a single pass from finite differences of a kernel
// plug-in regressor: the expected gradient outer product (EGOP), its
// multiclass Jacobian analogue (EJOP), diagonal gradient weights (GW), and a
// ReliefF baseline.

#include "nnml/dataset.hpp"
#include "nnml/numerics.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace nnml {

enum class KernelShape { Triangle, Epanechnikov };

/// Admissible kernel on [0, 1] with bandwidth h: weights K(||x - x_i|| / h).
struct KernelSpec {
  KernelShape shape = KernelShape::Triangle;
  double bandwidth = 1.0;

  /// K(u): 1 - u (triangle) or 1 - u^2 (Epanechnikov) on [0, 1), 0 beyond.
  double operator()(double u) const;
};

/// Kernel-weighted mean of the targets over the open ball B(x, h). With no
/// training row inside the ball every row gets weight 1/n. `exclude` drops
/// one row.
double kernel_regress(const Dataset& train, const KernelSpec& spec, const Vector& x, Index exclude = -1);

/// Kernel-weighted class indicator averages (uniform fallback as above),
/// passed through softmax(v / temperature). Entry r-1 is class r.
Vector kernel_class_probs(const Dataset& train, const KernelSpec& spec, const Vector& x, double temperature = 1.0,
                          Index exclude = -1);

/// True iff both B(x + t e_i, h) and B(x - t e_i, h) hold at least
/// `min_count` training rows (open balls, `exclude` not counted).
bool density_gate(const Matrix& train, const Vector& x, double t, double h, Index i, Index min_count = 1,
                  Index exclude = -1);

/// d x c matrix of central differences; columns are output components.
/// Coordinates with a false gate are exactly zero.
struct GradientEstimate {
  Matrix jacobian;
  std::vector<bool> mask;

  Vector gradient() const { return jacobian.col(0); }
};

using VectorEvaluator = std::function<Vector(const Vector&)>;
using ScalarEvaluator = std::function<double(const Vector&)>;

/// (f(x + t e_i) - f(x - t e_i)) / 2t per coordinate. An empty `gate` means
/// every coordinate is trusted.
GradientEstimate finite_diff_gradient(const VectorEvaluator& f, const Vector& x, double t,
                                      const std::vector<bool>& gate = {});
GradientEstimate finite_diff_gradient(const ScalarEvaluator& f, const Vector& x, double t,
                                      const std::vector<bool>& gate = {});

enum class EstimateKind { Egop, Ejop, Gw };

std::string to_string(EstimateKind kind);

struct EstimatorConfig {
  KernelSpec kernel{};
  double t = 0.1;             // finite-difference step
  Index min_count = 1;        // density gate threshold
  double temperature = 1.0;   // EJOP softmax temperature
  bool leave_one_out = true;  // exclude the queried sample from its own estimate
};

struct GradientMetricEstimate {
  EstimateKind kind = EstimateKind::Egop;
  SymMatrix g;
  EigenDecomp eig;
  Vector weights;              // GW only: the diagonal
  double gate_rate = 0.0;      // fraction of (sample, coordinate) gates passed
  std::string warning;         // set when every gate failed
};

/// (1/n) sum_j grad f_hat(X_j) grad f_hat(X_j)^T with f_hat the kernel
/// regressor on the dataset targets (class ids for classed data).
GradientMetricEstimate estimate_egop(const Dataset& train, const EstimatorConfig& config);

/// Oracle mode: exact evaluator, every gate open.
GradientMetricEstimate estimate_egop(const Matrix& x, const ScalarEvaluator& f, double t);

/// Per-coordinate mean |central difference| over the samples whose gate for
/// that coordinate passed. `g` holds diag(weights).
GradientMetricEstimate estimate_gw(const Dataset& train, const EstimatorConfig& config);
GradientMetricEstimate estimate_gw(const Matrix& x, const ScalarEvaluator& f, double t);

/// (1/n) sum_j J(X_j) J(X_j)^T with J the d x R Jacobian of the softmaxed
/// kernel class probabilities.
GradientMetricEstimate estimate_ejop(const Dataset& train, const EstimatorConfig& config);

/// ReliefF: `n_probes` seeded probe rows; per probe, the k nearest hits and
/// k nearest misses of every other class (prior-weighted) under range
/// normalized L1 distance. Negative weights clipped to 0.
Vector relieff_weights(const Dataset& train, Index k_hits, Index n_probes, std::uint64_t seed);

struct EstimateMeta {
  double h = 0.0;
  double t = 0.0;
  double temperature = 1.0;
  Index n = 0;
  std::uint64_t seed = 0;
};

/// Writes <stem>.csv (the matrix) and <stem>.json.
void save_estimate(const std::filesystem::path& stem, const GradientMetricEstimate& estimate,
                   const EstimateMeta& meta);

}  // namespace nnml
