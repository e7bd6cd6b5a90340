#pragma once

// Experiment orchestration behind the command-line tool: configuration,
// tuning, fitting, evaluation and report files.

#include "nnml/dataset.hpp"
#include "nnml/gradient_metrics.hpp"
#include "nnml/predictors.hpp"
#include "nnml/regression_ml.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nnml {

enum class Method { Euclidean, Gw, Egop, Ejop, Relieff, GerrySym, GerryAsym, GerryReg, Hamming };

std::string to_string(Method m);
Method parse_method(const std::string& name);  // throws std::invalid_argument

/// Invalid configuration; `field()` is the dotted key at fault.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct DataSourceConfig {
  enum class Kind { Csv, SynthSin, Blobs };
  Kind kind = Kind::SynthSin;
  std::filesystem::path path;
  std::filesystem::path test_path;  // optional separate test file
  std::string label_column = "y";
  double test_fraction = 0.25;      // used when there is no test file
  Index n_test = 0;                 // synthetic sources: rows appended for testing
  std::optional<std::uint64_t> seed;  // synthetic sources; defaults to the experiment seed
  SynthSinParams synth{};
  BlobParams blobs{};
};

/// Search grids. `h` (prediction radius) and `bandwidth` (estimator kernel
/// width) are fractions of the median pairwise training distance in the space
/// where they apply; `t` is a fraction of the bandwidth.
struct GridConfig {
  std::vector<double> k{1, 3, 5, 7, 9};
  std::vector<double> h{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<double> bandwidth{0.4, 0.6, 0.8, 1.0, 1.2};
  std::vector<double> t{0.1, 0.3};
  std::vector<double> C{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  std::vector<double> gamma = default_gamma_grid();
  std::vector<double> epsilon{0.01};
};

enum class RuleKind { Knn, Radius };

struct TrainSettings {
  int epochs = 20;
  Index batch_size = 1;
  double lr = 1.0;            // symmetric metrics: eta(t) = lr / t
  double asym_lr = 0.05;      // asymmetric metrics: eta(t) = asym_lr / t
  double reg_weight = 1.0;
  MetricInit init = MetricInit::Zeros;
  double tolerance = 1e-4;
  int patience = 1;
  RegLossVariant::Kind reg_variant = RegLossVariant::Kind::UpperBound;
  Index code_length = 8;
  Index hash_batch = 10;
  double hash_lr = 1.0;
  double momentum = 0.9;
  double zero_mean_weight = 0.1;
  Index relief_k = 10;
  MetricVariant reg_mode = MetricVariant::Symmetric;
};

struct ExperimentConfig {
  Task task = Task::Regress;
  std::vector<Method> methods{Method::Euclidean};
  DataSourceConfig data{};
  GridConfig grid{};
  RuleKind rule = RuleKind::Radius;
  int folds = 2;
  double holdout_fraction = 0.25;
  EstimatorConfig estimator{};  // bandwidth and t are overwritten during tuning
  TrainSettings train{};
  std::uint64_t seed = 0;
  std::filesystem::path output = "results";
};

/// Parses the INI-style text: `[section]` headers and `key = value` lines,
/// `;` or `#` comments, lists comma-separated. Unknown keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration, defaults included.
nlohmann::json config_to_json(const ExperimentConfig& config);

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Materializes the data source and its train/test split (unnormalized).
TrainTest load_data(const ExperimentConfig& config);

/// Validation error of the chosen parameters on one tuning fold.
struct FoldScore {
  std::string fold;
  double value = 0.0;
};

struct MethodOutcome {
  Method method = Method::Euclidean;
  ParamSet params;
  std::vector<FoldScore> tuning;
  EvalReport test;
  nlohmann::json model_meta;
};

/// Tunes, refits on all of `train`, and evaluates on `test`. Both sets must
/// already be normalized. When `model_dir` is set, model files are written
/// there.
MethodOutcome run_method(Method method, const Dataset& train, const Dataset& test, const ExperimentConfig& config,
                         const std::optional<std::filesystem::path>& model_dir = std::nullopt);

struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output;
};

/// Exit codes shared by the commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Runs every configured method; writes results.csv, eval_reports.csv,
/// config.json and models/ (including the train-fitted normalization.json)
/// under the output directory.
int cmd_run(const std::filesystem::path& config_path, const RunOverrides& overrides, std::ostream& log);

struct SynthCommand {
  enum class Kind { Sin, Blobs };
  Kind kind = Kind::Sin;
  SynthSinParams sin{};
  BlobParams blobs{};
  std::filesystem::path output;
};

int cmd_synth(const SynthCommand& command, std::ostream& log);

/// Runs one oracle suite. A failing instance is written to
/// `<out_dir>/oracle_failure_<suite>.json` when `out_dir` is set, and always
/// echoed to the log.
int cmd_oracle(const std::string& suite, Index budget, std::uint64_t seed,
               const std::optional<std::filesystem::path>& out_dir, std::ostream& log);

}  // namespace nnml
