#include "nnml/harness.hpp"
#include "nnml/gerrymander.hpp"
#include "nnml/hamming.hpp"
#include "nnml/oracle.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

namespace nnml {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSplitStream = 0x73706c74ULL;
constexpr std::uint64_t kCvStream = 0x63765f66ULL;
constexpr std::uint64_t kHoldoutStream = 0x686f6c64ULL;
constexpr std::uint64_t kFitStream = 0x66697400ULL;

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (const char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + '"';
}

bool is_estimator(Method m) {
  return m == Method::Euclidean || m == Method::Gw || m == Method::Egop || m == Method::Ejop ||
         m == Method::Relieff;
}

// Median Euclidean distance over pairs among the first rows; 1 when degenerate.
double median_pairwise_distance(const Matrix& rows) {
  const Index m = std::min<Index>(rows.rows(), 400);
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Index i = 0; i < m; ++i) {
    for (Index j = i + 1; j < m; ++j) dist.push_back((rows.row(i) - rows.row(j)).norm());
  }
  if (dist.empty()) return 1.0;
  const auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  return *mid > 0.0 ? *mid : 1.0;
}

struct Fitted {
  std::optional<Matrix> db_map;
  std::optional<Matrix> query_map;
  std::optional<HammingHasher> hasher;
  double scale = 1.0;  // median pairwise distance among mapped fit rows

  std::optional<GradientMetricEstimate> estimate;
  EstimateMeta estimate_meta;
  Vector relief;
  std::optional<MetricModel> metric_model;
  std::optional<HammingModel> hamming_model;
};

void finish(Fitted& f, const Dataset& fit) {
  const Matrix mapped = f.db_map ? Matrix(fit.features() * f.db_map->transpose()) : fit.features();
  f.scale = median_pairwise_distance(mapped);
}

Vector relief_for(const Dataset& fit, const ExperimentConfig& cfg) {
  std::vector<Index> sizes(static_cast<std::size_t>(fit.num_classes()) + 1, 0);
  for (const int l : fit.labels()) ++sizes[static_cast<std::size_t>(l)];
  const Index smallest = *std::min_element(sizes.begin() + 1, sizes.end());
  const Index k_hits = std::max<Index>(1, std::min(cfg.train.relief_k, smallest - 1));
  return relieff_weights(fit, k_hits, fit.n(), derive_seed(cfg.seed, kFitStream));
}

Fitted fit_estimator(Method method, const Dataset& fit, const ParamSet& outer, const ExperimentConfig& cfg) {
  Fitted f;
  if (method == Method::Gw || method == Method::Egop || method == Method::Ejop) {
    EstimatorConfig ec = cfg.estimator;
    const double base = median_pairwise_distance(fit.features());
    ec.kernel.bandwidth = outer.at("bandwidth") * base;
    ec.t = outer.at("t") * ec.kernel.bandwidth;
    GradientMetricEstimate est = method == Method::Egop ? estimate_egop(fit, ec)
                                 : method == Method::Gw ? estimate_gw(fit, ec)
                                                        : estimate_ejop(fit, ec);
    f.db_map = method == Method::Gw ? Matrix(est.weights.cwiseSqrt().asDiagonal())
                                    : whitening_transform(est.g).matrix();
    f.estimate_meta = {ec.kernel.bandwidth, ec.t, ec.temperature, fit.n(), cfg.seed};
    f.estimate = std::move(est);
  } else if (method == Method::Relieff) {
    f.relief = relief_for(fit, cfg);
    f.db_map = Matrix(f.relief.cwiseSqrt().asDiagonal());
  }
  finish(f, fit);
  return f;
}

std::uint64_t method_seed(const ExperimentConfig& cfg, Method m) {
  return derive_seed(cfg.seed, kFitStream + 1 + static_cast<std::uint64_t>(m));
}

Fitted fit_trained(Method method, const Dataset& fit, const ParamSet& p, const ExperimentConfig& cfg) {
  Fitted f;
  const auto& t = cfg.train;
  const Index k = static_cast<Index>(p.at("k"));
  if (method == Method::GerrySym || method == Method::GerryAsym) {
    GerryTrainConfig gc;
    gc.k = k;
    gc.C = p.at("C");
    gc.epochs = t.epochs;
    gc.batch_size = t.batch_size;
    gc.tolerance = t.tolerance;
    gc.patience = t.patience;
    gc.reg_weight = t.reg_weight;
    gc.seed = method_seed(cfg, method);
    gc.init = t.init;
    if (t.init == MetricInit::DiagonalWeights) gc.init_weights = relief_for(fit, cfg);
    const bool asym = method == Method::GerryAsym;
    gc.lr.base = asym ? t.asym_lr : t.lr;
    MetricModel model = train_sgd(fit, gc, asym ? MetricVariant::Asymmetric : MetricVariant::Symmetric);
    auto [db, query] = model.neighbor_maps();
    f.db_map = std::move(db);
    f.query_map = std::move(query);
    f.metric_model = std::move(model);
  } else if (method == Method::GerryReg) {
    RegTrainConfig rc;
    rc.k = k;
    rc.C = p.at("C");
    const double gamma = p.at("gamma");
    switch (t.reg_variant) {
      case RegLossVariant::Kind::UpperBound: rc.variant = RegLossVariant::upper_bound(gamma); break;
      case RegLossVariant::Kind::EpsInsensitive:
        rc.variant = RegLossVariant::eps_insensitive(p.at("epsilon"), gamma);
        break;
      case RegLossVariant::Kind::MinLoss: rc.variant = RegLossVariant::min_loss(gamma); break;
    }
    rc.epochs = t.epochs;
    rc.batch_size = t.batch_size;
    rc.tolerance = t.tolerance;
    rc.patience = t.patience;
    rc.reg_weight = t.reg_weight;
    rc.seed = method_seed(cfg, method);
    rc.init = t.init == MetricInit::DiagonalWeights ? MetricInit::Identity : t.init;
    rc.lr.base = t.reg_mode == MetricVariant::Asymmetric ? t.asym_lr : t.lr;
    MetricModel model = train_reg_sgd(fit, rc, t.reg_mode);
    auto [db, query] = model.neighbor_maps();
    f.db_map = std::move(db);
    f.query_map = std::move(query);
    f.metric_model = std::move(model);
  } else {
    HammingTrainConfig hc;
    hc.k = k;
    hc.C = p.at("C");
    hc.code_length = t.code_length;
    hc.epochs = t.epochs;
    hc.batch_size = t.hash_batch;
    hc.lr = t.hash_lr;
    hc.momentum = t.momentum;
    hc.zero_mean_weight = t.zero_mean_weight;
    hc.tolerance = t.tolerance;
    hc.patience = t.patience;
    hc.seed = method_seed(cfg, method);
    HammingModel model = train_hamming(fit, hc, HashMode::Asymmetric);
    f.hasher = model.hasher;
    f.hamming_model = std::move(model);
  }
  if (!f.hasher) finish(f, fit);
  return f;
}

Vector predict(const Fitted& f, const Dataset& fit, const Matrix& queries, RuleKind rule, double param) {
  if (f.hasher) return HammingRetriever(fit, *f.hasher).predict(queries, static_cast<Index>(param));
  const NeighborIndex index(fit, f.db_map, f.query_map);
  const NeighborRule r = rule == RuleKind::Knn ? NeighborRule::knn(static_cast<Index>(param))
                                               : NeighborRule::within(param * f.scale);
  return index.predict(queries, r);
}

// Lower is better: error rate, or plain MSE (validation folds may have
// near-constant targets, where nMSE is undefined).
double validation_error(const Vector& pred, const Dataset& truth) {
  const Vector& y = truth.targets();
  if (truth.is_classed()) {
    Index wrong = 0;
    for (Index i = 0; i < y.size(); ++i) wrong += std::lround(pred(i)) != std::lround(y(i));
    return static_cast<double>(wrong) / static_cast<double>(y.size());
  }
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

struct Choice {
  Fitted fitted;
  ParamSet params;
  double predict_param = 0.0;
  std::vector<FoldScore> tuning;
};

Choice tune_estimator(Method method, const Dataset& train, const ExperimentConfig& cfg) {
  const bool gradient = method == Method::Gw || method == Method::Egop || method == Method::Ejop;
  const std::vector<ParamSet> outer =
      gradient ? expand_grid({{"bandwidth", cfg.grid.bandwidth}, {"t", cfg.grid.t}}) : std::vector<ParamSet>{{}};
  const std::string inner_name = cfg.rule == RuleKind::Knn ? "k" : "h";
  const std::vector<double>& inner = cfg.rule == RuleKind::Knn ? cfg.grid.k : cfg.grid.h;
  const auto folds = fold_pairs(kfold(train.n(), cfg.folds, derive_seed(cfg.seed, kCvStream)));
  const std::size_t F = folds.size();

  // errors[(o * F + f) * inner + i]
  std::vector<double> errors(outer.size() * F * inner.size(), 0.0);
  tbb::parallel_for(std::size_t{0}, outer.size() * F, [&](std::size_t of) {
    const std::size_t o = of / F;
    const std::size_t f = of % F;
    const Dataset fit = train.subset(folds[f].fit);
    const Dataset val = train.subset(folds[f].validate);
    const Fitted fitted = fit_estimator(method, fit, outer[o], cfg);
    for (std::size_t i = 0; i < inner.size(); ++i) {
      const double param = inner[i];
      if (cfg.rule == RuleKind::Knn && param > static_cast<double>(fit.n())) {
        errors[of * inner.size() + i] = std::numeric_limits<double>::infinity();
        continue;
      }
      errors[of * inner.size() + i] = validation_error(predict(fitted, fit, val.features(), cfg.rule, param), val);
    }
  });

  std::size_t best_o = 0;
  std::size_t best_i = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t o = 0; o < outer.size(); ++o) {
    for (std::size_t i = 0; i < inner.size(); ++i) {
      double mean = 0.0;
      for (std::size_t f = 0; f < F; ++f) mean += errors[(o * F + f) * inner.size() + i];
      mean /= static_cast<double>(F);
      if (mean < best) {
        best = mean;
        best_o = o;
        best_i = i;
      }
    }
  }
  Choice c;
  c.params = outer[best_o];
  c.params[inner_name] = inner[best_i];
  c.predict_param = inner[best_i];
  for (std::size_t f = 0; f < F; ++f) {
    c.tuning.push_back({"cv" + std::to_string(f), errors[(best_o * F + f) * inner.size() + best_i]});
  }
  c.fitted = fit_estimator(method, train, outer[best_o], cfg);
  return c;
}

Choice tune_trained(Method method, const Dataset& train, const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::vector<double>>> axes{{"k", cfg.grid.k}, {"C", cfg.grid.C}};
  if (method == Method::GerryReg) {
    axes.emplace_back("gamma", cfg.grid.gamma);
    if (cfg.train.reg_variant == RegLossVariant::Kind::EpsInsensitive) axes.emplace_back("epsilon", cfg.grid.epsilon);
  }
  const std::vector<ParamSet> grid = expand_grid(axes);
  const FoldPair split = holdout(train.n(), cfg.holdout_fraction, derive_seed(cfg.seed, kHoldoutStream));
  const Dataset fit = train.subset(split.fit);
  const Dataset val = train.subset(split.validate);

  std::vector<double> errors(grid.size(), std::numeric_limits<double>::infinity());
  tbb::parallel_for(std::size_t{0}, grid.size(), [&](std::size_t g) {
    const Index k = static_cast<Index>(grid[g].at("k"));
    if (k >= fit.n()) return;
    const Fitted fitted = fit_trained(method, fit, grid[g], cfg);
    errors[g] = validation_error(predict(fitted, fit, val.features(), RuleKind::Knn, grid[g].at("k")), val);
  });
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (errors[g] < errors[best]) best = g;
  }
  if (!std::isfinite(errors[best])) throw std::runtime_error(to_string(method) + ": every k in grid.k is too large");
  Choice c;
  c.params = grid[best];
  c.predict_param = grid[best].at("k");
  c.tuning.push_back({"holdout", errors[best]});
  c.fitted = fit_trained(method, train, grid[best], cfg);
  return c;
}

void write_trace(const fs::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,mean_surrogate,skipped\n";
  for (const auto& row : trace) out << row.epoch << ',' << format_number(row.mean_surrogate) << ',' << row.skipped << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json save_model(Method method, const Choice& c, const Dataset& train, const ExperimentConfig& cfg,
                          const std::optional<fs::path>& dir) {
  const std::string name = to_string(method);
  const Fitted& f = c.fitted;
  nlohmann::json meta;
  if (f.estimate) {
    meta = {{"kind", to_string(f.estimate->kind)}, {"h", f.estimate_meta.h},        {"t", f.estimate_meta.t},
            {"temperature", f.estimate_meta.temperature}, {"n", f.estimate_meta.n}, {"seed", f.estimate_meta.seed}};
    if (dir) save_estimate(*dir / name, *f.estimate, f.estimate_meta);
  } else if (method == Method::Relieff) {
    meta = {{"kind", "relieff"}, {"n", train.n()}, {"seed", cfg.seed}};
    if (dir) {
      write_matrix_csv(*dir / (name + ".csv"), Matrix(f.relief));
      write_json(*dir / (name + ".json"), meta);
    }
  } else if (f.metric_model) {
    const MetricModel& m = *f.metric_model;
    const bool sym = m.variant == MetricVariant::Symmetric;
    meta = {{"variant", sym ? "symmetric" : "asymmetric"},
            {"d", train.d()},
            {"k", m.k},
            {"C", c.params.at("C")},
            {"seed", method_seed(cfg, method)},
            {"epochs_run", m.trace.size()},
            {"task", method == Method::GerryReg ? "regress" : "classify"}};
    if (method == Method::GerryReg) meta["gamma"] = c.params.at("gamma");
    if (dir) {
      if (sym) {
        write_matrix_csv(*dir / (name + ".csv"), m.symmetric.w.matrix());
      } else {
        write_matrix_csv(*dir / (name + "_u.csv"), m.asymmetric.u);
        write_matrix_csv(*dir / (name + "_v.csv"), m.asymmetric.v);
      }
      write_json(*dir / (name + ".json"), meta);
      write_trace(*dir / (name + "_trace.csv"), m.trace);
    }
  } else if (f.hamming_model) {
    const HammingModel& m = *f.hamming_model;
    meta = {{"c", m.hasher.code_length()},
            {"mode", m.hasher.mode == HashMode::Symmetric ? "symmetric" : "asymmetric"},
            {"relaxation", m.hasher.relaxation == Relaxation::Tanh ? "tanh" : "identity"},
            {"seed", method_seed(cfg, method)}};
    if (dir) {
      write_matrix_csv(*dir / (name + "_u.csv"), m.hasher.u);
      write_matrix_csv(*dir / (name + "_v.csv"), m.hasher.v);
      write_json(*dir / (name + ".json"), meta);
      write_trace(*dir / (name + "_trace.csv"), m.trace);
    }
  } else {
    meta = {{"kind", "euclidean"}};
  }
  return meta;
}

Dataset load_labeled(const fs::path& path, const ExperimentConfig& cfg) {
  return load_csv(path, cfg.data.label_column, cfg.task == Task::Classify ? LabelKind::Class : LabelKind::Real);
}

std::vector<Index> range(Index begin, Index end) {
  std::vector<Index> out(static_cast<std::size_t>(end - begin));
  std::iota(out.begin(), out.end(), begin);
  return out;
}

}  // namespace

TrainTest load_data(const ExperimentConfig& cfg) {
  const auto& d = cfg.data;
  TrainTest out;
  switch (d.kind) {
    case DataSourceConfig::Kind::Csv: {
      out.train = load_labeled(d.path, cfg);
      if (!d.test_path.empty()) {
        out.test = load_labeled(d.test_path, cfg);
      } else {
        const FoldPair split = holdout(out.train.n(), d.test_fraction, derive_seed(cfg.seed, kSplitStream));
        out.test = out.train.subset(split.validate);
        out.train = out.train.subset(split.fit);
      }
      break;
    }
    case DataSourceConfig::Kind::SynthSin: {
      SynthSinParams p = d.synth;
      p.n = d.synth.n + d.n_test;
      p.seed = d.seed.value_or(cfg.seed);
      const Dataset all = synth_sin(p);
      out.train = all.subset(range(0, d.synth.n));
      out.test = all.subset(range(d.synth.n, p.n));
      break;
    }
    case DataSourceConfig::Kind::Blobs: {
      BlobParams p = d.blobs;
      p.n = d.blobs.n + d.n_test;
      p.seed = d.seed.value_or(cfg.seed);
      const Dataset all = synth_blobs(p);
      out.train = all.subset(range(0, d.blobs.n));
      out.test = all.subset(range(d.blobs.n, p.n));
      break;
    }
  }
  if (out.train.d() != out.test.d()) throw DataError("train and test files have different feature counts");
  for (const Method m : cfg.methods) {
    if ((m == Method::Egop || m == Method::Gw) && out.train.is_classed() && out.train.num_classes() > 2) {
      throw ConfigError("experiment.methods", to_string(m) + " needs real targets or binary labels");
    }
  }
  return out;
}

MethodOutcome run_method(Method method, const Dataset& train, const Dataset& test, const ExperimentConfig& cfg,
                         const std::optional<fs::path>& model_dir) {
  const Choice c = is_estimator(method) ? tune_estimator(method, train, cfg) : tune_trained(method, train, cfg);
  const RuleKind rule = is_estimator(method) ? cfg.rule : RuleKind::Knn;
  const Vector pred = predict(c.fitted, train, test.features(), rule, c.predict_param);
  const Vector& truth = test.targets();
  MethodOutcome out;
  out.method = method;
  out.params = c.params;
  out.tuning = c.tuning;
  out.test = evaluate(std::span<const double>(pred.data(), static_cast<std::size_t>(pred.size())),
                      std::span<const double>(truth.data(), static_cast<std::size_t>(truth.size())),
                      test.is_classed() ? Task::Classify : Task::Regress);
  out.test.hyperparams = c.params;
  out.test.seed = cfg.seed;
  out.model_meta = save_model(method, c, train, cfg, model_dir);
  return out;
}

int cmd_run(const fs::path& config_path, const RunOverrides& overrides, std::ostream& log) {
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.output) cfg.output = *overrides.output;

  try {
    const TrainTest data = load_data(cfg);
    auto [stats, normalized] = zscore_fit_apply(data.train, {data.test});
    const Dataset& train = normalized[0];
    const Dataset& test = normalized[1];

    const fs::path models = cfg.output / "models";
    fs::create_directories(models);
    write_json(cfg.output / "config.json", config_to_json(cfg));
    write_json(models / "normalization.json",
               {{"mean", std::vector<double>(stats.mean.data(), stats.mean.data() + stats.mean.size())},
                {"std", std::vector<double>(stats.std.data(), stats.std.data() + stats.std.size())}});
    const fs::path reports = cfg.output / "eval_reports.csv";
    fs::remove(reports);

    std::ofstream results(cfg.output / "results.csv");
    if (!results) throw std::runtime_error("cannot write " + (cfg.output / "results.csv").string());
    results << "method,fold,params_json,metric,value,seed\n";
    const std::string val_metric = train.is_classed() ? "validation_error_rate" : "validation_mse";
    for (const Method m : cfg.methods) {
      const MethodOutcome o = run_method(m, train, test, cfg, models);
      const std::string params = csv_quote(params_json(o.params));
      for (const auto& fold : o.tuning) {
        results << to_string(m) << ',' << fold.fold << ',' << params << ',' << val_metric << ','
                << format_number(fold.value) << ',' << cfg.seed << '\n';
      }
      results << to_string(m) << ",test," << params << ',' << o.test.metric_name << ','
              << format_number(o.test.value) << ',' << cfg.seed << '\n';
      append_eval_report(reports, o.test);
      log << to_string(m) << ": " << o.test.metric_name << " = " << format_number(o.test.value) << "  "
          << params_json(o.params) << '\n';
    }
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    log << "run failed: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_synth(const SynthCommand& command, std::ostream& log) {
  try {
    const Dataset data = command.kind == SynthCommand::Kind::Sin ? synth_sin(command.sin) : synth_blobs(command.blobs);
    if (command.output.has_parent_path()) fs::create_directories(command.output.parent_path());
    save_csv(command.output, data, "y");
    log << "wrote " << data.n() << " rows x " << data.d() << " features to " << command.output.string() << '\n';
  } catch (const std::exception& e) {
    log << "synth failed: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_oracle(const std::string& suite, Index budget, std::uint64_t seed, const std::optional<fs::path>& out_dir,
               std::ostream& log) {
  oracle::SuiteResult r;
  try {
    r = oracle::run_suite(suite, budget, seed);
  } catch (const oracle::UnknownSuite& e) {
    std::string names;
    for (const auto& n : oracle::suite_names()) names += (names.empty() ? "" : ", ") + n;
    log << e.what() << " (available: " << names << ")\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    log << "oracle failed: " << e.what() << '\n';
    return kExitFailure;
  }
  log << suite << ": " << r.instances << " instances, " << r.failures << " failures\n";
  if (r.passed()) return kExitOk;
  log << "first failure: " << r.message << '\n';
  if (r.failing_instance) {
    const std::string dump = r.failing_instance->dump();
    log << "instance: " << dump << '\n';
    if (out_dir) {
      fs::create_directories(*out_dir);
      write_json(*out_dir / ("oracle_failure_" + suite + ".json"), *r.failing_instance);
    }
  }
  return kExitFailure;
}

}  // namespace nnml
