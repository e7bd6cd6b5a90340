#include "nnml/harness.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace nnml {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, Method>& method_table() {
  static const std::map<std::string, Method> table{
      {"euclidean", Method::Euclidean}, {"gw", Method::Gw},
      {"egop", Method::Egop},           {"ejop", Method::Ejop},
      {"relieff", Method::Relieff},     {"gerry_sym", Method::GerrySym},
      {"gerry_asym", Method::GerryAsym}, {"gerry_reg", Method::GerryReg},
      {"hamming", Method::Hamming}};
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Reads typed values out of the tree and remembers which keys were consumed.
class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    const auto node = tree_.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!node) return std::nullopt;
    return trim(*node);
  }

  double number(const std::string& key, double fallback) {
    const auto v = raw(key);
    return v ? parse_double(key, *v) : fallback;
  }

  Index integer(const std::string& key, Index fallback, Index minimum) {
    const auto v = raw(key);
    if (!v) return fallback;
    Index out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) throw ConfigError(key, "expected an integer, got '" + *v + "'");
    if (out < minimum) throw ConfigError(key, "must be >= " + std::to_string(minimum));
    return out;
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || ptr != v->data() + v->size()) {
      throw ConfigError(key, "expected a non-negative integer, got '" + *v + "'");
    }
    return out;
  }

  bool boolean(const std::string& key, bool fallback) {
    const auto v = raw(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + *v + "'");
  }

  std::vector<double> numbers(const std::string& key, std::vector<double> fallback, bool positive) {
    const auto v = raw(key);
    if (!v) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(*v)) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError(key, "list is empty");
    if (positive && std::any_of(out.begin(), out.end(), [](double x) { return !(x > 0.0); })) {
      throw ConfigError(key, "values must be > 0");
    }
    return out;
  }

  template <class T>
  T choice(const std::string& key, T fallback, const std::map<std::string, T>& options) {
    const auto v = raw(key);
    if (!v) return fallback;
    const auto it = options.find(*v);
    if (it == options.end()) {
      std::string names;
      for (const auto& [name, value] : options) names += (names.empty() ? "" : "|") + name;
      throw ConfigError(key, "expected one of " + names + ", got '" + *v + "'");
    }
    return it->second;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        throw ConfigError(section, "key outside any [section]");
      }
      for (const auto& [key, value] : body) {
        const std::string full = section + "." + key;
        if (!used_.count(full)) throw ConfigError(full, "unknown key");
      }
    }
  }

 private:
  static double parse_double(const std::string& key, const std::string& text) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(out)) {
      throw ConfigError(key, "expected a number, got '" + text + "'");
    }
    return out;
  }

  const pt::ptree& tree_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

std::string to_string(Method m) {
  for (const auto& [name, value] : method_table()) {
    if (value == m) return name;
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  const auto it = method_table().find(name);
  if (it == method_table().end()) throw std::invalid_argument("unknown method '" + name + "'");
  return it->second;
}

ExperimentConfig parse_config(const std::string& text) {
  // The INI reader only understands ';' comments.
  std::string cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    const std::string t = trim(line);
    if (!t.empty() && t[0] == '#') continue;
    cleaned += line + '\n';
  }
  pt::ptree tree;
  try {
    std::istringstream in(cleaned);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()), e.message());
  }

  Reader r(tree);
  ExperimentConfig c;
  c.task = r.choice<Task>("experiment.task", Task::Regress, {{"classify", Task::Classify}, {"regress", Task::Regress}});
  if (const auto m = r.raw("experiment.methods")) {
    c.methods.clear();
    for (const auto& name : split_list(*m)) {
      const auto it = method_table().find(name);
      require(it != method_table().end(), "experiment.methods", "unknown method '" + name + "'");
      c.methods.push_back(it->second);
    }
    require(!c.methods.empty(), "experiment.methods", "list is empty");
  }
  c.seed = r.unsigned_integer("experiment.seed", 0);
  if (const auto out = r.raw("experiment.output")) c.output = *out;
  c.folds = static_cast<int>(r.integer("experiment.folds", 2, 2));
  c.holdout_fraction = r.number("experiment.holdout_fraction", 0.25);
  require(c.holdout_fraction > 0.0 && c.holdout_fraction < 1.0, "experiment.holdout_fraction", "must be in (0, 1)");
  c.rule = r.choice<RuleKind>("experiment.rule", c.task == Task::Regress ? RuleKind::Radius : RuleKind::Knn,
                              {{"knn", RuleKind::Knn}, {"radius", RuleKind::Radius}});

  auto& d = c.data;
  d.kind = r.choice<DataSourceConfig::Kind>("data.source", DataSourceConfig::Kind::SynthSin,
                                            {{"csv", DataSourceConfig::Kind::Csv},
                                             {"synth_sin", DataSourceConfig::Kind::SynthSin},
                                             {"blobs", DataSourceConfig::Kind::Blobs}});
  if (const auto p = r.raw("data.path")) d.path = *p;
  if (const auto p = r.raw("data.test_path")) d.test_path = *p;
  if (const auto l = r.raw("data.label_column")) d.label_column = *l;
  d.test_fraction = r.number("data.test_fraction", 0.25);
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, "data.test_fraction", "must be in (0, 1)");
  if (tree.get_optional<std::string>(pt::ptree::path_type("data.seed", '.'))) d.seed = r.unsigned_integer("data.seed", 0);
  else r.raw("data.seed");
  const Index n = r.integer("data.n", d.kind == DataSourceConfig::Kind::Blobs ? 200 : 1000, 2);
  const Index dim = r.integer("data.d", d.kind == DataSourceConfig::Kind::Blobs ? 5 : 20, 1);
  d.n_test = r.integer("data.n_test", n / 2, 1);
  d.synth.n = n;
  d.synth.d = dim;
  d.synth.c1 = r.number("data.c1", d.synth.c1);
  d.synth.decay = r.number("data.decay", d.synth.decay);
  d.synth.rotate = r.boolean("data.rotate", false);
  d.synth.noise_std = r.number("data.noise", d.synth.noise_std);
  require(d.synth.noise_std >= 0.0, "data.noise", "must be >= 0");
  d.blobs.n = n;
  d.blobs.d = dim;
  d.blobs.num_classes = static_cast<int>(r.integer("data.classes", 2, 2));
  d.blobs.informative = r.integer("data.informative", 1, 1);
  require(d.blobs.informative <= dim, "data.informative", "must be <= data.d");
  d.blobs.separation = r.number("data.separation", d.blobs.separation);
  d.blobs.informative_std = r.number("data.informative_std", d.blobs.informative_std);
  d.blobs.noise_scale = r.number("data.noise_scale", d.blobs.noise_scale);
  if (d.kind == DataSourceConfig::Kind::Csv) require(!d.path.empty(), "data.path", "required when data.source = csv");
  if (d.kind == DataSourceConfig::Kind::SynthSin) {
    require(c.task == Task::Regress, "data.source", "synth_sin produces real targets; set experiment.task = regress");
  }
  if (d.kind == DataSourceConfig::Kind::Blobs) {
    require(c.task == Task::Classify, "data.source", "blobs produce classes; set experiment.task = classify");
  }

  auto& g = c.grid;
  g.k = r.numbers("grid.k", g.k, true);
  for (const double k : g.k) require(k == std::floor(k), "grid.k", "values must be integers");
  g.h = r.numbers("grid.h", g.h, true);
  g.bandwidth = r.numbers("grid.bandwidth", g.bandwidth, true);
  g.t = r.numbers("grid.t", g.t, true);
  g.C = r.numbers("grid.C", g.C, true);
  g.gamma = r.numbers("grid.gamma", g.gamma, true);
  g.epsilon = r.numbers("grid.epsilon", g.epsilon, false);
  for (const double e : g.epsilon) require(e >= 0.0, "grid.epsilon", "values must be >= 0");

  auto& e = c.estimator;
  e.kernel.shape = r.choice<KernelShape>("estimator.kernel", KernelShape::Triangle,
                                         {{"triangle", KernelShape::Triangle},
                                          {"epanechnikov", KernelShape::Epanechnikov}});
  e.min_count = r.integer("estimator.min_count", 1, 1);
  e.temperature = r.number("estimator.temperature", 1.0);
  require(e.temperature > 0.0, "estimator.temperature", "must be > 0");
  e.leave_one_out = r.boolean("estimator.leave_one_out", true);

  auto& t = c.train;
  t.epochs = static_cast<int>(r.integer("train.epochs", t.epochs, 1));
  t.batch_size = r.integer("train.batch_size", t.batch_size, 1);
  t.lr = r.number("train.lr", t.lr);
  require(t.lr > 0.0, "train.lr", "must be > 0");
  t.asym_lr = r.number("train.asym_lr", t.asym_lr);
  require(t.asym_lr > 0.0, "train.asym_lr", "must be > 0");
  t.reg_weight = r.number("train.reg_weight", t.reg_weight);
  require(t.reg_weight >= 0.0, "train.reg_weight", "must be >= 0");
  t.init = r.choice<MetricInit>("train.init", MetricInit::Zeros,
                                {{"zeros", MetricInit::Zeros}, {"identity", MetricInit::Identity},
                                 {"relieff", MetricInit::DiagonalWeights}});
  t.tolerance = r.number("train.tolerance", t.tolerance);
  require(t.tolerance >= 0.0, "train.tolerance", "must be >= 0");
  t.patience = static_cast<int>(r.integer("train.patience", t.patience, 1));
  t.reg_variant = r.choice<RegLossVariant::Kind>("train.reg_variant", RegLossVariant::Kind::UpperBound,
                                                 {{"upper_bound", RegLossVariant::Kind::UpperBound},
                                                  {"eps_insensitive", RegLossVariant::Kind::EpsInsensitive},
                                                  {"min_loss", RegLossVariant::Kind::MinLoss}});
  t.reg_mode = r.choice<MetricVariant>("train.reg_mode", MetricVariant::Symmetric,
                                       {{"symmetric", MetricVariant::Symmetric},
                                        {"asymmetric", MetricVariant::Asymmetric}});
  t.code_length = r.integer("train.code_length", t.code_length, 1);
  t.hash_batch = r.integer("train.hash_batch", t.hash_batch, 1);
  t.hash_lr = r.number("train.hash_lr", t.hash_lr);
  require(t.hash_lr > 0.0, "train.hash_lr", "must be > 0");
  t.momentum = r.number("train.momentum", t.momentum);
  require(t.momentum >= 0.0 && t.momentum < 1.0, "train.momentum", "must be in [0, 1)");
  t.zero_mean_weight = r.number("train.zero_mean_weight", t.zero_mean_weight);
  require(t.zero_mean_weight >= 0.0, "train.zero_mean_weight", "must be >= 0");
  t.relief_k = r.integer("train.relief_k", t.relief_k, 1);

  r.reject_unknown();

  for (const Method m : c.methods) {
    const bool classify_only = m == Method::Ejop || m == Method::Relieff || m == Method::GerrySym ||
                               m == Method::GerryAsym || m == Method::Hamming;
    if (classify_only && c.task != Task::Classify) {
      throw ConfigError("experiment.methods", to_string(m) + " requires experiment.task = classify");
    }
    if (m == Method::GerryReg && c.task != Task::Regress) {
      throw ConfigError("experiment.methods", "gerry_reg requires experiment.task = regress");
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot open '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json methods = json::array();
  for (const Method m : c.methods) methods.push_back(to_string(m));
  const auto& d = c.data;
  const char* source = d.kind == DataSourceConfig::Kind::Csv        ? "csv"
                       : d.kind == DataSourceConfig::Kind::SynthSin ? "synth_sin"
                                                                    : "blobs";
  const char* init = c.train.init == MetricInit::Zeros      ? "zeros"
                     : c.train.init == MetricInit::Identity ? "identity"
                                                            : "relieff";
  const char* variant = c.train.reg_variant == RegLossVariant::Kind::UpperBound       ? "upper_bound"
                        : c.train.reg_variant == RegLossVariant::Kind::EpsInsensitive ? "eps_insensitive"
                                                                                      : "min_loss";
  json out;
  out["experiment"] = {{"task", c.task == Task::Classify ? "classify" : "regress"},
                       {"methods", methods},
                       {"seed", c.seed},
                       {"output", c.output.string()},
                       {"folds", c.folds},
                       {"holdout_fraction", c.holdout_fraction},
                       {"rule", c.rule == RuleKind::Knn ? "knn" : "radius"}};
  json data = {{"source", source}, {"test_fraction", d.test_fraction}};
  if (d.kind == DataSourceConfig::Kind::Csv) {
    data["path"] = d.path.string();
    data["test_path"] = d.test_path.string();
    data["label_column"] = d.label_column;
  } else {
    data["seed"] = d.seed.value_or(c.seed);
    data["n_test"] = d.n_test;
  }
  if (d.kind == DataSourceConfig::Kind::SynthSin) {
    data.update({{"n", d.synth.n},
                 {"d", d.synth.d},
                 {"c1", d.synth.c1},
                 {"decay", d.synth.decay},
                 {"rotate", d.synth.rotate},
                 {"noise", d.synth.noise_std}});
  }
  if (d.kind == DataSourceConfig::Kind::Blobs) {
    data.update({{"n", d.blobs.n},
                 {"d", d.blobs.d},
                 {"classes", d.blobs.num_classes},
                 {"informative", d.blobs.informative},
                 {"separation", d.blobs.separation},
                 {"informative_std", d.blobs.informative_std},
                 {"noise_scale", d.blobs.noise_scale}});
  }
  out["data"] = data;
  const auto& g = c.grid;
  out["grid"] = {{"k", g.k}, {"h", g.h}, {"bandwidth", g.bandwidth}, {"t", g.t},
                 {"C", g.C}, {"gamma", g.gamma}, {"epsilon", g.epsilon}};
  out["estimator"] = {{"kernel", c.estimator.kernel.shape == KernelShape::Triangle ? "triangle" : "epanechnikov"},
                      {"min_count", c.estimator.min_count},
                      {"temperature", c.estimator.temperature},
                      {"leave_one_out", c.estimator.leave_one_out}};
  const auto& t = c.train;
  out["train"] = {{"epochs", t.epochs},
                  {"batch_size", t.batch_size},
                  {"lr", t.lr},
                  {"asym_lr", t.asym_lr},
                  {"reg_weight", t.reg_weight},
                  {"init", init},
                  {"tolerance", t.tolerance},
                  {"patience", t.patience},
                  {"reg_variant", variant},
                  {"reg_mode", t.reg_mode == MetricVariant::Symmetric ? "symmetric" : "asymmetric"},
                  {"code_length", t.code_length},
                  {"hash_batch", t.hash_batch},
                  {"hash_lr", t.hash_lr},
                  {"momentum", t.momentum},
                  {"zero_mean_weight", t.zero_mean_weight},
                  {"relief_k", t.relief_k}};
  return out;
}

}  // namespace nnml
