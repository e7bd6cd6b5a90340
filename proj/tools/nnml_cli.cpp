#include "nnml/harness.hpp"

#include <CLI11.hpp>
#include <tbb/global_control.h>

#include <iostream>
#include <memory>
#include <optional>

int main(int argc, char** argv) {
  CLI::App app{"Nearest-neighbor metric learning experiments"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  auto* run = app.add_subcommand("run", "Tune, fit and evaluate the methods in a config file");
  std::string config_path;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::string> run_out;
  run->add_option("--config", config_path, "Experiment config (INI)")->required();
  run->add_option("--seed", run_seed, "Override experiment.seed");
  run->add_option("--out", run_out, "Override experiment.output");

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset as CSV");
  nnml::SynthCommand sc;
  std::string kind = "sin";
  std::string synth_out;
  Eigen::Index n = 1000;
  Eigen::Index d = 20;
  std::uint64_t synth_seed = 0;
  synth->add_option("--kind", kind, "sin | blobs")->check(CLI::IsMember({"sin", "blobs"}));
  synth->add_option("--n", n, "Rows")->check(CLI::PositiveNumber);
  synth->add_option("--d", d, "Features")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--c1", sc.sin.c1, "sin: first frequency");
  synth->add_option("--decay", sc.sin.decay, "sin: frequency decay");
  synth->add_option("--noise", sc.sin.noise_std, "sin: noise std")->check(CLI::NonNegativeNumber);
  synth->add_flag("--rotate", sc.sin.rotate, "sin: rotate features after drawing targets");
  synth->add_option("--classes", sc.blobs.num_classes, "blobs: classes")->check(CLI::Range(2, 1000));
  synth->add_option("--informative", sc.blobs.informative, "blobs: informative coordinates");
  synth->add_option("--separation", sc.blobs.separation, "blobs: center spacing");
  synth->add_option("--noise-scale", sc.blobs.noise_scale, "blobs: std of noise coordinates");
  synth->add_option("--out", synth_out, "Output CSV path")->required();

  auto* oracle = app.add_subcommand("oracle", "Run a brute-force oracle suite");
  std::string suite;
  Eigen::Index budget = 200;
  std::uint64_t oracle_seed = 0;
  std::optional<std::string> oracle_out;
  oracle->add_option("--suite", suite, "Suite name")->required();
  oracle->add_option("--budget", budget, "Random instances")->check(CLI::PositiveNumber);
  oracle->add_option("--seed", oracle_seed, "Seed");
  oracle->add_option("--out", oracle_out, "Directory for a failing instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return nnml::kExitUsage;
  }

  std::unique_ptr<tbb::global_control> limit;
  if (threads > 0) {
    limit = std::make_unique<tbb::global_control>(tbb::global_control::max_allowed_parallelism,
                                                  static_cast<std::size_t>(threads));
  }

  if (run->parsed()) {
    nnml::RunOverrides o;
    o.seed = run_seed;
    if (run_out) o.output = *run_out;
    return nnml::cmd_run(config_path, o, std::cerr);
  }
  if (synth->parsed()) {
    sc.kind = kind == "sin" ? nnml::SynthCommand::Kind::Sin : nnml::SynthCommand::Kind::Blobs;
    sc.sin.n = sc.blobs.n = n;
    sc.sin.d = sc.blobs.d = d;
    sc.sin.seed = sc.blobs.seed = synth_seed;
    sc.output = synth_out;
    return nnml::cmd_synth(sc, std::cerr);
  }
  std::optional<std::filesystem::path> out_dir;
  if (oracle_out) out_dir = *oracle_out;
  return nnml::cmd_oracle(suite, budget, oracle_seed, out_dir, std::cerr);
}
