#include <CLI11.hpp>
#include <iostream>

#include "mvlat/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitPartial = 3;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;
  int parallel = 1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config file")->required();
  cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "training seed (overrides config)");
  cmd->add_option("--parallel", opts.parallel, "parallel suite members")
      ->check(CLI::PositiveNumber);
}

mvlat::ExperimentConfig resolve(const CommonOpts& opts) {
  auto cfg = mvlat::load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed >= 0) cfg.train.seed.value = static_cast<std::uint64_t>(opts.seed);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view latent subspace training and evaluation"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, eval_opts, suite_opts;
  std::string checkpoint_path;

  auto* synth = app.add_subcommand("synth", "generate a synthetic latent dataset");
  add_common(synth, synth_opts);
  auto* train = app.add_subcommand("train", "train the configured method");
  add_common(train, train_opts);
  auto* eval = app.add_subcommand("eval", "probe a trained checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  auto* suite = app.add_subcommand("suite", "train and compare all configured methods");
  add_common(suite, suite_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (synth->parsed()) {
      const auto digest = mvlat::runner::cmd_synth(resolve(synth_opts));
      std::cout << "dataset digest: " << std::hex << digest << std::dec << "\n";
    } else if (train->parsed()) {
      const auto path = mvlat::runner::cmd_train(resolve(train_opts));
      std::cout << "checkpoint: " << path << "\n";
    } else if (eval->parsed()) {
      const auto path = mvlat::runner::cmd_eval(resolve(eval_opts), checkpoint_path);
      std::cout << "report: " << path << "\n";
    } else if (suite->parsed()) {
      const auto failed =
          mvlat::runner::cmd_suite(resolve(suite_opts), suite_opts.parallel);
      if (!failed.empty()) {
        for (const auto& f : failed) std::cerr << "failed: " << f << "\n";
        return kExitPartial;
      }
      std::cout << "suite complete\n";
    }
  } catch (const mvlat::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
