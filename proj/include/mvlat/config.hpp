#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mvlat/eval.hpp"
#include "mvlat/synthdata.hpp"
#include "mvlat/train.hpp"

namespace mvlat {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One multiview objective variant inside a suite run.
struct SuiteVariant {
  std::string name;
  LossConfig loss;
};

/// Versioned experiment description. Unknown keys are errors: a typo must
/// fail loudly, not silently fall back to a default.
struct ExperimentConfig {
  int version = 1;

  // dataset: either a synthetic spec (written to data_dir) or a manifest path
  std::optional<SynthSpec> synthetic;
  std::string manifest_path;
  std::string data_dir;

  std::array<double, 3> split_ratios{39.0, 5.0, 12.0};
  RngSeed split_seed{1};
  std::size_t pairs_train = 2000;
  std::size_t pairs_val = 200;
  RngSeed pair_seed{2};
  RngSeed downstream_seed{3};

  std::vector<int> hidden_sizes;  // empty = default two-affine stack
  std::string activation = "tanh";
  RngSeed model_seed{4};

  TrainConfig train;
  ProbeConfig probe;

  std::vector<SuiteVariant> suite;
  bool suite_baselines = true;

  std::string out_dir = "out";
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);
std::string dump_config(const ExperimentConfig& cfg);

/// FNV-1a over the canonical dump of the model-defining fields (width,
/// architecture, seeds, method, objective). Embedded in every artifact.
std::uint64_t model_digest(const ExperimentConfig& cfg);

std::string loss_objective_name(const LossConfig& loss);

}  // namespace mvlat
