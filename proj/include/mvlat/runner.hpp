#pragma once

#include <string>
#include <vector>

#include "mvlat/config.hpp"

namespace mvlat::runner {

/// Everything cmd_train/cmd_eval share: manifest, splits, pairs.
struct Pipeline {
  std::vector<ClipRecord> manifest;
  SplitPlan plan;
  std::vector<ViewPair> pairs_train;
  std::vector<ViewPair> pairs_val;
  DownstreamSplit downstream;
  std::string latent_root;
  int d = 0;
};

Pipeline prepare(const ExperimentConfig& cfg);

/// Generates and writes the synthetic dataset; returns its content digest.
std::uint64_t cmd_synth(const ExperimentConfig& cfg);

/// Trains the configured method; returns the checkpoint path.
std::string cmd_train(const ExperimentConfig& cfg);

/// Probes a checkpoint; returns the eval report path. Refuses checkpoints
/// whose config digest does not match the supplied config's model section.
std::string cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Trains + evaluates every suite variant and baseline; returns the names of
/// failed members (empty on full success).
std::vector<std::string> cmd_suite(const ExperimentConfig& cfg, int parallel = 1);

std::uint64_t file_digest(const std::string& path);

}  // namespace mvlat::runner
