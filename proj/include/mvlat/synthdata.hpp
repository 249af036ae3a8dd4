#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvlat/core.hpp"
#include "mvlat/ingest.hpp"

namespace mvlat {

/// Additive linear factor model: frame = sensor prototype + sum of source
/// prototypes + Gaussian noise. Prototypes are unit-norm so noise_sigma is
/// comparable across specs.
struct SynthSpec {
  int n_sensors = 12;
  int n_sources = 8;
  int d = 32;
  int n_frames = 8;
  int clips_per_sensor = 200;
  int max_labels_per_clip = 3;
  double noise_sigma = 0.1;
  RngSeed seed{0};
};

struct SynthDataset {
  std::vector<ClipRecord> manifest;
  std::map<std::string, EmbeddingMatrix> latents;
  Matrix sensor_prototypes;  // (n_sensors x d)
  Matrix source_prototypes;  // (n_sources x d)
};

void validate_spec(const SynthSpec& spec);

SynthDataset generate(const SynthSpec& spec);

/// Least-squares linear readout from frame-averaged latents to sensor one-hot
/// and source multi-hot, fit on half the clips and scored on the other half.
struct Recoverability {
  double sensor_acc = 0.0;
  double source_jaccard = 0.0;
};
Recoverability recoverability_check(const SynthDataset& ds);

/// Writes manifest + one latent file per clip under dir (created if needed).
void write_dataset(const SynthDataset& ds, const std::string& dir);

std::string sensor_name(int k);
std::string source_name(int l);

}  // namespace mvlat
