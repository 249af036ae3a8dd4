#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvlat/core.hpp"

namespace mvlat {

/// One manifest entry. source_labels are consumed only by downstream
/// evaluation; the training pipeline never reads them.
struct ClipRecord {
  std::string clip_id;
  std::string sensor_id;
  int segment_index = 0;
  std::vector<std::string> source_labels;
  std::string latent_path;
};

/// Two clips from the same sensor, as precomputed latents.
struct ViewPair {
  EmbeddingMatrix view1;
  EmbeddingMatrix view2;
  std::string shared_key;  // the common sensor id
  ClipRecord rec1;
  ClipRecord rec2;
};

struct SplitPlan {
  std::vector<std::string> train_sensors;
  std::vector<std::string> val_sensors;
  std::vector<std::string> test_sensors;
};

struct DownstreamSplit {
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> val;
  std::vector<ClipRecord> test;
};

/// Line-delimited JSON manifest. Rejects duplicate clip ids and duplicate
/// (sensor_id, segment_index) keys; parse errors carry the line number.
std::vector<ClipRecord> load_manifest(const std::string& path);
void save_manifest(const std::string& path, const std::vector<ClipRecord>& records);

/// Binary latent file: magic "MVLT", version u32, n_frames u32, d u32,
/// then n_frames*d little-endian f32, row-major.
EmbeddingMatrix load_latent(const std::string& path, const std::string& clip_id);
void save_latent(const std::string& path, const EmbeddingMatrix& m);

/// Uniform same-sensor pairing: sensor drawn uniformly from split_sensors,
/// then two distinct clips of that sensor. Clips reused across pairs.
std::vector<ViewPair> make_pairs(const std::vector<ClipRecord>& records,
                                 const std::vector<std::string>& split_sensors,
                                 std::size_t n_pairs, RngSeed seed,
                                 const std::string& latent_root = "");

/// Sensor-disjoint partition by largest-remainder rounding of the ratios.
SplitPlan split_sensors(const std::vector<ClipRecord>& records,
                        const std::array<double, 3>& ratios, RngSeed seed);

/// 70/10/20 clip partition of the downstream records. Every sensor appears
/// in every subset; every source label appears in the train subset.
DownstreamSplit stratified_downstream_split(const std::vector<ClipRecord>& records,
                                            RngSeed seed);

}  // namespace mvlat
