#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mvlat/ingest.hpp"
#include "mvlat/model.hpp"
#include "mvlat/train.hpp"

namespace mvlat {

enum class ProbeTask { Source, Sensor };
enum class ProbeFeature { Private, Shared, Joint };

std::string task_name(ProbeTask t);
std::string feature_name(ProbeFeature f);

struct ProbeConfig {
  int hidden_width = 128;
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 32;
  ProbeTask task = ProbeTask::Sensor;
  ProbeFeature feature = ProbeFeature::Joint;
  RngSeed seed{0};
};

/// Frame-averaged frozen-encoder features for one clip.
struct ClipFeatures {
  Vector z_p;    // length d/2
  Vector z_s;    // length d/2
  Vector joint;  // length d, concat of the two
};

/// Single-view encoding per clip, pooled over frames. The identity
/// "pretrained_only" checkpoint passes raw latents through unchanged.
std::map<std::string, ClipFeatures> extract_features(
    const Checkpoint& ckpt, const std::vector<ClipRecord>& records,
    const std::string& latent_root);

/// Six probe scores (2 tasks x 3 features) plus the two DSC deltas.
struct EvalReport {
  std::map<std::string, double> scores;  // key "<task>/<feature>"
  double dsc_priv = 0.0;
  double dsc_shared = 0.0;
  std::uint64_t config_digest = 0;
};

struct TrainedProbe {
  Mlp head;
  std::vector<std::string> classes;
  double val_loss = 0.0;
};

TrainedProbe train_probe(const std::map<std::string, ClipFeatures>& features,
                         const std::vector<ClipRecord>& train_records,
                         const std::vector<ClipRecord>& val_records,
                         const ProbeConfig& cfg);

double score_probe(const TrainedProbe& probe,
                   const std::map<std::string, ClipFeatures>& features,
                   const std::vector<ClipRecord>& test_records,
                   const ProbeConfig& cfg);

double sensor_accuracy(const std::vector<std::string>& predictions,
                       const std::vector<std::string>& truths);

/// Mean per-sample |intersection| / |union|; empty vs empty counts as 1.
double jaccard_multilabel(const std::vector<std::set<std::string>>& pred_sets,
                          const std::vector<std::set<std::string>>& true_sets,
                          const std::set<std::string>& known_labels);

/// dsc_priv = score(z_p, source) - score(z_s, source);
/// dsc_shared = score(z_s, sensor) - score(z_p, sensor).
std::pair<double, double> dsc_delta(const std::map<std::string, double>& scores);

/// Full downstream protocol: extract, train the six probes, score, DSC.
EvalReport evaluate(const Checkpoint& ckpt, const DownstreamSplit& split,
                    const std::string& latent_root, const ProbeConfig& probe_defaults);

struct MethodReport {
  std::string method;
  std::string objective;
  EvalReport report;
  double train_seconds = 0.0;
};

/// Comparison table (method, objective, source, sensor, avg) and the scatter
/// table (strategy, task, overall, dsc_delta); the pretrained baseline's
/// overall scores serve as reference-line values.
struct StrategyReport {
  std::string table_csv;
  std::string scatter_csv;
  double reference_source = 0.0;
  double reference_sensor = 0.0;
};

StrategyReport strategy_report(const std::vector<MethodReport>& methods,
                               const std::vector<MethodReport>& baselines);

void save_eval_report(const std::string& path, const EvalReport& report);
EvalReport load_eval_report(const std::string& path);

}  // namespace mvlat
