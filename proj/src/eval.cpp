#include "mvlat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <sstream>

#include "mvlat/rng.hpp"

namespace mvlat {

using nlohmann::json;

std::string task_name(ProbeTask t) {
  return t == ProbeTask::Source ? "source" : "sensor";
}

std::string feature_name(ProbeFeature f) {
  switch (f) {
    case ProbeFeature::Private: return "private";
    case ProbeFeature::Shared: return "shared";
    case ProbeFeature::Joint: return "joint";
  }
  return "joint";
}

std::map<std::string, ClipFeatures> extract_features(
    const Checkpoint& ckpt, const std::vector<ClipRecord>& records,
    const std::string& latent_root) {
  std::map<std::string, ClipFeatures> features;
  for (const auto& rec : records) {
    const std::string path =
        latent_root.empty() ? rec.latent_path
                            : latent_root + "/" + rec.latent_path;
    const EmbeddingMatrix emb = load_latent(path, rec.clip_id);
    Matrix encoded;
    if (ckpt.method == "pretrained_only") {
      encoded = emb.values;
    } else {
      if (static_cast<int>(emb.d()) != ckpt.d) {
        throw DimensionError("clip '" + rec.clip_id + "' width mismatch with checkpoint");
      }
      encoded = ckpt.encoder.forward(emb.values);
    }
    const Eigen::Index half = encoded.cols() / 2;
    ClipFeatures f;
    f.joint = encoded.colwise().mean().transpose();
    f.z_p = f.joint.head(half);
    f.z_s = f.joint.tail(half);
    features.emplace(rec.clip_id, std::move(f));
  }
  return features;
}

namespace {

const Vector& select_feature(const ClipFeatures& f, ProbeFeature feature) {
  switch (feature) {
    case ProbeFeature::Private: return f.z_p;
    case ProbeFeature::Shared: return f.z_s;
    case ProbeFeature::Joint: return f.joint;
  }
  return f.joint;
}

std::vector<std::string> collect_probe_classes(const std::vector<ClipRecord>& records,
                                               ProbeTask task) {
  std::set<std::string> classes;
  for (const auto& rec : records) {
    if (task == ProbeTask::Sensor) {
      classes.insert(rec.sensor_id);
    } else {
      classes.insert(rec.source_labels.begin(), rec.source_labels.end());
    }
  }
  if (classes.empty()) throw ValueError("probe: no classes in training records");
  return {classes.begin(), classes.end()};
}

int probe_class_index(const std::vector<std::string>& classes,
                      const std::string& name) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), name);
  if (it == classes.end() || *it != name) {
    throw ValueError("probe: label '" + name + "' missing from the class set");
  }
  return static_cast<int>(it - classes.begin());
}

struct ProbeData {
  Matrix x;
  std::vector<int> sensor_targets;
  Matrix source_targets;
};

ProbeData build_probe_data(const std::map<std::string, ClipFeatures>& features,
                           const std::vector<ClipRecord>& records,
                           const std::vector<std::string>& classes,
                           const ProbeConfig& cfg) {
  ProbeData data;
  const auto missing = features.end();
  Eigen::Index dim = 0;
  for (const auto& rec : records) {
    if (features.find(rec.clip_id) == missing) {
      throw ValueError("probe: missing features for clip '" + rec.clip_id + "'");
    }
  }
  data.x.resize(static_cast<Eigen::Index>(records.size()),
                select_feature(features.at(records.front().clip_id), cfg.feature).size());
  dim = data.x.cols();
  if (cfg.task == ProbeTask::Source) {
    data.source_targets = Matrix::Zero(static_cast<Eigen::Index>(records.size()),
                                       static_cast<Eigen::Index>(classes.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const Vector& v = select_feature(features.at(rec.clip_id), cfg.feature);
    if (v.size() != dim) throw DimensionError("probe: inconsistent feature widths");
    data.x.row(static_cast<Eigen::Index>(i)) = v.transpose();
    if (cfg.task == ProbeTask::Sensor) {
      data.sensor_targets.push_back(probe_class_index(classes, rec.sensor_id));
    } else {
      for (const auto& label : rec.source_labels) {
        data.source_targets(static_cast<Eigen::Index>(i),
                            probe_class_index(classes, label)) = 1.0f;
      }
    }
  }
  return data;
}

double probe_loss(const Mlp& head, const ProbeData& data, ProbeTask task,
                  const std::vector<std::size_t>& idxs, Mlp::Cache* cache,
                  Matrix* d_logits_out, Matrix* x_batch_out) {
  Matrix x(static_cast<Eigen::Index>(idxs.size()), data.x.cols());
  for (std::size_t i = 0; i < idxs.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = data.x.row(static_cast<Eigen::Index>(idxs[i]));
  }
  const Matrix logits = head.forward(x, cache);
  double loss;
  if (task == ProbeTask::Sensor) {
    std::vector<int> targets;
    for (std::size_t i : idxs) targets.push_back(data.sensor_targets[i]);
    loss = softmax_ce(logits, targets, d_logits_out);
  } else {
    Matrix targets(static_cast<Eigen::Index>(idxs.size()), data.source_targets.cols());
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      targets.row(static_cast<Eigen::Index>(i)) =
          data.source_targets.row(static_cast<Eigen::Index>(idxs[i]));
    }
    loss = bce_logits(logits, targets, d_logits_out);
  }
  if (x_batch_out) *x_batch_out = std::move(x);
  return loss;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idxs(n);
  for (std::size_t i = 0; i < n; ++i) idxs[i] = i;
  return idxs;
}

}  // namespace

TrainedProbe train_probe(const std::map<std::string, ClipFeatures>& features,
                         const std::vector<ClipRecord>& train_records,
                         const std::vector<ClipRecord>& val_records,
                         const ProbeConfig& cfg) {
  if (train_records.empty() || val_records.empty()) {
    throw ValueError("probe: train and val record lists must be nonempty");
  }
  TrainedProbe probe;
  probe.classes = collect_probe_classes(train_records, cfg.task);
  const ProbeData train_data = build_probe_data(features, train_records, probe.classes, cfg);
  const ProbeData val_data = build_probe_data(features, val_records, probe.classes, cfg);

  const int d_feat = static_cast<int>(train_data.x.cols());
  Mlp head({d_feat, cfg.hidden_width, static_cast<int>(probe.classes.size())},
           Activation::Tanh, cfg.seed);
  AdamW opt(cfg.learning_rate, 0.0);
  opt.attach(&head);
  Mlp::Grads grads = head.zero_grads();

  Rng shuffle_rng(cfg.seed, 0x70726f6265ULL);
  auto order = all_indices(train_records.size());
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const auto val_idxs = all_indices(val_records.size());

  double best_val = std::numeric_limits<double>::infinity();
  Mlp best_head = head;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t count = std::min(bs, order.size() - begin);
      std::vector<std::size_t> idxs(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(begin + count));
      Mlp::Cache cache;
      Matrix d_logits;
      probe_loss(head, train_data, cfg.task, idxs, &cache, &d_logits, nullptr);
      grads.setZero();
      head.backward(cache, d_logits, grads);
      opt.step({&grads});
    }
    const double val_loss =
        probe_loss(head, val_data, cfg.task, val_idxs, nullptr, nullptr, nullptr);
    if (val_loss < best_val) {
      best_val = val_loss;
      best_head = head;
    }
  }
  probe.head = std::move(best_head);
  probe.val_loss = best_val;
  return probe;
}

double score_probe(const TrainedProbe& probe,
                   const std::map<std::string, ClipFeatures>& features,
                   const std::vector<ClipRecord>& test_records,
                   const ProbeConfig& cfg) {
  const ProbeData data = build_probe_data(features, test_records, probe.classes, cfg);
  const Matrix logits = probe.head.forward(data.x);
  if (cfg.task == ProbeTask::Sensor) {
    std::vector<std::string> preds, truths;
    for (Eigen::Index j = 0; j < logits.rows(); ++j) {
      Eigen::Index k;
      logits.row(j).maxCoeff(&k);
      preds.push_back(probe.classes[static_cast<std::size_t>(k)]);
      truths.push_back(test_records[static_cast<std::size_t>(j)].sensor_id);
    }
    return sensor_accuracy(preds, truths);
  }
  std::set<std::string> known(probe.classes.begin(), probe.classes.end());
  std::vector<std::set<std::string>> pred_sets, true_sets;
  for (Eigen::Index j = 0; j < logits.rows(); ++j) {
    std::set<std::string> pred;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      // sigmoid(z) > 0.5 iff z > 0
      if (logits(j, c) > 0.0f) pred.insert(probe.classes[static_cast<std::size_t>(c)]);
    }
    pred_sets.push_back(std::move(pred));
    const auto& labels = test_records[static_cast<std::size_t>(j)].source_labels;
    true_sets.emplace_back(labels.begin(), labels.end());
  }
  return jaccard_multilabel(pred_sets, true_sets, known);
}

double sensor_accuracy(const std::vector<std::string>& predictions,
                       const std::vector<std::string>& truths) {
  if (predictions.size() != truths.size()) {
    throw DimensionError("sensor_accuracy: length mismatch");
  }
  if (predictions.empty()) throw ValueError("sensor_accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == truths[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double jaccard_multilabel(const std::vector<std::set<std::string>>& pred_sets,
                          const std::vector<std::set<std::string>>& true_sets,
                          const std::set<std::string>& known_labels) {
  if (pred_sets.size() != true_sets.size()) {
    throw DimensionError("jaccard_multilabel: length mismatch");
  }
  if (pred_sets.empty()) throw ValueError("jaccard_multilabel: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred_sets.size(); ++i) {
    for (const auto& labels : {pred_sets[i], true_sets[i]}) {
      for (const auto& label : labels) {
        if (!known_labels.count(label)) {
          throw ValueError("jaccard_multilabel: unknown label '" + label + "'");
        }
      }
    }
    std::vector<std::string> inter, uni;
    std::set_intersection(pred_sets[i].begin(), pred_sets[i].end(),
                          true_sets[i].begin(), true_sets[i].end(),
                          std::back_inserter(inter));
    std::set_union(pred_sets[i].begin(), pred_sets[i].end(), true_sets[i].begin(),
                   true_sets[i].end(), std::back_inserter(uni));
    sum += uni.empty() ? 1.0
                       : static_cast<double>(inter.size()) /
                             static_cast<double>(uni.size());
  }
  return sum / static_cast<double>(pred_sets.size());
}

std::pair<double, double> dsc_delta(const std::map<std::string, double>& scores) {
  for (const char* key :
       {"source/private", "source/shared", "sensor/private", "sensor/shared"}) {
    if (!scores.count(key)) {
      throw ValueError(std::string("dsc_delta: missing score '") + key + "'");
    }
  }
  const double dsc_priv =
      scores.at("source/private") - scores.at("source/shared");
  const double dsc_shared =
      scores.at("sensor/shared") - scores.at("sensor/private");
  return {dsc_priv, dsc_shared};
}

EvalReport evaluate(const Checkpoint& ckpt, const DownstreamSplit& split,
                    const std::string& latent_root, const ProbeConfig& probe_defaults) {
  std::vector<ClipRecord> all_records = split.train;
  all_records.insert(all_records.end(), split.val.begin(), split.val.end());
  all_records.insert(all_records.end(), split.test.begin(), split.test.end());
  const auto features = extract_features(ckpt, all_records, latent_root);

  EvalReport report;
  report.config_digest = ckpt.config_digest;
  for (const ProbeTask task : {ProbeTask::Source, ProbeTask::Sensor}) {
    for (const ProbeFeature feature :
         {ProbeFeature::Private, ProbeFeature::Shared, ProbeFeature::Joint}) {
      ProbeConfig cfg = probe_defaults;
      cfg.task = task;
      cfg.feature = feature;
      const auto probe = train_probe(features, split.train, split.val, cfg);
      report.scores[task_name(task) + "/" + feature_name(feature)] =
          score_probe(probe, features, split.test, cfg);
    }
  }
  std::tie(report.dsc_priv, report.dsc_shared) = dsc_delta(report.scores);
  return report;
}

StrategyReport strategy_report(const std::vector<MethodReport>& methods,
                               const std::vector<MethodReport>& baselines) {
  if (methods.empty() && baselines.empty()) {
    throw ValueError("strategy_report: at least one report required");
  }
  StrategyReport out;
  std::ostringstream table;
  table.precision(17);  // scores must survive a parse round trip
  table << "method,objective,source,sensor,avg\n";
  std::ostringstream scatter;
  scatter.precision(17);
  scatter << "strategy,task,overall,dsc_delta\n";

  const auto emit = [&](const MethodReport& mr) {
    const double source = mr.report.scores.at("source/joint");
    const double sensor = mr.report.scores.at("sensor/joint");
    const double avg = (source + sensor) / 2.0;
    table << mr.method << "," << mr.objective << "," << source << "," << sensor
          << "," << avg << "\n";
    scatter << mr.method << ",source," << source << "," << mr.report.dsc_priv << "\n";
    scatter << mr.method << ",sensor," << sensor << "," << mr.report.dsc_shared << "\n";
  };
  for (const auto& mr : methods) emit(mr);
  for (const auto& mr : baselines) {
    emit(mr);
    if (mr.method == "pretrained_only") {
      out.reference_source = mr.report.scores.at("source/joint");
      out.reference_sensor = mr.report.scores.at("sensor/joint");
    }
  }
  out.table_csv = table.str();
  out.scatter_csv = scatter.str();
  return out;
}

void save_eval_report(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write eval report: " + path);
  const json obj{{"scores", report.scores},
                 {"dsc_priv", report.dsc_priv},
                 {"dsc_shared", report.dsc_shared},
                 {"config_digest", report.config_digest}};
  out << obj.dump(2) << "\n";
}

EvalReport load_eval_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("eval report not found: " + path);
  const json obj = json::parse(in);
  EvalReport report;
  report.scores = obj.at("scores").get<std::map<std::string, double>>();
  report.dsc_priv = obj.at("dsc_priv").get<double>();
  report.dsc_shared = obj.at("dsc_shared").get<double>();
  report.config_digest = obj.at("config_digest").get<std::uint64_t>();
  return report;
}

}  // namespace mvlat
