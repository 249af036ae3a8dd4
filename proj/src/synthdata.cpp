#include "mvlat/synthdata.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "mvlat/rng.hpp"

namespace mvlat {

std::string sensor_name(int k) { return "sensor_" + std::to_string(k); }
std::string source_name(int l) { return "source_" + std::to_string(l); }

void validate_spec(const SynthSpec& spec) {
  if (spec.n_sensors < 2) throw ValueError("SynthSpec: n_sensors must be >= 2");
  if (spec.n_sources < 2) throw ValueError("SynthSpec: n_sources must be >= 2");
  if (spec.clips_per_sensor < 2) {
    throw ValueError("SynthSpec: clips_per_sensor must be >= 2");
  }
  if (spec.d < 2 || spec.d % 2 != 0) {
    throw ValueError("SynthSpec: d must be even and >= 2");
  }
  if (spec.n_frames < 1) throw ValueError("SynthSpec: n_frames must be >= 1");
  if (spec.max_labels_per_clip < 1 || spec.max_labels_per_clip > spec.n_sources) {
    throw ValueError("SynthSpec: max_labels_per_clip must be in [1, n_sources]");
  }
  if (spec.noise_sigma < 0.0) throw ValueError("SynthSpec: noise_sigma must be >= 0");
}

namespace {

Matrix unit_norm_gaussian_rows(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.normal());
    m.row(r).normalize();
  }
  return m;
}

}  // namespace

SynthDataset generate(const SynthSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  SynthDataset ds;
  ds.sensor_prototypes = unit_norm_gaussian_rows(spec.n_sensors, spec.d, rng);
  ds.source_prototypes = unit_norm_gaussian_rows(spec.n_sources, spec.d, rng);

  for (int k = 0; k < spec.n_sensors; ++k) {
    for (int c = 0; c < spec.clips_per_sensor; ++c) {
      ClipRecord rec;
      rec.sensor_id = sensor_name(k);
      rec.segment_index = c;
      rec.clip_id = rec.sensor_id + "_clip_" + std::to_string(c);
      rec.latent_path = rec.clip_id + ".mvlt";

      const int n_labels =
          1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_labels_per_clip)));
      std::vector<int> sources(static_cast<std::size_t>(spec.n_sources));
      for (int l = 0; l < spec.n_sources; ++l) sources[static_cast<std::size_t>(l)] = l;
      rng.shuffle(sources);
      sources.resize(static_cast<std::size_t>(n_labels));
      std::sort(sources.begin(), sources.end());
      for (int l : sources) rec.source_labels.push_back(source_name(l));

      Eigen::RowVectorXf base = ds.sensor_prototypes.row(k);
      for (int l : sources) base += ds.source_prototypes.row(l);

      EmbeddingMatrix emb;
      emb.clip_id = rec.clip_id;
      emb.values.resize(spec.n_frames, spec.d);
      for (int t = 0; t < spec.n_frames; ++t) {
        for (int j = 0; j < spec.d; ++j) {
          emb.values(t, j) =
              base(j) + static_cast<float>(spec.noise_sigma * rng.normal());
        }
      }
      ds.latents.emplace(rec.clip_id, std::move(emb));
      ds.manifest.push_back(std::move(rec));
    }
  }
  return ds;
}

Recoverability recoverability_check(const SynthDataset& ds) {
  const int n_sensors = static_cast<int>(ds.sensor_prototypes.rows());
  const int n_sources = static_cast<int>(ds.source_prototypes.rows());
  const int d = static_cast<int>(ds.sensor_prototypes.cols());
  const std::size_t n = ds.manifest.size();

  Eigen::MatrixXd feats(n, d + 1);
  Eigen::MatrixXd sensor_hot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), n_sensors);
  Eigen::MatrixXd source_hot = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), n_sources);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = ds.manifest[i];
    const auto& emb = ds.latents.at(rec.clip_id);
    feats.row(static_cast<Eigen::Index>(i)).head(d) =
        emb.values.colwise().mean().cast<double>();
    feats(static_cast<Eigen::Index>(i), d) = 1.0;
    for (int k = 0; k < n_sensors; ++k) {
      if (rec.sensor_id == sensor_name(k)) sensor_hot(static_cast<Eigen::Index>(i), k) = 1.0;
    }
    for (const auto& label : rec.source_labels) {
      for (int l = 0; l < n_sources; ++l) {
        if (label == source_name(l)) source_hot(static_cast<Eigen::Index>(i), l) = 1.0;
      }
    }
  }

  // even manifest indices train, odd indices held out
  std::vector<Eigen::Index> train_idx, test_idx;
  for (std::size_t i = 0; i < n; ++i) {
    (i % 2 == 0 ? train_idx : test_idx).push_back(static_cast<Eigen::Index>(i));
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(train_idx.size()), d + 1);
  Eigen::MatrixXd y_sensor(static_cast<Eigen::Index>(train_idx.size()), n_sensors);
  Eigen::MatrixXd y_source(static_cast<Eigen::Index>(train_idx.size()), n_sources);
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    a.row(static_cast<Eigen::Index>(i)) = feats.row(train_idx[i]);
    y_sensor.row(static_cast<Eigen::Index>(i)) = sensor_hot.row(train_idx[i]);
    y_source.row(static_cast<Eigen::Index>(i)) = source_hot.row(train_idx[i]);
  }
  for (int k = 0; k < n_sensors; ++k) {
    if (y_sensor.col(k).sum() == 0.0) {
      throw ValueError("recoverability_check: sensor class " + sensor_name(k) +
                       " absent from train half");
    }
  }
  for (int l = 0; l < n_sources; ++l) {
    if (y_source.col(l).sum() == 0.0) {
      throw ValueError("recoverability_check: source label " + source_name(l) +
                       " absent from train half");
    }
  }

  const auto solver = a.colPivHouseholderQr();
  const Eigen::MatrixXd w_sensor = solver.solve(y_sensor);
  const Eigen::MatrixXd w_source = solver.solve(y_source);

  std::size_t correct = 0;
  double jaccard_sum = 0.0;
  for (Eigen::Index idx : test_idx) {
    const Eigen::RowVectorXd pred_sensor = feats.row(idx) * w_sensor;
    Eigen::Index pred_k;
    pred_sensor.maxCoeff(&pred_k);
    Eigen::Index true_k;
    sensor_hot.row(idx).maxCoeff(&true_k);
    if (pred_k == true_k) ++correct;

    const Eigen::RowVectorXd pred_source = feats.row(idx) * w_source;
    int inter = 0, uni = 0;
    for (int l = 0; l < n_sources; ++l) {
      const bool p = pred_source(l) > 0.5;
      const bool t = source_hot(idx, l) > 0.5;
      inter += (p && t) ? 1 : 0;
      uni += (p || t) ? 1 : 0;
    }
    jaccard_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
  }
  Recoverability out;
  out.sensor_acc = static_cast<double>(correct) / static_cast<double>(test_idx.size());
  out.source_jaccard = jaccard_sum / static_cast<double>(test_idx.size());
  return out;
}

void write_dataset(const SynthDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  save_manifest((root / "manifest.jsonl").string(), ds.manifest);
  for (const auto& rec : ds.manifest) {
    save_latent((root / rec.latent_path).string(), ds.latents.at(rec.clip_id));
  }
}

}  // namespace mvlat
