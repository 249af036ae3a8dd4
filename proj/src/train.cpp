#include "mvlat/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

#include "mvlat/rng.hpp"

namespace mvlat {

using nlohmann::json;

Method method_from_name(const std::string& name) {
  if (name == "multiview") return Method::Multiview;
  if (name == "singleview_ae") return Method::SingleviewAe;
  if (name == "contrastive") return Method::Contrastive;
  if (name == "supervised_source") return Method::SupervisedSource;
  if (name == "supervised_sensor") return Method::SupervisedSensor;
  throw ValueError("unknown method '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Multiview: return "multiview";
    case Method::SingleviewAe: return "singleview_ae";
    case Method::Contrastive: return "contrastive";
    case Method::SupervisedSource: return "supervised_source";
    case Method::SupervisedSensor: return "supervised_sensor";
  }
  return "multiview";
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double eps)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  if (lr < 0.0) throw ValueError("AdamW: learning rate must be >= 0");
}

void AdamW::attach(Mlp* mlp) {
  mlps_.push_back(mlp);
  std::vector<State> states;
  for (std::size_t i = 0; i < mlp->n_layers(); ++i) {
    const auto& layer = mlp->layer(i);
    State s;
    s.m_w = Matrix::Zero(layer.w.rows(), layer.w.cols());
    s.v_w = Matrix::Zero(layer.w.rows(), layer.w.cols());
    s.m_b = Vector::Zero(layer.b.size());
    s.v_b = Vector::Zero(layer.b.size());
    states.push_back(std::move(s));
  }
  states_.push_back(std::move(states));
}

void AdamW::step(const std::vector<const Mlp::Grads*>& grads) {
  if (grads.size() != mlps_.size()) {
    throw ValueError("AdamW::step: gradient list does not match attached MLPs");
  }
  ++t_;
  const float bc1 = static_cast<float>(1.0 - std::pow(b1_, t_));
  const float bc2 = static_cast<float>(1.0 - std::pow(b2_, t_));
  for (std::size_t mi = 0; mi < mlps_.size(); ++mi) {
    Mlp& mlp = *mlps_[mi];
    const Mlp::Grads& g = *grads[mi];
    for (std::size_t li = 0; li < mlp.n_layers(); ++li) {
      auto& layer = mlp.layer(li);
      State& s = states_[mi][li];
      const auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
        m = static_cast<float>(b1_) * m + static_cast<float>(1.0 - b1_) * grad;
        v = (static_cast<float>(b2_) * v.array() +
             static_cast<float>(1.0 - b2_) * grad.array().square())
                .matrix();
        const auto m_hat = m.array() / bc1;
        const auto v_hat = v.array() / bc2;
        param = (param.array() -
                 static_cast<float>(lr_) *
                     (m_hat / (v_hat.sqrt() + static_cast<float>(eps_)) +
                      static_cast<float>(wd_) * param.array()))
                    .matrix();
      };
      update(layer.w, s.m_w, s.v_w, g.layers[li].w);
      update(layer.b, s.m_b, s.v_b, g.layers[li].b);
    }
  }
}

double softmax_ce(const Matrix& logits, const std::vector<int>& targets,
                  Matrix* d_logits) {
  const Eigen::Index b = logits.rows();
  if (static_cast<std::size_t>(b) != targets.size()) {
    throw DimensionError("softmax_ce: target count mismatch");
  }
  if (d_logits) *d_logits = Matrix::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const Eigen::ArrayXd row = logits.row(j).cast<double>().array();
    const double row_max = row.maxCoeff();
    const Eigen::ArrayXd shifted = (row - row_max).exp();
    const double denom = shifted.sum();
    const int t = targets[static_cast<std::size_t>(j)];
    total += -(row(t) - row_max - std::log(denom));
    if (d_logits) {
      Eigen::ArrayXd p = shifted / denom;
      p(t) -= 1.0;
      d_logits->row(j) = (p / static_cast<double>(b)).cast<float>().transpose();
    }
  }
  return total / static_cast<double>(b);
}

double bce_logits(const Matrix& logits, const Matrix& targets, Matrix* d_logits) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw DimensionError("bce_logits: shape mismatch");
  }
  const double n = static_cast<double>(logits.rows()) * static_cast<double>(logits.cols());
  if (d_logits) *d_logits = Matrix::Zero(logits.rows(), logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double z = logits(r, c);
      const double t = targets(r, c);
      // stable log(1 + e^z) formulation
      const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z))
                                      : std::log1p(std::exp(z));
      total += softplus - t * z;
      if (d_logits) {
        const double sigmoid = 1.0 / (1.0 + std::exp(-z));
        (*d_logits)(r, c) = static_cast<float>((sigmoid - t) / n);
      }
    }
  }
  return total / n;
}

namespace {

struct Batch {
  Matrix x1, x2;  // frame-stacked (B*n x d)
  Eigen::Index n_frames = 0;
  std::vector<const ViewPair*> pairs;
};

Batch stack_batch(const std::vector<ViewPair>& pairs,
                  const std::vector<std::size_t>& order, std::size_t begin,
                  std::size_t count) {
  Batch batch;
  batch.n_frames = pairs[order[begin]].view1.n_frames();
  const Eigen::Index d = pairs[order[begin]].view1.d();
  batch.x1.resize(static_cast<Eigen::Index>(count) * batch.n_frames, d);
  batch.x2.resize(static_cast<Eigen::Index>(count) * batch.n_frames, d);
  for (std::size_t i = 0; i < count; ++i) {
    const ViewPair& pair = pairs[order[begin + i]];
    if (pair.view1.n_frames() != batch.n_frames ||
        pair.view2.n_frames() != batch.n_frames || pair.view1.d() != d ||
        pair.view2.d() != d) {
      throw DimensionError("training batch mixes embedding shapes");
    }
    batch.x1.middleRows(static_cast<Eigen::Index>(i) * batch.n_frames, batch.n_frames) =
        pair.view1.values;
    batch.x2.middleRows(static_cast<Eigen::Index>(i) * batch.n_frames, batch.n_frames) =
        pair.view2.values;
    batch.pairs.push_back(&pair);
  }
  return batch;
}

Matrix frame_average(const Matrix& stacked, Eigen::Index n_frames) {
  const Eigen::Index b = stacked.rows() / n_frames;
  Matrix avg(b, stacked.cols());
  for (Eigen::Index j = 0; j < b; ++j) {
    avg.row(j) = stacked.middleRows(j * n_frames, n_frames).colwise().mean();
  }
  return avg;
}

std::vector<std::string> collect_classes(const std::vector<ViewPair>& train,
                                         const std::vector<ViewPair>& val,
                                         Method method) {
  std::set<std::string> classes;
  const auto add = [&](const ClipRecord& rec) {
    if (method == Method::SupervisedSensor) {
      classes.insert(rec.sensor_id);
    } else {
      classes.insert(rec.source_labels.begin(), rec.source_labels.end());
    }
  };
  for (const auto& p : train) {
    add(p.rec1);
    add(p.rec2);
  }
  for (const auto& p : val) {
    add(p.rec1);
    add(p.rec2);
  }
  if (classes.empty()) {
    throw ValueError("supervised training requires labeled records");
  }
  return {classes.begin(), classes.end()};
}

int class_index(const std::vector<std::string>& classes, const std::string& name) {
  const auto it = std::lower_bound(classes.begin(), classes.end(), name);
  if (it == classes.end() || *it != name) {
    throw ValueError("label '" + name + "' outside the training class set");
  }
  return static_cast<int>(it - classes.begin());
}

// All per-method forward/backward logic for one batch.
struct Engine {
  Method method;
  MultiViewModel model;     // encoder always used; decoder when the method decodes
  std::optional<Mlp> head;  // supervised linear head
  std::vector<std::string> classes;
  const TrainConfig* cfg = nullptr;

  bool uses_decoder() const {
    return method == Method::Multiview || method == Method::SingleviewAe;
  }

  std::map<std::string, double> batch_loss(const Batch& batch, std::uint64_t step,
                                           bool training, Mlp::Grads* enc_g,
                                           Mlp::Grads* dec_g, Mlp::Grads* head_g) {
    const bool wg = enc_g != nullptr;
    std::map<std::string, double> components;
    switch (method) {
      case Method::Multiview: {
        const std::optional<MaskSpec> mask =
            training ? cfg->loss.mask : std::optional<MaskSpec>{};
        auto fwd = forward_stacked(model, batch.x1, batch.x2, mask, step, training);
        PairBatchLatents latents;
        latents.x1 = batch.x1;
        latents.x2 = batch.x2;
        latents.xhat1 = fwd.xhat1;
        latents.xhat2 = fwd.xhat2;
        latents.zp1 = flatten_clips(fwd.zp1, batch.n_frames);
        latents.zp2 = flatten_clips(fwd.zp2, batch.n_frames);
        latents.zs1 = flatten_clips(fwd.zs1, batch.n_frames);
        latents.zs2 = flatten_clips(fwd.zs2, batch.n_frames);
        const auto loss = total_loss(cfg->loss, latents, wg);
        components = loss.components;
        if (wg) {
          const Matrix empty;
          const auto lift = [&](const Matrix& flat) {
            return flat.size() > 0 ? unflatten_clips(flat, batch.n_frames) : empty;
          };
          backward_stacked(model, fwd, loss.d_xhat1, loss.d_xhat2,
                           lift(loss.d_zp1), lift(loss.d_zp2), lift(loss.d_zs1),
                           lift(loss.d_zs2), *enc_g, *dec_g);
        }
        break;
      }
      case Method::SingleviewAe: {
        Mlp::Cache enc_cache, dec_cache;
        const Matrix h = model.encoder.forward(batch.x1, wg ? &enc_cache : nullptr);
        const Matrix xhat = model.decoder.forward(h, wg ? &dec_cache : nullptr);
        const double n = static_cast<double>(batch.x1.rows()) *
                         static_cast<double>(batch.x1.cols());
        const Eigen::MatrixXd diff = xhat.cast<double>() - batch.x1.cast<double>();
        components["rec"] = diff.array().square().sum() / n;
        if (wg) {
          const Matrix d_xhat = (diff * (2.0 / n)).cast<float>();
          const Matrix d_h = model.decoder.backward(dec_cache, d_xhat, *dec_g);
          model.encoder.backward(enc_cache, d_h, *enc_g);
        }
        break;
      }
      case Method::Contrastive: {
        Mlp::Cache c1, c2;
        const Matrix h1 = model.encoder.forward(batch.x1, wg ? &c1 : nullptr);
        const Matrix h2 = model.encoder.forward(batch.x2, wg ? &c2 : nullptr);
        const Matrix z1 = flatten_clips(h1, batch.n_frames);
        const Matrix z2 = flatten_clips(h2, batch.n_frames);
        Matrix d_z1, d_z2;
        components["infonce"] = infonce_loss(z1, z2, wg ? &d_z1 : nullptr,
                                             wg ? &d_z2 : nullptr);
        if (wg) {
          model.encoder.backward(c1, unflatten_clips(d_z1, batch.n_frames), *enc_g);
          model.encoder.backward(c2, unflatten_clips(d_z2, batch.n_frames), *enc_g);
        }
        break;
      }
      case Method::SupervisedSource:
      case Method::SupervisedSensor: {
        Mlp::Cache enc_cache, head_cache;
        const Matrix h = model.encoder.forward(batch.x1, wg ? &enc_cache : nullptr);
        const Matrix feats = frame_average(h, batch.n_frames);
        const Matrix logits = head->forward(feats, wg ? &head_cache : nullptr);
        Matrix d_logits;
        if (method == Method::SupervisedSensor) {
          std::vector<int> targets;
          for (const auto* pair : batch.pairs) {
            targets.push_back(class_index(classes, pair->rec1.sensor_id));
          }
          components["ce"] = softmax_ce(logits, targets, wg ? &d_logits : nullptr);
        } else {
          Matrix targets = Matrix::Zero(logits.rows(), logits.cols());
          for (Eigen::Index j = 0; j < logits.rows(); ++j) {
            for (const auto& label :
                 batch.pairs[static_cast<std::size_t>(j)]->rec1.source_labels) {
              targets(j, class_index(classes, label)) = 1.0f;
            }
          }
          components["bce"] = bce_logits(logits, targets, wg ? &d_logits : nullptr);
        }
        if (wg) {
          const Matrix d_feats = head->backward(head_cache, d_logits, *head_g);
          // frame-average broadcast: every frame shares its clip's gradient
          Matrix d_h(h.rows(), h.cols());
          const float inv = 1.0f / static_cast<float>(batch.n_frames);
          for (Eigen::Index j = 0; j < d_feats.rows(); ++j) {
            for (Eigen::Index t = 0; t < batch.n_frames; ++t) {
              d_h.row(j * batch.n_frames + t) = d_feats.row(j) * inv;
            }
          }
          model.encoder.backward(enc_cache, d_h, *enc_g);
        }
        break;
      }
    }
    return components;
  }
};

Engine make_engine(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                   const std::vector<ViewPair>& pairs_train,
                   const std::vector<ViewPair>& pairs_val, const TrainConfig& cfg) {
  Engine engine;
  engine.method = cfg.method;
  engine.cfg = &cfg;
  engine.model = make_model(enc_cfg, dec_cfg);
  if (cfg.method == Method::SupervisedSource || cfg.method == Method::SupervisedSensor) {
    engine.classes = collect_classes(pairs_train, pairs_val, cfg.method);
    engine.head = Mlp({enc_cfg.d_in, static_cast<int>(engine.classes.size())},
                      Activation::Identity,
                      RngSeed{splitmix64(cfg.seed.value ^ 0x68656164ULL)});
  }
  return engine;
}

double sum_components(const std::map<std::string, double>& components) {
  double total = 0.0;
  for (const auto& [k, v] : components) total += v;
  return total;
}

double run_validation(Engine& engine, const std::vector<ViewPair>& pairs,
                      int batch_size) {
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  double total = 0.0;
  std::size_t n_batches = 0;
  if (pairs.size() < bs) {
    const auto batch = stack_batch(pairs, order, 0, pairs.size());
    total = sum_components(engine.batch_loss(batch, 0, false, nullptr, nullptr, nullptr));
    return total;
  }
  for (std::size_t begin = 0; begin + bs <= pairs.size(); begin += bs) {
    const auto batch = stack_batch(pairs, order, begin, bs);
    total += sum_components(engine.batch_loss(batch, 0, false, nullptr, nullptr, nullptr));
    ++n_batches;
  }
  return total / static_cast<double>(n_batches);
}

}  // namespace

TrainResult train(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                  const std::vector<ViewPair>& pairs_train,
                  const std::vector<ViewPair>& pairs_val, const TrainConfig& cfg) {
  if (pairs_train.empty() || pairs_val.empty()) {
    throw ValueError("train: pair lists must be nonempty");
  }
  if (cfg.epochs < 1) throw ValueError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (cfg.learning_rate < 0.0) throw ValueError("train: learning_rate must be >= 0");

  Engine engine = make_engine(enc_cfg, dec_cfg, pairs_train, pairs_val, cfg);

  AdamW opt(cfg.learning_rate, cfg.weight_decay);
  opt.attach(&engine.model.encoder);
  if (engine.uses_decoder()) opt.attach(&engine.model.decoder);
  if (engine.head) opt.attach(&*engine.head);

  Mlp::Grads enc_g = engine.model.encoder.zero_grads();
  Mlp::Grads dec_g = engine.model.decoder.zero_grads();
  Mlp::Grads head_g = engine.head ? engine.head->zero_grads() : Mlp::Grads{};

  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(pairs_train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainRecord record;
  double best_val = std::numeric_limits<double>::infinity();
  Mlp best_encoder = engine.model.encoder;
  Mlp best_decoder = engine.model.decoder;
  std::optional<Mlp> best_head = engine.head;

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);

    std::map<std::string, double> epoch_components;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin + bs <= pairs_train.size(); begin += bs) {
      const auto batch = stack_batch(pairs_train, order, begin, bs);
      enc_g.setZero();
      dec_g.setZero();
      if (engine.head) head_g.setZero();
      const auto components =
          engine.batch_loss(batch, step, true, &enc_g, &dec_g, &head_g);
      const double total = sum_components(components);
      if (!std::isfinite(total)) {
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", step " +
                                 std::to_string(step));
      }
      for (const auto& [k, v] : components) epoch_components[k] += v;
      std::vector<const Mlp::Grads*> grads{&enc_g};
      if (engine.uses_decoder()) grads.push_back(&dec_g);
      if (engine.head) grads.push_back(&head_g);
      opt.step(grads);
      ++n_batches;
      ++step;
    }
    if (n_batches == 0) {
      throw ValueError("train: fewer training pairs than one batch");
    }
    for (auto& [k, v] : epoch_components) v /= static_cast<double>(n_batches);

    EpochRecord er;
    er.epoch = epoch;
    er.train_components = epoch_components;
    er.train_total = sum_components(epoch_components);
    er.val_total = run_validation(engine, pairs_val, cfg.batch_size);
    if (!std::isfinite(er.val_total)) {
      throw std::runtime_error("training diverged: non-finite validation loss at epoch " +
                               std::to_string(epoch));
    }
    er.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                               started)
                     .count();
    if (er.val_total < best_val) {
      best_val = er.val_total;
      record.selected_epoch = epoch;
      best_encoder = engine.model.encoder;
      best_decoder = engine.model.decoder;
      best_head = engine.head;
    }
    record.epochs.push_back(std::move(er));
  }

  TrainResult result;
  result.record = std::move(record);
  result.checkpoint.method = method_name(cfg.method);
  result.checkpoint.d = enc_cfg.d_in;
  result.checkpoint.encoder = std::move(best_encoder);
  if (engine.uses_decoder()) result.checkpoint.decoder = std::move(best_decoder);
  if (best_head) result.checkpoint.head = std::move(best_head);
  return result;
}

double validation_loss(const Checkpoint& ckpt, const std::vector<ViewPair>& pairs,
                       const TrainConfig& cfg) {
  Engine engine;
  engine.method = cfg.method;
  engine.cfg = &cfg;
  engine.model.d = ckpt.d;
  engine.model.encoder = ckpt.encoder;
  if (ckpt.decoder) engine.model.decoder = *ckpt.decoder;
  if (ckpt.head) {
    engine.head = *ckpt.head;
    engine.classes = collect_classes(pairs, {}, cfg.method);
  }
  return run_validation(engine, pairs, cfg.batch_size);
}

std::map<std::string, TrainResult> run_baseline_suite(
    const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
    const std::vector<ViewPair>& pairs_train,
    const std::vector<ViewPair>& pairs_val, const TrainConfig& base_cfg) {
  std::map<std::string, TrainResult> results;

  TrainResult pretrained;
  pretrained.checkpoint.method = "pretrained_only";
  pretrained.checkpoint.d = enc_cfg.d_in;
  pretrained.checkpoint.encoder = Mlp::identity(enc_cfg.d_in);
  results.emplace("pretrained_only", std::move(pretrained));

  for (const Method method : {Method::SingleviewAe, Method::Contrastive,
                              Method::SupervisedSource, Method::SupervisedSensor}) {
    TrainConfig cfg = base_cfg;
    cfg.method = method;
    cfg.loss = LossConfig{};  // baselines carry their own fixed objectives
    results.emplace(method_name(method),
                    train(enc_cfg, dec_cfg, pairs_train, pairs_val, cfg));
  }
  return results;
}

void save_train_record(const std::string& path, const TrainRecord& record,
                       std::uint64_t config_digest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training record: " + path);
  out << json{{"config_digest", config_digest}}.dump() << "\n";
  for (const auto& er : record.epochs) {
    json obj{{"epoch", er.epoch},
             {"train_total", er.train_total},
             {"val_total", er.val_total},
             {"seconds", er.seconds},
             {"train_components", er.train_components},
             {"selected", er.epoch == record.selected_epoch}};
    out << obj.dump() << "\n";
  }
}

TrainRecord load_train_record(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("training record not found: " + path);
  TrainRecord record;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json obj = json::parse(line);
    if (!obj.contains("epoch")) continue;  // digest header
    EpochRecord er;
    er.epoch = obj.at("epoch").get<int>();
    er.train_total = obj.at("train_total").get<double>();
    er.val_total = obj.at("val_total").get<double>();
    er.seconds = obj.at("seconds").get<double>();
    er.train_components =
        obj.at("train_components").get<std::map<std::string, double>>();
    if (obj.at("selected").get<bool>()) record.selected_epoch = er.epoch;
    record.epochs.push_back(std::move(er));
  }
  return record;
}

}  // namespace mvlat
