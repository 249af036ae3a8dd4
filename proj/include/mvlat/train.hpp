#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvlat/model.hpp"

namespace mvlat {

enum class Method {
  Multiview,
  SingleviewAe,
  Contrastive,
  SupervisedSource,
  SupervisedSensor,
};

Method method_from_name(const std::string& name);
std::string method_name(Method m);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.01;
  LossConfig loss;
  RngSeed seed{0};
  Method method = Method::Multiview;
};

struct EpochRecord {
  int epoch = 0;
  std::map<std::string, double> train_components;
  double train_total = 0.0;
  double val_total = 0.0;
  double seconds = 0.0;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  int selected_epoch = 0;  // minimum validation total, earliest on ties
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainRecord record;
};

/// AdamW with decoupled weight decay over one or more MLPs.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  void attach(Mlp* mlp);
  /// grads[i] pairs with the i-th attached MLP.
  void step(const std::vector<const Mlp::Grads*>& grads);

 private:
  struct State {
    Matrix m_w, v_w;
    Vector m_b, v_b;
  };
  double lr_, wd_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Mlp*> mlps_;
  std::vector<std::vector<State>> states_;
};

/// Softmax cross entropy, integer class targets, batch mean.
double softmax_ce(const Matrix& logits, const std::vector<int>& targets,
                  Matrix* d_logits = nullptr);
/// Sigmoid binary cross entropy over all entries, batch mean of entry means.
double bce_logits(const Matrix& logits, const Matrix& targets,
                  Matrix* d_logits = nullptr);

/// Trains the configured method; masking is applied only to training-mode
/// forward passes, never during validation. Aborts on non-finite loss.
TrainResult train(const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
                  const std::vector<ViewPair>& pairs_train,
                  const std::vector<ViewPair>& pairs_val, const TrainConfig& cfg);

/// Per-method validation loss of a checkpoint, without masking.
double validation_loss(const Checkpoint& ckpt, const std::vector<ViewPair>& pairs,
                       const TrainConfig& cfg);

/// The four label-free/supervised reference methods plus the identity
/// feature extractor.
std::map<std::string, TrainResult> run_baseline_suite(
    const EncoderConfig& enc_cfg, const DecoderConfig& dec_cfg,
    const std::vector<ViewPair>& pairs_train,
    const std::vector<ViewPair>& pairs_val, const TrainConfig& base_cfg);

void save_train_record(const std::string& path, const TrainRecord& record,
                       std::uint64_t config_digest = 0);
TrainRecord load_train_record(const std::string& path);

}  // namespace mvlat
