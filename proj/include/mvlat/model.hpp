#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mvlat/ingest.hpp"
#include "mvlat/losses.hpp"
#include "mvlat/mlp.hpp"

namespace mvlat {

struct EncoderConfig {
  int d_in = 32;
  std::vector<int> hidden_sizes;  // defaults to {d_in}
  std::string activation = "tanh";
  RngSeed seed{0};
};

struct DecoderConfig {
  int d_in = 32;  // width of concat(z_p, z_S) = d
  std::vector<int> hidden_sizes;
  std::string activation = "tanh";
  RngSeed seed{0};
};

/// Shared-weight projection encoder + decoder. One parameter set serves both
/// views; parameter count is independent of the number of views.
struct MultiViewModel {
  Mlp encoder;  // d -> ... -> d, split into z_p | z_s halves
  Mlp decoder;  // d -> ... -> d
  int d = 0;
};

MultiViewModel make_model(const EncoderConfig& enc, const DecoderConfig& dec);
/// Linear identity stacks; reconstruction is exact before any training.
MultiViewModel make_identity_model(int d);

LatentBundle encode(const MultiViewModel& model, const EmbeddingMatrix& x);
Matrix average_shared(const Matrix& z_s1, const Matrix& z_s2);
EmbeddingMatrix decode(const MultiViewModel& model, const Matrix& z_p,
                       const Matrix& z_shared, const std::string& clip_id = "");

struct PairForwardResult {
  EmbeddingMatrix xhat1, xhat2;
  LatentBundle bundle1, bundle2;  // post-mask when masking is active
  Matrix z_shared;
};

PairForwardResult forward_pair(const MultiViewModel& model, const ViewPair& pair,
                               const std::optional<MaskSpec>& mask = std::nullopt,
                               std::uint64_t step = 0, bool training = false);

struct SingleViewResult {
  LatentBundle bundle;
  Matrix joint;  // concat(z_p, z_s), (n_frames x d)
};
SingleViewResult infer_single(const MultiViewModel& model, const EmbeddingMatrix& x);

/// Batched forward over frame-stacked views, with caches for backprop.
struct PairForwardDetail {
  Matrix zp1, zs1, zp2, zs2;  // post-mask, (rows x d/2)
  Matrix mask1, mask2;        // empty when no masking was applied
  std::optional<MaskSpec::Target> mask_target;
  Matrix z_shared;
  Matrix xhat1, xhat2;
  Mlp::Cache enc1, enc2, dec1, dec2;
};

PairForwardDetail forward_stacked(const MultiViewModel& model, const Matrix& x1,
                                  const Matrix& x2,
                                  const std::optional<MaskSpec>& mask,
                                  std::uint64_t step, bool training);

void backward_stacked(const MultiViewModel& model, const PairForwardDetail& fwd,
                      const Matrix& d_xhat1, const Matrix& d_xhat2,
                      const Matrix& d_zp1, const Matrix& d_zp2,
                      const Matrix& d_zs1, const Matrix& d_zs2,
                      Mlp::Grads& enc_grads, Mlp::Grads& dec_grads);

/// Trained-model container written to disk. Binary layout follows the latent
/// file convention (little-endian, u32 header fields).
struct Checkpoint {
  std::string method;
  std::uint64_t config_digest = 0;
  int d = 0;
  Mlp encoder;                // unused for method "pretrained_only"
  std::optional<Mlp> decoder;
  std::optional<Mlp> head;    // supervised baselines only
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mvlat
