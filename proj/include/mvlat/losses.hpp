#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "mvlat/core.hpp"

namespace mvlat {

/// Random entry zeroing of one latent subspace during training.
struct MaskSpec {
  enum class Target { Private, Shared };
  Target target = Target::Private;
  double ratio = 0.0;  // in [0, 1]
  RngSeed seed{0};
};

enum class CosMode { None, Plus, Minus };
enum class CosLevel { Sample, Batch };

struct LossConfig {
  bool use_rec = true;
  CosMode cos_mode = CosMode::None;
  CosLevel cos_level = CosLevel::Sample;
  std::optional<MaskSpec> mask;
  double epsilon = 1e-7;
};

/// Bernoulli(1-r) keep mask; randomness depends only on (spec.seed, step).
Matrix make_mask(Eigen::Index rows, Eigen::Index cols, const MaskSpec& spec,
                 std::uint64_t step = 0);
Matrix apply_mask(const Matrix& batch, const MaskSpec& spec, std::uint64_t step = 0);

/// Cosine remapped to a probability: (1 + cos) / 2, clamped to [eps, 1-eps].
/// Norms carry a 1e-12 guard, so the zero vector reads as cos 0.
double remapped_sim(const Vector& u, const Vector& v, double eps);

/// Summed per-view entry-mean squared error. Rows may stack batch samples.
double rec_loss(const Matrix& x1, const Matrix& x2, const Matrix& xhat1,
                const Matrix& xhat2, Matrix* d_xhat1 = nullptr,
                Matrix* d_xhat2 = nullptr);

// Cosine losses over per-clip flattened subspaces: u, v are (B x m) with one
// clip per row. Gradient outputs are optional and accumulated fresh.
double cos_plus_sample(const Matrix& u, const Matrix& v, double eps,
                       Matrix* d_u = nullptr, Matrix* d_v = nullptr);
double cos_minus_sample(const Matrix& u, const Matrix& v, double eps,
                        Matrix* d_u = nullptr, Matrix* d_v = nullptr);
double cos_plus_batch(const Matrix& u, const Matrix& v, Matrix* d_u = nullptr,
                      Matrix* d_v = nullptr);
double cos_minus_batch(const Matrix& u, const Matrix& v, double eps,
                       Matrix* d_u = nullptr, Matrix* d_v = nullptr);
/// InfoNCE over joint latents; same formula as cos_plus_batch.
double infonce_loss(const Matrix& z1, const Matrix& z2, Matrix* d_z1 = nullptr,
                    Matrix* d_z2 = nullptr);

/// Everything the composite objective needs from one forward pass over a
/// batch of pairs. x*/xhat* are frame-stacked (B*n x d); z* are per-clip
/// flattened subspaces (B x n*d/2), post-mask when masking is active.
struct PairBatchLatents {
  Matrix x1, x2;
  Matrix xhat1, xhat2;
  Matrix zp1, zp2;
  Matrix zs1, zs2;
};

struct LossBreakdown {
  double total = 0.0;
  std::map<std::string, double> components;
  // gradients w.r.t. the tensors the active terms consumed
  Matrix d_xhat1, d_xhat2;
  Matrix d_zp1, d_zp2, d_zs1, d_zs2;
};

LossBreakdown total_loss(const LossConfig& cfg, const PairBatchLatents& fwd,
                         bool with_grads = false);

/// (B*n x m) frame stack -> (B x n*m) one flattened clip per row, and back.
Matrix flatten_clips(const Matrix& stacked, Eigen::Index n_frames);
Matrix unflatten_clips(const Matrix& flat, Eigen::Index n_frames);

}  // namespace mvlat
