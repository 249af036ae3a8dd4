#include "mvlat/losses.hpp"

#include <cmath>

#include "mvlat/rng.hpp"

namespace mvlat {

namespace {

constexpr double kNormGuard = 1e-12;

struct CosGrad {
  double cos = 0.0;
  Eigen::VectorXd d_u;
  Eigen::VectorXd d_v;
  bool u_degenerate = false;
  bool v_degenerate = false;
};

CosGrad cosine_with_grad(const Eigen::VectorXd& u, const Eigen::VectorXd& v,
                         bool with_grads) {
  CosGrad out;
  const double nu_raw = u.norm();
  const double nv_raw = v.norm();
  out.u_degenerate = nu_raw < kNormGuard;
  out.v_degenerate = nv_raw < kNormGuard;
  const double nu = std::max(nu_raw, kNormGuard);
  const double nv = std::max(nv_raw, kNormGuard);
  const double dot = u.dot(v);
  out.cos = dot / (nu * nv);
  if (with_grads) {
    out.d_u = out.u_degenerate
                  ? Eigen::VectorXd::Zero(u.size()).eval()
                  : (v / (nu * nv) - (out.cos / (nu * nu)) * u).eval();
    out.d_v = out.v_degenerate
                  ? Eigen::VectorXd::Zero(v.size()).eval()
                  : (u / (nu * nv) - (out.cos / (nv * nv)) * v).eval();
  }
  return out;
}

void check_batch(const Matrix& u, const Matrix& v, const char* what) {
  if (u.rows() != v.rows() || u.cols() != v.cols()) {
    throw DimensionError(std::string(what) + ": batch shapes differ");
  }
  if (u.rows() == 0) throw ValueError(std::string(what) + ": empty batch");
}

}  // namespace

Matrix make_mask(Eigen::Index rows, Eigen::Index cols, const MaskSpec& spec,
                 std::uint64_t step) {
  if (spec.ratio < 0.0 || spec.ratio > 1.0) {
    throw ValueError("MaskSpec: ratio must be in [0, 1]");
  }
  Rng rng(spec.seed, step);
  Matrix mask(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      mask(r, c) = rng.uniform() < spec.ratio ? 0.0f : 1.0f;
    }
  }
  return mask;
}

Matrix apply_mask(const Matrix& batch, const MaskSpec& spec, std::uint64_t step) {
  if (spec.ratio == 0.0) return batch;
  return batch.cwiseProduct(make_mask(batch.rows(), batch.cols(), spec, step));
}

double remapped_sim(const Vector& u, const Vector& v, double eps) {
  if (u.size() != v.size()) throw DimensionError("remapped_sim: length mismatch");
  const auto cg = cosine_with_grad(u.cast<double>(), v.cast<double>(), false);
  const double s = (1.0 + cg.cos) / 2.0;
  return std::min(std::max(s, eps), 1.0 - eps);
}

double rec_loss(const Matrix& x1, const Matrix& x2, const Matrix& xhat1,
                const Matrix& xhat2, Matrix* d_xhat1, Matrix* d_xhat2) {
  if (x1.rows() != xhat1.rows() || x1.cols() != xhat1.cols() ||
      x2.rows() != xhat2.rows() || x2.cols() != xhat2.cols()) {
    throw DimensionError("rec_loss: shape mismatch between target and reconstruction");
  }
  double total = 0.0;
  const auto view = [&](const Matrix& x, const Matrix& xhat, Matrix* grad) {
    const double n_entries = static_cast<double>(x.rows()) * static_cast<double>(x.cols());
    const Eigen::MatrixXd diff = (xhat.cast<double>() - x.cast<double>());
    total += diff.array().square().sum() / n_entries;
    if (grad) *grad = (diff * (2.0 / n_entries)).cast<float>();
  };
  view(x1, xhat1, d_xhat1);
  view(x2, xhat2, d_xhat2);
  return total;
}

double cos_plus_sample(const Matrix& u, const Matrix& v, double eps,
                       Matrix* d_u, Matrix* d_v) {
  check_batch(u, v, "cos_plus_sample");
  const Eigen::Index b = u.rows();
  const bool wg = d_u || d_v;
  if (d_u) *d_u = Matrix::Zero(u.rows(), u.cols());
  if (d_v) *d_v = Matrix::Zero(v.rows(), v.cols());
  double sum = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto cg = cosine_with_grad(u.row(j).transpose().cast<double>(),
                                     v.row(j).transpose().cast<double>(), wg);
    const double s_raw = (1.0 + cg.cos) / 2.0;
    const double s = std::min(std::max(s_raw, eps), 1.0 - eps);
    sum += -std::log(s);
    if (wg && s_raw > eps && s_raw < 1.0 - eps) {
      const double d_cos = -1.0 / (2.0 * s * static_cast<double>(b));
      if (d_u) d_u->row(j) += (d_cos * cg.d_u).cast<float>().transpose();
      if (d_v) d_v->row(j) += (d_cos * cg.d_v).cast<float>().transpose();
    }
  }
  return sum / static_cast<double>(b);
}

double cos_minus_sample(const Matrix& u, const Matrix& v, double eps,
                        Matrix* d_u, Matrix* d_v) {
  check_batch(u, v, "cos_minus_sample");
  const Eigen::Index b = u.rows();
  const bool wg = d_u || d_v;
  if (d_u) *d_u = Matrix::Zero(u.rows(), u.cols());
  if (d_v) *d_v = Matrix::Zero(v.rows(), v.cols());
  double sum = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const auto cg = cosine_with_grad(u.row(j).transpose().cast<double>(),
                                     v.row(j).transpose().cast<double>(), wg);
    const double q_raw = (1.0 - cg.cos) / 2.0;
    const double q = std::min(std::max(q_raw, eps), 1.0);
    sum += -std::log(q);
    if (wg && q_raw > eps && q_raw < 1.0) {
      const double d_cos = 1.0 / (2.0 * q * static_cast<double>(b));
      if (d_u) d_u->row(j) += (d_cos * cg.d_u).cast<float>().transpose();
      if (d_v) d_v->row(j) += (d_cos * cg.d_v).cast<float>().transpose();
    }
  }
  return sum / static_cast<double>(b);
}

double cos_plus_batch(const Matrix& u, const Matrix& v, Matrix* d_u, Matrix* d_v) {
  check_batch(u, v, "cos_plus_batch");
  const Eigen::Index b = u.rows();
  const bool wg = d_u || d_v;
  if (d_u) *d_u = Matrix::Zero(u.rows(), u.cols());
  if (d_v) *d_v = Matrix::Zero(v.rows(), v.cols());

  Eigen::MatrixXd cos(b, b);
  std::vector<std::vector<CosGrad>> grads;
  if (wg) grads.resize(static_cast<std::size_t>(b));
  for (Eigen::Index j = 0; j < b; ++j) {
    if (wg) grads[static_cast<std::size_t>(j)].resize(static_cast<std::size_t>(b));
    for (Eigen::Index k = 0; k < b; ++k) {
      auto cg = cosine_with_grad(u.row(j).transpose().cast<double>(),
                                 v.row(k).transpose().cast<double>(), wg);
      cos(j, k) = cg.cos;
      if (wg) grads[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = std::move(cg);
    }
  }

  double sum = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const double row_max = cos.row(j).maxCoeff();
    const Eigen::ArrayXd shifted = cos.row(j).array() - row_max;
    const double denom = shifted.exp().sum();
    const double lse = row_max + std::log(denom);
    sum += lse - cos(j, j);
    if (wg) {
      for (Eigen::Index k = 0; k < b; ++k) {
        const double softmax = std::exp(cos(j, k) - row_max) / denom;
        const double d_cos = (softmax - (j == k ? 1.0 : 0.0)) / static_cast<double>(b);
        const auto& cg = grads[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        if (d_u) d_u->row(j) += (d_cos * cg.d_u).cast<float>().transpose();
        if (d_v) d_v->row(k) += (d_cos * cg.d_v).cast<float>().transpose();
      }
    }
  }
  return sum / static_cast<double>(b);
}

double cos_minus_batch(const Matrix& u, const Matrix& v, double eps,
                       Matrix* d_u, Matrix* d_v) {
  check_batch(u, v, "cos_minus_batch");
  const Eigen::Index b = u.rows();
  const bool wg = d_u || d_v;
  if (d_u) *d_u = Matrix::Zero(u.rows(), u.cols());
  if (d_v) *d_v = Matrix::Zero(v.rows(), v.cols());
  double sum = 0.0;
  const double n_pairs = static_cast<double>(b) * static_cast<double>(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index k = 0; k < b; ++k) {
      const auto cg = cosine_with_grad(u.row(j).transpose().cast<double>(),
                                       v.row(k).transpose().cast<double>(), wg);
      const double q_raw = (1.0 - cg.cos) / 2.0;
      const double q = std::min(std::max(q_raw, eps), 1.0);
      sum += -std::log(q);
      if (wg && q_raw > eps && q_raw < 1.0) {
        const double d_cos = 1.0 / (2.0 * q * n_pairs);
        if (d_u) d_u->row(j) += (d_cos * cg.d_u).cast<float>().transpose();
        if (d_v) d_v->row(k) += (d_cos * cg.d_v).cast<float>().transpose();
      }
    }
  }
  return sum / n_pairs;
}

double infonce_loss(const Matrix& z1, const Matrix& z2, Matrix* d_z1, Matrix* d_z2) {
  return cos_plus_batch(z1, z2, d_z1, d_z2);
}

LossBreakdown total_loss(const LossConfig& cfg, const PairBatchLatents& fwd,
                         bool with_grads) {
  LossBreakdown out;
  if (cfg.use_rec) {
    Matrix d1, d2;
    const double rec = rec_loss(fwd.x1, fwd.x2, fwd.xhat1, fwd.xhat2,
                                with_grads ? &d1 : nullptr,
                                with_grads ? &d2 : nullptr);
    out.components["rec"] = rec;
    if (with_grads) {
      out.d_xhat1 = std::move(d1);
      out.d_xhat2 = std::move(d2);
    }
  }
  switch (cfg.cos_mode) {
    case CosMode::None:
      break;
    case CosMode::Plus: {
      Matrix du, dv;
      const double val =
          cfg.cos_level == CosLevel::Sample
              ? cos_plus_sample(fwd.zs1, fwd.zs2, cfg.epsilon,
                                with_grads ? &du : nullptr, with_grads ? &dv : nullptr)
              : cos_plus_batch(fwd.zs1, fwd.zs2, with_grads ? &du : nullptr,
                               with_grads ? &dv : nullptr);
      out.components[cfg.cos_level == CosLevel::Sample ? "cos_plus_sample"
                                                       : "cos_plus_batch"] = val;
      if (with_grads) {
        out.d_zs1 = std::move(du);
        out.d_zs2 = std::move(dv);
      }
      break;
    }
    case CosMode::Minus: {
      Matrix du, dv;
      const double val =
          cfg.cos_level == CosLevel::Sample
              ? cos_minus_sample(fwd.zp1, fwd.zp2, cfg.epsilon,
                                 with_grads ? &du : nullptr, with_grads ? &dv : nullptr)
              : cos_minus_batch(fwd.zp1, fwd.zp2, cfg.epsilon,
                                with_grads ? &du : nullptr, with_grads ? &dv : nullptr);
      out.components[cfg.cos_level == CosLevel::Sample ? "cos_minus_sample"
                                                       : "cos_minus_batch"] = val;
      if (with_grads) {
        out.d_zp1 = std::move(du);
        out.d_zp2 = std::move(dv);
      }
      break;
    }
  }
  for (const auto& [name, value] : out.components) out.total += value;
  return out;
}

Matrix flatten_clips(const Matrix& stacked, Eigen::Index n_frames) {
  if (n_frames < 1 || stacked.rows() % n_frames != 0) {
    throw DimensionError("flatten_clips: row count not a multiple of n_frames");
  }
  const Eigen::Index b = stacked.rows() / n_frames;
  const Eigen::Index m = stacked.cols();
  Matrix flat(b, n_frames * m);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index t = 0; t < n_frames; ++t) {
      flat.block(j, t * m, 1, m) = stacked.row(j * n_frames + t);
    }
  }
  return flat;
}

Matrix unflatten_clips(const Matrix& flat, Eigen::Index n_frames) {
  if (n_frames < 1 || flat.cols() % n_frames != 0) {
    throw DimensionError("unflatten_clips: column count not a multiple of n_frames");
  }
  const Eigen::Index m = flat.cols() / n_frames;
  Matrix stacked(flat.rows() * n_frames, m);
  for (Eigen::Index j = 0; j < flat.rows(); ++j) {
    for (Eigen::Index t = 0; t < n_frames; ++t) {
      stacked.row(j * n_frames + t) = flat.block(j, t * m, 1, m);
    }
  }
  return stacked;
}

}  // namespace mvlat
