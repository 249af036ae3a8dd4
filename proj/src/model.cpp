#include "mvlat/model.hpp"

#include <cstring>
#include <fstream>

namespace mvlat {

namespace {

std::vector<int> mlp_dims(int d, const std::vector<int>& hidden) {
  std::vector<int> dims{d};
  if (hidden.empty()) {
    dims.push_back(d);  // two affine layers by default
  } else {
    dims.insert(dims.end(), hidden.begin(), hidden.end());
  }
  dims.push_back(d);
  return dims;
}

void check_input_width(const MultiViewModel& model, const EmbeddingMatrix& x) {
  if (x.d() != model.d) {
    throw DimensionError("model expects d=" + std::to_string(model.d) +
                         ", embedding '" + x.clip_id + "' has d=" +
                         std::to_string(x.d()));
  }
}

}  // namespace

MultiViewModel make_model(const EncoderConfig& enc, const DecoderConfig& dec) {
  if (enc.d_in != dec.d_in) {
    throw DimensionError("encoder and decoder widths differ");
  }
  if (enc.d_in < 2 || enc.d_in % 2 != 0) {
    throw DimensionError("model width must be even and >= 2");
  }
  MultiViewModel model;
  model.d = enc.d_in;
  model.encoder = Mlp(mlp_dims(enc.d_in, enc.hidden_sizes),
                      activation_from_name(enc.activation), enc.seed);
  model.decoder = Mlp(mlp_dims(dec.d_in, dec.hidden_sizes),
                      activation_from_name(dec.activation), dec.seed);
  return model;
}

MultiViewModel make_identity_model(int d) {
  MultiViewModel model;
  model.d = d;
  model.encoder = Mlp::identity(d, 2);
  model.decoder = Mlp::identity(d, 2);
  return model;
}

LatentBundle encode(const MultiViewModel& model, const EmbeddingMatrix& x) {
  check_input_width(model, x);
  const Matrix h = model.encoder.forward(x.values);
  LatentBundle bundle;
  bundle.clip_id = x.clip_id;
  bundle.z_p = h.leftCols(model.d / 2);
  bundle.z_s = h.rightCols(model.d / 2);
  return bundle;
}

Matrix average_shared(const Matrix& z_s1, const Matrix& z_s2) {
  if (z_s1.rows() != z_s2.rows() || z_s1.cols() != z_s2.cols()) {
    throw DimensionError("average_shared: shape mismatch");
  }
  return (z_s1 + z_s2) * 0.5f;
}

EmbeddingMatrix decode(const MultiViewModel& model, const Matrix& z_p,
                       const Matrix& z_shared, const std::string& clip_id) {
  if (z_p.rows() != z_shared.rows() || z_p.cols() != z_shared.cols() ||
      z_p.cols() != model.d / 2) {
    throw DimensionError("decode: latent halves must both be (n x d/2)");
  }
  EmbeddingMatrix out;
  out.clip_id = clip_id;
  out.values = model.decoder.forward(concat_features(z_p, z_shared));
  return out;
}

PairForwardDetail forward_stacked(const MultiViewModel& model, const Matrix& x1,
                                  const Matrix& x2,
                                  const std::optional<MaskSpec>& mask,
                                  std::uint64_t step, bool training) {
  if (x1.cols() != model.d || x2.cols() != model.d) {
    throw DimensionError("forward_stacked: view width != model d");
  }
  const int half = model.d / 2;
  PairForwardDetail fwd;
  const Matrix h1 = model.encoder.forward(x1, &fwd.enc1);
  const Matrix h2 = model.encoder.forward(x2, &fwd.enc2);
  fwd.zp1 = h1.leftCols(half);
  fwd.zs1 = h1.rightCols(half);
  fwd.zp2 = h2.leftCols(half);
  fwd.zs2 = h2.rightCols(half);

  if (training && mask && mask->ratio > 0.0) {
    // independent masks per view; mixed step indices keep them decorrelated
    fwd.mask1 = make_mask(fwd.zp1.rows(), half, *mask, step * 2);
    fwd.mask2 = make_mask(fwd.zp2.rows(), half, *mask, step * 2 + 1);
    fwd.mask_target = mask->target;
    if (mask->target == MaskSpec::Target::Private) {
      fwd.zp1 = fwd.zp1.cwiseProduct(fwd.mask1);
      fwd.zp2 = fwd.zp2.cwiseProduct(fwd.mask2);
    } else {
      fwd.zs1 = fwd.zs1.cwiseProduct(fwd.mask1);
      fwd.zs2 = fwd.zs2.cwiseProduct(fwd.mask2);
    }
  }

  fwd.z_shared = average_shared(fwd.zs1, fwd.zs2);
  fwd.xhat1 = model.decoder.forward(concat_features(fwd.zp1, fwd.z_shared), &fwd.dec1);
  fwd.xhat2 = model.decoder.forward(concat_features(fwd.zp2, fwd.z_shared), &fwd.dec2);
  return fwd;
}

void backward_stacked(const MultiViewModel& model, const PairForwardDetail& fwd,
                      const Matrix& d_xhat1, const Matrix& d_xhat2,
                      const Matrix& d_zp1, const Matrix& d_zp2,
                      const Matrix& d_zs1, const Matrix& d_zs2,
                      Mlp::Grads& enc_grads, Mlp::Grads& dec_grads) {
  const int half = model.d / 2;
  const Matrix d_dec_in1 = model.decoder.backward(fwd.dec1, d_xhat1, dec_grads);
  const Matrix d_dec_in2 = model.decoder.backward(fwd.dec2, d_xhat2, dec_grads);

  Matrix g_zp1 = d_dec_in1.leftCols(half);
  Matrix g_zp2 = d_dec_in2.leftCols(half);
  const Matrix d_z_shared = d_dec_in1.rightCols(half) + d_dec_in2.rightCols(half);
  Matrix g_zs1 = d_z_shared * 0.5f;
  Matrix g_zs2 = d_z_shared * 0.5f;

  if (d_zp1.size() > 0) g_zp1 += d_zp1;
  if (d_zp2.size() > 0) g_zp2 += d_zp2;
  if (d_zs1.size() > 0) g_zs1 += d_zs1;
  if (d_zs2.size() > 0) g_zs2 += d_zs2;

  // gradients flow only through surviving entries of the masked subspace
  if (fwd.mask_target) {
    if (*fwd.mask_target == MaskSpec::Target::Private) {
      g_zp1 = g_zp1.cwiseProduct(fwd.mask1);
      g_zp2 = g_zp2.cwiseProduct(fwd.mask2);
    } else {
      g_zs1 = g_zs1.cwiseProduct(fwd.mask1);
      g_zs2 = g_zs2.cwiseProduct(fwd.mask2);
    }
  }

  model.encoder.backward(fwd.enc1, concat_features(g_zp1, g_zs1), enc_grads);
  model.encoder.backward(fwd.enc2, concat_features(g_zp2, g_zs2), enc_grads);
}

PairForwardResult forward_pair(const MultiViewModel& model, const ViewPair& pair,
                               const std::optional<MaskSpec>& mask,
                               std::uint64_t step, bool training) {
  check_input_width(model, pair.view1);
  check_input_width(model, pair.view2);
  const auto fwd = forward_stacked(model, pair.view1.values, pair.view2.values,
                                   mask, step, training);
  PairForwardResult out;
  out.xhat1 = {fwd.xhat1, pair.view1.clip_id};
  out.xhat2 = {fwd.xhat2, pair.view2.clip_id};
  out.bundle1 = {fwd.zp1, fwd.zs1, pair.view1.clip_id};
  out.bundle2 = {fwd.zp2, fwd.zs2, pair.view2.clip_id};
  out.z_shared = fwd.z_shared;
  return out;
}

SingleViewResult infer_single(const MultiViewModel& model, const EmbeddingMatrix& x) {
  SingleViewResult out;
  out.bundle = encode(model, x);
  out.joint = concat_features(out.bundle.z_p, out.bundle.z_s);
  return out;
}

// ---- checkpoint serialization ----

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4] = {static_cast<unsigned char>(v),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  write_u32(out, static_cast<std::uint32_t>(v));
  write_u32(out, static_cast<std::uint32_t>(v >> 32));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  return static_cast<std::uint32_t>(buf[0]) |
         (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) |
         (static_cast<std::uint32_t>(buf[3]) << 24);
}

std::uint64_t read_u64(std::istream& in) {
  const std::uint64_t lo = read_u32(in);
  const std::uint64_t hi = read_u32(in);
  return lo | (hi << 32);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float v = m(r, c);
      out.write(reinterpret_cast<const char*>(&v), sizeof(float));
    }
  }
}

Matrix read_matrix(std::istream& in) {
  const std::uint32_t rows = read_u32(in);
  const std::uint32_t cols = read_u32(in);
  Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) {
      float v;
      in.read(reinterpret_cast<char*>(&v), sizeof(float));
      m(r, c) = v;
    }
  }
  return m;
}

void write_mlp(std::ostream& out, const Mlp& mlp) {
  write_string(out, activation_name(mlp.activation()));
  write_u32(out, static_cast<std::uint32_t>(mlp.n_layers()));
  for (std::size_t i = 0; i < mlp.n_layers(); ++i) {
    write_matrix(out, mlp.layer(i).w);
    write_matrix(out, Matrix(mlp.layer(i).b));
  }
}

Mlp read_mlp(std::istream& in) {
  const Activation act = activation_from_name(read_string(in));
  const std::uint32_t n_layers = read_u32(in);
  std::vector<Matrix> ws;
  std::vector<Vector> bs;
  std::vector<int> dims;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    ws.push_back(read_matrix(in));
    bs.push_back(Vector(read_matrix(in)));
    if (i == 0) dims.push_back(static_cast<int>(ws[0].cols()));
    dims.push_back(static_cast<int>(ws.back().rows()));
  }
  Mlp mlp(dims, act, RngSeed{0});
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    mlp.layer(i).w = ws[i];
    mlp.layer(i).b = bs[i];
  }
  return mlp;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("MVCK", 4);
  write_u32(out, kCheckpointVersion);
  write_string(out, ckpt.method);
  write_u64(out, ckpt.config_digest);
  write_u32(out, static_cast<std::uint32_t>(ckpt.d));
  const std::uint32_t flags = (ckpt.method != "pretrained_only" ? 1u : 0u) |
                              (ckpt.decoder ? 2u : 0u) | (ckpt.head ? 4u : 0u);
  write_u32(out, flags);
  if (flags & 1u) write_mlp(out, ckpt.encoder);
  if (ckpt.decoder) write_mlp(out, *ckpt.decoder);
  if (ckpt.head) write_mlp(out, *ckpt.head);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint not found: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MVCK", 4) != 0) {
    throw IoError("checkpoint " + path + ": bad magic");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path + ": unsupported version");
  }
  Checkpoint ckpt;
  ckpt.method = read_string(in);
  ckpt.config_digest = read_u64(in);
  ckpt.d = static_cast<int>(read_u32(in));
  const std::uint32_t flags = read_u32(in);
  if (flags & 1u) ckpt.encoder = read_mlp(in);
  if (flags & 2u) ckpt.decoder = read_mlp(in);
  if (flags & 4u) ckpt.head = read_mlp(in);
  if (!in) throw IoError("checkpoint " + path + ": truncated");
  return ckpt;
}

}  // namespace mvlat
