#include <doctest.h>

#include <filesystem>
#include <random>

#include "mvlat/model.hpp"
#include "test_support.hpp"

using namespace mvlat;
using test_support::random_matrix;

namespace {
EncoderConfig enc_cfg(int d, std::uint64_t seed = 4) {
  EncoderConfig cfg;
  cfg.d_in = d;
  cfg.seed = RngSeed{seed};
  return cfg;
}
DecoderConfig dec_cfg(int d, std::uint64_t seed = 5) {
  DecoderConfig cfg;
  cfg.d_in = d;
  cfg.seed = RngSeed{seed};
  return cfg;
}
}  // namespace

TEST_CASE("mlp forward matches a hand-rolled affine chain") {
  Mlp mlp({2, 3, 2}, Activation::Tanh, RngSeed{1});
  std::mt19937 gen(2);
  const Matrix x = random_matrix(4, 2, gen);
  const Matrix y = mlp.forward(x);
  REQUIRE(y.rows() == 4);
  REQUIRE(y.cols() == 2);

  Matrix h = x * mlp.layer(0).w.transpose();
  h.rowwise() += mlp.layer(0).b.transpose();
  h = h.array().tanh();
  Matrix expected = h * mlp.layer(1).w.transpose();
  expected.rowwise() += mlp.layer(1).b.transpose();
  CHECK((y - expected).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("mlp backward matches finite differences for every parameter") {
  for (const auto act : {Activation::Identity, Activation::Tanh, Activation::Relu}) {
    Mlp mlp({3, 4, 2}, act, RngSeed{6});
    std::mt19937 gen(7);
    const Matrix x = random_matrix(5, 3, gen);
    const Matrix d_out = Matrix::Ones(5, 2);  // loss = sum of outputs

    Mlp::Cache cache;
    mlp.forward(x, &cache);
    auto grads = mlp.zero_grads();
    const Matrix d_in = mlp.backward(cache, d_out, grads);

    auto loss_at = [&](Mlp& m, const Matrix& in) {
      return static_cast<double>(m.forward(in).sum());
    };

    // input gradient; the forward pass is float-valued, so the step must be
    // large enough to rise above float rounding noise
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return loss_at(mlp, m); }, x, d_in, 1e-2) <
          2e-3);

    // weight and bias gradients, every layer (gradient flows everywhere)
    for (std::size_t li = 0; li < mlp.n_layers(); ++li) {
      Matrix& w = mlp.layer(li).w;
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const float saved = w(r, c);
          const double step = 1e-2;
          const float hi = static_cast<float>(saved + step);
          const float lo = static_cast<float>(saved - step);
          w(r, c) = hi;
          const double f_hi = loss_at(mlp, x);
          w(r, c) = lo;
          const double f_lo = loss_at(mlp, x);
          w(r, c) = saved;
          const double fd = (f_hi - f_lo) /
                            (static_cast<double>(hi) - static_cast<double>(lo));
          const double g = grads.layers[li].w(r, c);
          CHECK(std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4}) <
                5e-3);
        }
      }
      Vector& b = mlp.layer(li).b;
      for (Eigen::Index r = 0; r < b.size(); ++r) {
        const float saved = b(r);
        b(r) = static_cast<float>(saved + 1e-2);
        const double f_hi = loss_at(mlp, x);
        b(r) = static_cast<float>(saved - 1e-2);
        const double f_lo = loss_at(mlp, x);
        b(r) = saved;
        const double fd = (f_hi - f_lo) / 2e-2;
        const double g = grads.layers[li].b(r);
        CHECK(std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-4}) < 5e-3);
      }
    }
  }
}

TEST_CASE("identity mlp reproduces its input") {
  const Mlp id = Mlp::identity(6, 2);
  std::mt19937 gen(8);
  const Matrix x = random_matrix(3, 6, gen);
  CHECK((id.forward(x) - x).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("encode splits into private and shared halves") {
  const auto model = make_model(enc_cfg(8), dec_cfg(8));
  std::mt19937 gen(9);
  EmbeddingMatrix x{random_matrix(5, 8, gen), "clip"};
  const auto bundle = encode(model, x);
  CHECK(bundle.z_p.rows() == 5);
  CHECK(bundle.z_p.cols() == 4);
  CHECK(bundle.z_s.cols() == 4);
  CHECK(bundle.clip_id == "clip");

  const Matrix full = model.encoder.forward(x.values);
  CHECK(bundle.z_p == full.leftCols(4));
  CHECK(bundle.z_s == full.rightCols(4));

  // wide-embedding shape check: 1024 -> two 512 halves
  const auto wide = make_model(enc_cfg(1024), dec_cfg(1024));
  EmbeddingMatrix xw{Matrix::Zero(862, 1024), "wide"};
  const auto bw = encode(wide, xw);
  CHECK(bw.z_p.rows() == 862);
  CHECK(bw.z_p.cols() == 512);
  CHECK(bw.z_s.cols() == 512);
}

TEST_CASE("average_shared is the elementwise mean") {
  std::mt19937 gen(10);
  const Matrix a = random_matrix(4, 3, gen);
  const Matrix b = random_matrix(4, 3, gen);
  CHECK((average_shared(a, b) - (a + b) / 2.0f).cwiseAbs().maxCoeff() < 1e-7f);
  CHECK_THROWS_AS(average_shared(a, random_matrix(3, 3, gen)), DimensionError);
}

TEST_CASE("identity model reconstructs pairs of identical clips exactly") {
  const auto model = make_identity_model(6);
  std::mt19937 gen(11);
  ViewPair pair;
  pair.view1 = {random_matrix(4, 6, gen), "a"};
  pair.view2 = pair.view1;
  pair.view2.clip_id = "b";
  const auto out = forward_pair(model, pair);
  CHECK((out.xhat1.values - pair.view1.values).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK((out.xhat2.values - pair.view2.values).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("forward_pair is symmetric under view swap") {
  const auto model = make_model(enc_cfg(6), dec_cfg(6));
  std::mt19937 gen(12);
  ViewPair pair;
  pair.view1 = {random_matrix(4, 6, gen), "a"};
  pair.view2 = {random_matrix(4, 6, gen), "b"};
  ViewPair swapped;
  swapped.view1 = pair.view2;
  swapped.view2 = pair.view1;

  const auto out = forward_pair(model, pair);
  const auto out_sw = forward_pair(model, swapped);
  CHECK(out.z_shared == out_sw.z_shared);
  CHECK(out.xhat1.values == out_sw.xhat2.values);
  CHECK(out.bundle1.z_p == out_sw.bundle2.z_p);
}

TEST_CASE("single-view inference matches the paired encoder path") {
  const auto model = make_model(enc_cfg(6), dec_cfg(6));
  std::mt19937 gen(13);
  EmbeddingMatrix x{random_matrix(5, 6, gen), "solo"};
  const auto single = infer_single(model, x);
  const auto bundle = encode(model, x);
  CHECK(single.bundle.z_p == bundle.z_p);
  CHECK(single.bundle.z_s == bundle.z_s);
  CHECK(single.joint == concat_features(bundle.z_p, bundle.z_s));
}

TEST_CASE("training-mode masking zeroes the selected subspace only") {
  const auto model = make_identity_model(6);
  std::mt19937 gen(14);
  ViewPair pair;
  pair.view1 = {random_matrix(4, 6, gen).array().abs().matrix() + Matrix::Ones(4, 6) * 0.5f, "a"};
  pair.view2 = {random_matrix(4, 6, gen).array().abs().matrix() + Matrix::Ones(4, 6) * 0.5f, "b"};

  MaskSpec mask;
  mask.target = MaskSpec::Target::Private;
  mask.ratio = 1.0;
  const auto masked = forward_pair(model, pair, mask, 0, true);
  CHECK(masked.bundle1.z_p.isZero(0.0f));
  CHECK(!masked.bundle1.z_s.isZero(0.0f));

  // inference-mode pass ignores the mask
  const auto eval_mode = forward_pair(model, pair, mask, 0, false);
  CHECK(!eval_mode.bundle1.z_p.isZero(0.0f));

  mask.target = MaskSpec::Target::Shared;
  const auto masked_s = forward_pair(model, pair, mask, 0, true);
  CHECK(masked_s.bundle1.z_s.isZero(0.0f));
  CHECK(masked_s.z_shared.isZero(0.0f));
  CHECK(!masked_s.bundle1.z_p.isZero(0.0f));
}

TEST_CASE("forward_stacked agrees with forward_pair on a single pair") {
  const auto model = make_model(enc_cfg(6), dec_cfg(6));
  std::mt19937 gen(15);
  ViewPair pair;
  pair.view1 = {random_matrix(4, 6, gen), "a"};
  pair.view2 = {random_matrix(4, 6, gen), "b"};
  const auto ref = forward_pair(model, pair);
  const auto det = forward_stacked(model, pair.view1.values, pair.view2.values,
                                   std::nullopt, 0, false);
  CHECK(det.xhat1 == ref.xhat1.values);
  CHECK(det.xhat2 == ref.xhat2.values);
  CHECK(det.zp1 == ref.bundle1.z_p);
  CHECK(det.zs2 == ref.bundle2.z_s);
  CHECK(det.z_shared == ref.z_shared);
}

TEST_CASE("backward_stacked gradients match finite differences end to end") {
  auto model = make_model(enc_cfg(4, 21), dec_cfg(4, 22));
  std::mt19937 gen(16);
  const Matrix x1 = random_matrix(6, 4, gen);
  const Matrix x2 = random_matrix(6, 4, gen);

  auto loss_of = [&](const MultiViewModel& m) {
    const auto fwd = forward_stacked(m, x1, x2, std::nullopt, 0, false);
    return static_cast<double>((x1 - fwd.xhat1).squaredNorm() +
                               (x2 - fwd.xhat2).squaredNorm());
  };

  const auto fwd = forward_stacked(model, x1, x2, std::nullopt, 0, false);
  const Matrix d_xhat1 = -2.0f * (x1 - fwd.xhat1);
  const Matrix d_xhat2 = -2.0f * (x2 - fwd.xhat2);
  auto enc_grads = model.encoder.zero_grads();
  auto dec_grads = model.decoder.zero_grads();
  backward_stacked(model, fwd, d_xhat1, d_xhat2, Matrix(), Matrix(), Matrix(),
                   Matrix(), enc_grads, dec_grads);

  auto check_param = [&](Mlp& mlp, const Mlp::Grads& grads) {
    for (std::size_t li = 0; li < mlp.n_layers(); ++li) {
      Matrix& w = mlp.layer(li).w;
      for (Eigen::Index r = 0; r < std::min<Eigen::Index>(w.rows(), 2); ++r) {
        for (Eigen::Index c = 0; c < std::min<Eigen::Index>(w.cols(), 2); ++c) {
          const float saved = w(r, c);
          w(r, c) = static_cast<float>(saved + 1e-2);
          const double f_hi = loss_of(model);
          w(r, c) = static_cast<float>(saved - 1e-2);
          const double f_lo = loss_of(model);
          w(r, c) = saved;
          const double fd = (f_hi - f_lo) / 2e-2;
          const double g = grads.layers[li].w(r, c);
          CHECK(std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-2}) <
                2e-2);
        }
      }
    }
  };
  check_param(model.encoder, enc_grads);
  check_param(model.decoder, dec_grads);
}

TEST_CASE("checkpoint round trip preserves every parameter") {
  const auto dir = std::filesystem::temp_directory_path() / "mvlat_ckpt_rt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  Checkpoint ckpt;
  ckpt.method = "multiview";
  ckpt.config_digest = 0xdeadbeefcafef00dULL;
  ckpt.d = 8;
  ckpt.encoder = Mlp({8, 16, 8}, Activation::Tanh, RngSeed{31});
  ckpt.decoder = Mlp({8, 16, 8}, Activation::Relu, RngSeed{32});
  const auto path = (dir / "model.mvck").string();
  save_checkpoint(path, ckpt);

  const auto loaded = load_checkpoint(path);
  CHECK(loaded.method == "multiview");
  CHECK(loaded.config_digest == ckpt.config_digest);
  CHECK(loaded.d == 8);
  REQUIRE(loaded.encoder.n_layers() == 2);
  for (std::size_t li = 0; li < 2; ++li) {
    CHECK(loaded.encoder.layer(li).w == ckpt.encoder.layer(li).w);
    CHECK(loaded.encoder.layer(li).b == ckpt.encoder.layer(li).b);
  }
  REQUIRE(loaded.decoder.has_value());
  CHECK(loaded.decoder->activation() == Activation::Relu);
  CHECK(loaded.decoder->layer(0).w == ckpt.decoder->layer(0).w);
  CHECK(!loaded.head.has_value());

  // functional equivalence to 1e-6
  std::mt19937 gen(17);
  const Matrix x = random_matrix(4, 8, gen);
  CHECK((loaded.encoder.forward(x) - ckpt.encoder.forward(x)).cwiseAbs().maxCoeff() <
        1e-6f);

  // with a head, without a decoder
  Checkpoint sup;
  sup.method = "supervised_sensor";
  sup.d = 8;
  sup.encoder = Mlp({8, 8}, Activation::Tanh, RngSeed{33});
  sup.head = Mlp({8, 3}, Activation::Identity, RngSeed{34});
  save_checkpoint(path, sup);
  const auto sup_loaded = load_checkpoint(path);
  CHECK(sup_loaded.head.has_value());
  CHECK(!sup_loaded.decoder.has_value());
  CHECK(sup_loaded.head->layer(0).w == sup.head->layer(0).w);

  CHECK_THROWS_AS(load_checkpoint((dir / "absent.mvck").string()), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("model construction validates widths") {
  CHECK_THROWS_AS(make_model(enc_cfg(5), dec_cfg(5)), DimensionError);  // odd
  auto enc = enc_cfg(8);
  auto dec = dec_cfg(6);
  CHECK_THROWS_AS(make_model(enc, dec), DimensionError);  // mismatched widths
}
