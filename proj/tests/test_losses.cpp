#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "mvlat/losses.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mvlat;
using test_support::random_matrix;
using test_support::to_batch;

namespace {
constexpr double kEps = 1e-7;

Matrix row(std::initializer_list<float> vals) {
  Matrix m(1, static_cast<Eigen::Index>(vals.size()));
  Eigen::Index i = 0;
  for (float v : vals) m(0, i++) = v;
  return m;
}
}  // namespace

TEST_CASE("remapped_sim closed forms") {
  Vector u(3), v(3);
  u << 1, 2, 3;
  v = u;
  CHECK(remapped_sim(u, v, kEps) == doctest::Approx(1.0 - kEps).epsilon(1e-9));
  v << -1, -2, -3;
  CHECK(remapped_sim(u, v, kEps) == doctest::Approx(kEps).epsilon(1e-9));
  u << 1, 0, 0;
  v << 0, 1, 0;
  CHECK(remapped_sim(u, v, kEps) == doctest::Approx(0.5));
  // zero vector reads as cosine 0
  v.setZero();
  CHECK(remapped_sim(u, v, kEps) == doctest::Approx(0.5));
  Vector w(2);
  CHECK_THROWS_AS(remapped_sim(u, w, kEps), DimensionError);
}

TEST_CASE("rec_loss worked examples") {
  Matrix x1(2, 2), xh1(2, 2);
  x1 << 1, 2, 3, 4;
  xh1 << 1, 2, 3, 2;
  Matrix x2 = x1, xh2 = x1;  // view 2 exact
  CHECK(rec_loss(x1, x2, xh1, xh2) == doctest::Approx(1.0));

  Matrix zeros = Matrix::Zero(2, 2);
  Matrix ones = Matrix::Ones(2, 2);
  CHECK(rec_loss(zeros, zeros, ones, ones) == doctest::Approx(2.0));
  CHECK(rec_loss(x1, x2, x1, x2) == doctest::Approx(0.0));
  CHECK_THROWS_AS(rec_loss(x1, x2, Matrix::Zero(1, 2), xh2), DimensionError);
}

TEST_CASE("sample-level cosine losses closed forms") {
  const Matrix a = row({1, 0, 0, 0});
  const Matrix b = row({0, 1, 0, 0});
  const Matrix neg_a = row({-1, 0, 0, 0});

  CHECK(cos_plus_sample(a, a, kEps) <= 2e-7);
  CHECK(cos_plus_sample(a, b, kEps) == doctest::Approx(-std::log(0.5)).epsilon(1e-6));
  CHECK(cos_plus_sample(a, neg_a, kEps) ==
        doctest::Approx(-std::log(kEps)).epsilon(1e-6));

  CHECK(cos_minus_sample(a, neg_a, kEps) <= 2e-7);
  CHECK(cos_minus_sample(a, b, kEps) == doctest::Approx(-std::log(0.5)).epsilon(1e-6));
  CHECK(cos_minus_sample(a, a, kEps) ==
        doctest::Approx(-std::log(kEps)).epsilon(1e-6));

  CHECK_THROWS_AS(cos_plus_sample(Matrix(0, 4), Matrix(0, 4), kEps), ValueError);
}

TEST_CASE("batch-level cosine losses closed forms") {
  // B = 1: numerator equals denominator
  const Matrix single = row({1, 2, 3});
  CHECK(cos_plus_batch(single, single) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(infonce_loss(single, single) == doctest::Approx(0.0).epsilon(1e-9));

  // B = 2, positives cos 1, negatives cos 0
  Matrix u(2, 2), v(2, 2);
  u << 1, 0, 0, 1;
  v = u;
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(cos_plus_batch(u, v) == doctest::Approx(expected).epsilon(1e-6));
  CHECK(infonce_loss(u, v) == doctest::Approx(expected).epsilon(1e-6));

  // all similarities equal -> log B
  Matrix same(4, 3);
  for (int j = 0; j < 4; ++j) same.row(j) << 1, 1, 1;
  CHECK(cos_plus_batch(same, same) == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  // antiparallel diagonal (no repulsion cost), orthogonal off-diagonal:
  // mean of {~0, log 2, log 2, ~0} over the 4 ordered pairs
  Matrix p1(2, 2), p2(2, 2);
  p1 << 1, 0, 0, 1;
  p2 << -1, 0, 0, -1;
  CHECK(cos_minus_batch(p1, p2, kEps) ==
        doctest::Approx(0.5 * std::log(2.0)).epsilon(1e-6));

  // all B^2 pairs orthogonal
  Matrix o1(2, 4), o2(2, 4);
  o1 << 1, 0, 0, 0, 0, 1, 0, 0;
  o2 << 0, 0, 1, 0, 0, 0, 0, 1;
  CHECK(cos_minus_batch(o1, o2, kEps) == doctest::Approx(-std::log(0.5)).epsilon(1e-6));
}

TEST_CASE("losses match the explicit-loop oracle on random batches") {
  std::mt19937 gen(42);
  for (int trial = 0; trial < 100; ++trial) {
    const int b_choices[] = {1, 2, 4, 8};
    const int b = b_choices[trial % 4];
    const Matrix u = random_matrix(b, 6, gen);
    const Matrix v = random_matrix(b, 6, gen);
    const auto ou = to_batch(u);
    const auto ov = to_batch(v);

    CHECK(cos_plus_sample(u, v, kEps) ==
          doctest::Approx(oracle::cos_plus_sample(ou, ov, kEps)).epsilon(1e-6));
    CHECK(cos_minus_sample(u, v, kEps) ==
          doctest::Approx(oracle::cos_minus_sample(ou, ov, kEps)).epsilon(1e-6));
    CHECK(cos_plus_batch(u, v) ==
          doctest::Approx(oracle::cos_plus_batch(ou, ov)).epsilon(1e-6));
    CHECK(cos_minus_batch(u, v, kEps) ==
          doctest::Approx(oracle::cos_minus_batch(ou, ov, kEps)).epsilon(1e-6));
    CHECK(infonce_loss(u, v) ==
          doctest::Approx(oracle::infonce(ou, ov)).epsilon(1e-6));

    const Matrix x1 = random_matrix(b, 6, gen);
    const Matrix x2 = random_matrix(b, 6, gen);
    CHECK(rec_loss(x1, x2, u, v) ==
          doctest::Approx(oracle::rec_loss({to_batch(x1), to_batch(x2)},
                                           {ou, ov}))
              .epsilon(1e-6));
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  std::mt19937 gen(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix u = random_matrix(4, 6, gen);
    const Matrix v = random_matrix(4, 6, gen);

    Matrix du, dv;
    cos_plus_sample(u, v, kEps, &du, &dv);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_plus_sample(m, v, kEps); }, u, du) <
          1e-3);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_plus_sample(u, m, kEps); }, v, dv) <
          1e-3);

    cos_minus_sample(u, v, kEps, &du, &dv);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_minus_sample(m, v, kEps); }, u, du) <
          1e-3);

    cos_plus_batch(u, v, &du, &dv);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_plus_batch(m, v); }, u, du) < 1e-3);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_plus_batch(u, m); }, v, dv) < 1e-3);

    cos_minus_batch(u, v, kEps, &du, &dv);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_minus_batch(m, v, kEps); }, u, du) <
          1e-3);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return cos_minus_batch(u, m, kEps); }, v, dv) <
          1e-3);

    const Matrix x1 = random_matrix(4, 6, gen);
    const Matrix x2 = random_matrix(4, 6, gen);
    Matrix d1, d2;
    rec_loss(x1, x2, u, v, &d1, &d2);
    CHECK(test_support::max_grad_rel_error(
              [&](const Matrix& m) { return rec_loss(x1, x2, m, v); }, u, d1) < 1e-3);
  }
}

TEST_CASE("structural invariants of cosine losses") {
  std::mt19937 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 1 + trial % 6;
    const Matrix u = random_matrix(b, 8, gen);
    const Matrix v = random_matrix(b, 8, gen);

    // view-swap symmetry of the sample-level losses
    CHECK(cos_plus_sample(u, v, kEps) ==
          doctest::Approx(cos_plus_sample(v, u, kEps)).epsilon(1e-9));
    CHECK(cos_minus_sample(u, v, kEps) ==
          doctest::Approx(cos_minus_sample(v, u, kEps)).epsilon(1e-9));

    // positive-scale invariance
    const float c = 0.1f + static_cast<float>(trial % 10);
    CHECK(cos_plus_sample(u * c, v * c, kEps) ==
          doctest::Approx(cos_plus_sample(u, v, kEps)).epsilon(1e-5));
    CHECK(cos_plus_batch(u * c, v * c) ==
          doctest::Approx(cos_plus_batch(u, v)).epsilon(1e-5));
    CHECK(cos_minus_batch(u * c, v * c, kEps) ==
          doctest::Approx(cos_minus_batch(u, v, kEps)).epsilon(1e-5));

    // batch-order invariance
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), gen);
    Matrix up(b, 8), vp(b, 8);
    for (Eigen::Index i = 0; i < b; ++i) {
      up.row(i) = u.row(perm[static_cast<std::size_t>(i)]);
      vp.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
    }
    CHECK(cos_plus_batch(up, vp) == doctest::Approx(cos_plus_batch(u, v)).epsilon(1e-6));
    CHECK(cos_minus_batch(up, vp, kEps) ==
          doctest::Approx(cos_minus_batch(u, v, kEps)).epsilon(1e-6));
    CHECK(infonce_loss(up, vp) == doctest::Approx(infonce_loss(u, v)).epsilon(1e-6));

    // frame-permutation invariance: consistent row permutation inside the
    // flattened clips leaves dot products and norms unchanged
    const Eigen::Index frames = 4;
    const Matrix su = random_matrix(b * frames, 2, gen);
    const Matrix sv = random_matrix(b * frames, 2, gen);
    std::vector<Eigen::Index> fperm{2, 0, 3, 1};
    Matrix pu(su.rows(), su.cols()), pv(sv.rows(), sv.cols());
    for (Eigen::Index j = 0; j < b; ++j) {
      for (Eigen::Index t = 0; t < frames; ++t) {
        pu.row(j * frames + t) = su.row(j * frames + fperm[static_cast<std::size_t>(t)]);
        pv.row(j * frames + t) = sv.row(j * frames + fperm[static_cast<std::size_t>(t)]);
      }
    }
    CHECK(cos_plus_sample(flatten_clips(pu, frames), flatten_clips(pv, frames), kEps) ==
          doctest::Approx(cos_plus_sample(flatten_clips(su, frames),
                                          flatten_clips(sv, frames), kEps))
              .epsilon(1e-6));
  }
}

TEST_CASE("loss bounds") {
  std::mt19937 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 1 + trial % 8;
    const Matrix u = random_matrix(b, 5, gen);
    const Matrix v = random_matrix(b, 5, gen);
    const double bound = -std::log(kEps);
    CHECK(cos_plus_sample(u, v, kEps) >= 0.0);
    CHECK(cos_plus_sample(u, v, kEps) <= bound);
    CHECK(cos_minus_sample(u, v, kEps) <= bound);
    CHECK(cos_minus_batch(u, v, kEps) <= bound);
    CHECK(cos_plus_batch(u, v) >= 0.0);
    CHECK(cos_plus_batch(u, v) <= std::log(static_cast<double>(b)) + 2.0);
    CHECK(rec_loss(u, v, random_matrix(b, 5, gen), random_matrix(b, 5, gen)) >= 0.0);
  }
}

TEST_CASE("apply_mask statistics and edge ratios") {
  std::mt19937 gen(5);
  const Matrix batch = random_matrix(100, 100, gen);

  MaskSpec spec;
  spec.ratio = 0.0;
  CHECK(apply_mask(batch, spec) == batch);

  spec.ratio = 1.0;
  CHECK(apply_mask(batch, spec).isZero(0.0f));

  spec.ratio = 0.4;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    spec.seed = RngSeed{seed};
    const Matrix masked = apply_mask(batch, spec);
    int zeroed = 0;
    for (Eigen::Index r = 0; r < masked.rows(); ++r) {
      for (Eigen::Index c = 0; c < masked.cols(); ++c) {
        if (masked(r, c) == 0.0f && batch(r, c) != 0.0f) ++zeroed;
      }
    }
    const double fraction = zeroed / 10000.0;
    CHECK(fraction == doctest::Approx(0.4).epsilon(0.05));
    CHECK(std::abs(fraction - 0.4) < 0.02);
  }

  // determinism: same seed and step give the same mask
  CHECK(make_mask(10, 10, spec, 3) == make_mask(10, 10, spec, 3));
  CHECK(make_mask(10, 10, spec, 3) != make_mask(10, 10, spec, 4));

  spec.ratio = 1.5;
  CHECK_THROWS_AS(make_mask(4, 4, spec), ValueError);
}

TEST_CASE("total_loss composition and bookkeeping") {
  std::mt19937 gen(9);
  PairBatchLatents fwd;
  fwd.x1 = random_matrix(8, 4, gen);
  fwd.x2 = random_matrix(8, 4, gen);
  fwd.xhat1 = random_matrix(8, 4, gen);
  fwd.xhat2 = random_matrix(8, 4, gen);
  fwd.zp1 = random_matrix(4, 4, gen);
  fwd.zp2 = random_matrix(4, 4, gen);
  fwd.zs1 = random_matrix(4, 4, gen);
  fwd.zs2 = random_matrix(4, 4, gen);

  LossConfig rec_only;
  const auto r = total_loss(rec_only, fwd);
  CHECK(r.components.size() == 1);
  CHECK(r.total == r.components.at("rec"));

  LossConfig combo;
  combo.cos_mode = CosMode::Minus;
  combo.cos_level = CosLevel::Sample;
  const auto c = total_loss(combo, fwd);
  CHECK(c.components.size() == 2);
  CHECK(c.total ==
        doctest::Approx(c.components.at("rec") + c.components.at("cos_minus_sample"))
            .epsilon(1e-12));

  for (const auto mode : {CosMode::Plus, CosMode::Minus}) {
    for (const auto level : {CosLevel::Sample, CosLevel::Batch}) {
      LossConfig cfg;
      cfg.cos_mode = mode;
      cfg.cos_level = level;
      const auto out = total_loss(cfg, fwd);
      double sum = 0.0;
      for (const auto& [k, v] : out.components) sum += v;
      CHECK(out.total == doctest::Approx(sum).epsilon(1e-9));
    }
  }
}

TEST_CASE("flatten/unflatten round trip") {
  std::mt19937 gen(13);
  const Matrix stacked = random_matrix(12, 5, gen);
  const Matrix flat = flatten_clips(stacked, 4);
  CHECK(flat.rows() == 3);
  CHECK(flat.cols() == 20);
  CHECK(unflatten_clips(flat, 4) == stacked);
  CHECK_THROWS_AS(flatten_clips(stacked, 5), DimensionError);
}
