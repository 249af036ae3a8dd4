#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvlat {

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

/// Seed wrapper for every stochastic operation in the toolkit.
/// Equal seeds plus equal inputs give bit-equal outputs.
struct RngSeed {
  std::uint64_t value = 0;
};

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One clip's precomputed codec latent, (n_frames x d).
struct EmbeddingMatrix {
  Matrix values;
  std::string clip_id;

  Eigen::Index n_frames() const { return values.rows(); }
  Eigen::Index d() const { return values.cols(); }
};

/// Private and shared halves of one encoded clip, each (n_frames x d/2).
struct LatentBundle {
  Matrix z_p;
  Matrix z_s;
  std::string clip_id;
};

/// Checks shape and finiteness invariants; returns the input unchanged.
const EmbeddingMatrix& validate_embedding(const EmbeddingMatrix& m);

/// Concatenation along the feature axis, (n x d/2) + (n x d/2) -> (n x d).
Matrix concat_features(const Matrix& left, const Matrix& right);

}  // namespace mvlat
