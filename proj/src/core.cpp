#include "mvlat/core.hpp"

#include <cmath>

namespace mvlat {

const EmbeddingMatrix& validate_embedding(const EmbeddingMatrix& m) {
  if (m.values.rows() < 1) {
    throw DimensionError("embedding '" + m.clip_id + "': n_frames must be >= 1");
  }
  if (m.values.cols() < 2 || m.values.cols() % 2 != 0) {
    throw DimensionError("embedding '" + m.clip_id + "': feature dim " +
                         std::to_string(m.values.cols()) +
                         " must be even and >= 2");
  }
  if (!m.values.allFinite()) {
    throw ValueError("embedding '" + m.clip_id + "': non-finite entry");
  }
  return m;
}

Matrix concat_features(const Matrix& left, const Matrix& right) {
  if (left.rows() != right.rows()) {
    throw DimensionError("concat_features: row counts differ");
  }
  Matrix out(left.rows(), left.cols() + right.cols());
  out.leftCols(left.cols()) = left;
  out.rightCols(right.cols()) = right;
  return out;
}

}  // namespace mvlat
