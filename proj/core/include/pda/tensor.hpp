#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string_view>

namespace pda {

// Row-major so that a row is one timestep / one class embedding.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// Numerically stable softmax of a vector.
inline Vector softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector e = (logits.array() - peak).exp().matrix();
  return e / e.sum();
}

/// Softmax applied independently to every row.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    RowVector e = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) = e / e.sum();
  }
  return out;
}

/// Backward pass of a row-wise softmax given its output.
inline Matrix softmax_rows_backward(const Matrix& probs, const Matrix& dprobs) {
  Matrix dlogits(probs.rows(), probs.cols());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double dot = probs.row(r).dot(dprobs.row(r));
    dlogits.row(r) = probs.row(r).array() * (dprobs.row(r).array() - dot);
  }
  return dlogits;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace pda
