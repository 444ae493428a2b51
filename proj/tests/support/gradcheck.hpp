#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "pda/nn.hpp"

namespace pda::testing {

inline constexpr double kFdStep = 1e-4;
inline constexpr double kFdRelTol = 1e-3;
// Entries whose gradients are both this small count as agreeing.
inline constexpr double kFdAbsFloor = 1e-7;

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

inline bool close(double analytic, double numeric) {
  const double diff = std::abs(analytic - numeric);
  return diff <= kFdAbsFloor || diff <= kFdRelTol * std::max(std::abs(analytic), std::abs(numeric));
}

/// Compares `analytic` with central differences of `loss` over every entry of
/// `values` (which `loss` must read).
inline ::testing::AssertionResult matches_finite_difference(Matrix& values, const Matrix& analytic,
                                                            const std::function<double()>& loss,
                                                            const std::string& what) {
  if (analytic.rows() != values.rows() || analytic.cols() != values.cols()) {
    return ::testing::AssertionFailure() << what << ": gradient shape mismatch";
  }
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double saved = values.data()[i];
    values.data()[i] = saved + kFdStep;
    const double up = loss();
    values.data()[i] = saved - kFdStep;
    const double down = loss();
    values.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * kFdStep);
    if (!close(analytic.data()[i], numeric)) {
      return ::testing::AssertionFailure() << what << "[" << i << "]: analytic " << analytic.data()[i]
                                           << " vs numeric " << numeric;
    }
  }
  return ::testing::AssertionSuccess();
}

/// Runs `backward` once (after zeroing), then checks every parameter.
inline ::testing::AssertionResult params_match_finite_difference(
    const nn::ParamList& params, const std::function<double()>& loss,
    const std::function<void()>& backward) {
  nn::zero_grads(params);
  backward();
  for (auto* p : params) {
    const Matrix analytic = p->grad;
    auto r = matches_finite_difference(p->value, analytic, loss, p->name);
    if (!r) return r;
  }
  return ::testing::AssertionSuccess();
}

}  // namespace pda::testing
