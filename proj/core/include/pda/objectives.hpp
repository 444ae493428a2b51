#pragma once

#include <vector>

#include "pda/apa.hpp"
#include "pda/interval.hpp"
#include "pda/tensor.hpp"

namespace pda {

/// Ground-truth segment in snippet units with its class row index.
struct SegmentTarget {
  Interval span;
  int class_index = -1;
};

/// Dense per-timestep supervision for one video.
struct SupervisionTargets {
  Matrix class_target;                // T x C one-hot, zero rows on background
  Vector fg_target;                   // T, {0, 1}
  std::vector<int> class_of;          // T, -1 on background
  std::vector<Interval> gt_interval;  // T, meaningful where fg_target = 1

  Eigen::Index length() const { return fg_target.size(); }
  int foreground_count() const;
};

/// Timestep t is foreground for segment s iff s.start <= t < s.end. Timesteps
/// covered by several segments take the shortest one.
SupervisionTargets build_targets(int T, int n_classes, const std::vector<SegmentTarget>& segments);

/// Mean cross-entropy over foreground timesteps; 0 when there are none.
double classification_loss(const Matrix& logits, const SupervisionTargets& targets,
                           Matrix* dlogits = nullptr);

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over all timesteps, probabilities clamped to
/// [1e-7, 1 - 1e-7] before the log.
double foreground_loss(const Vector& fg_prob, const Vector& fg_target, Vector* dfg_prob = nullptr);

/// 1 - IoU + (center distance / enclosing span)^2. Optional outputs receive the
/// partial derivatives with respect to pred.start and pred.end.
double diou_1d(const Interval& pred, const Interval& gt, double* dstart = nullptr,
               double* dend = nullptr);

/// Mean DIoU over foreground timesteps of [t - d_start, t + d_end]; 0 without
/// foreground.
double localization_loss(const LocalizationOutput& loc, const SupervisionTargets& targets,
                         Vector* dd_start = nullptr, Vector* dd_end = nullptr);

struct LossWeights {
  double classification = 1.0;
  double foreground = 1.0;
  double localization = 1.0;
};

/// Unweighted sum of the three components.
double total_loss(double l_cls, double l_fg, double l_loc);
double total_loss(double l_cls, double l_fg, double l_loc, const LossWeights& w);

}  // namespace pda
