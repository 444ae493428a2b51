#include "pda/objectives.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "pda/errors.hpp"

namespace pda {

int SupervisionTargets::foreground_count() const {
  return static_cast<int>(fg_target.sum() + 0.5);
}

SupervisionTargets build_targets(int T, int n_classes, const std::vector<SegmentTarget>& segments) {
  if (T < 1 || n_classes < 1) throw std::invalid_argument("targets need T >= 1 and C >= 1");
  SupervisionTargets out;
  out.class_target = Matrix::Zero(T, n_classes);
  out.fg_target = Vector::Zero(T);
  out.class_of.assign(T, -1);
  out.gt_interval.assign(T, Interval{});
  std::vector<double> best_len(T, std::numeric_limits<double>::infinity());
  for (const auto& seg : segments) {
    require_valid(seg.span, "segment target");
    if (seg.class_index < 0 || seg.class_index >= n_classes) {
      throw std::invalid_argument("segment class index out of range");
    }
    const int first = std::max(0, static_cast<int>(std::ceil(seg.span.start)));
    for (int t = first; t < T && t < seg.span.end; ++t) {
      if (seg.span.length() < best_len[t]) {
        best_len[t] = seg.span.length();
        out.class_of[t] = seg.class_index;
        out.gt_interval[t] = seg.span;
      }
    }
  }
  for (int t = 0; t < T; ++t) {
    if (out.class_of[t] >= 0) {
      out.fg_target(t) = 1.0;
      out.class_target(t, out.class_of[t]) = 1.0;
    }
  }
  return out;
}

double classification_loss(const Matrix& logits, const SupervisionTargets& targets,
                           Matrix* dlogits) {
  if (logits.rows() != targets.class_target.rows() ||
      logits.cols() != targets.class_target.cols()) {
    throw std::invalid_argument("classification logits shape does not match targets");
  }
  if (logits.hasNaN()) throw NumericError("NaN classification logits");
  if (dlogits) *dlogits = Matrix::Zero(logits.rows(), logits.cols());
  const int n_fg = targets.foreground_count();
  if (n_fg == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int c = targets.class_of[static_cast<std::size_t>(t)];
    if (c < 0) continue;
    const double peak = logits.row(t).maxCoeff();
    const double lse = peak + std::log((logits.row(t).array() - peak).exp().sum());
    loss += lse - logits(t, c);
    if (dlogits) {
      RowVector p = (logits.row(t).array() - lse).exp().matrix();
      p(c) -= 1.0;
      dlogits->row(t) = p / n_fg;
    }
  }
  return loss / n_fg;
}

double foreground_loss(const Vector& fg_prob, const Vector& fg_target, Vector* dfg_prob) {
  if (fg_prob.size() != fg_target.size()) {
    throw std::invalid_argument("foreground probability / target length mismatch");
  }
  const auto T = fg_prob.size();
  if (T == 0) return 0.0;
  if (dfg_prob) *dfg_prob = Vector::Zero(T);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double raw = fg_prob(t);
    const double p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
    const double y = fg_target(t);
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    if (dfg_prob && raw == p) (*dfg_prob)(t) = (-y / p + (1.0 - y) / (1.0 - p)) / T;
  }
  return loss / T;
}

double diou_1d(const Interval& pred, const Interval& gt, double* dstart, double* dend) {
  require_valid(pred, "diou prediction");
  require_valid(gt, "diou ground truth");
  const double inter = intersection_length(pred, gt);
  const double uni = pred.length() + gt.length() - inter;
  const double span = std::max(pred.end, gt.end) - std::min(pred.start, gt.start);
  const double dc = pred.center() - gt.center();
  const double iou = inter / uni;
  const double loss = 1.0 - iou + (dc * dc) / (span * span);

  if (dstart || dend) {
    const bool overlap = inter > 0.0;
    // d(inter)/d(pred.start), d(inter)/d(pred.end)
    const double di_s = (overlap && pred.start > gt.start) ? -1.0 : 0.0;
    const double di_e = (overlap && pred.end < gt.end) ? 1.0 : 0.0;
    const double du_s = -1.0 - di_s;
    const double du_e = 1.0 - di_e;
    const double diou_s = (di_s * uni - inter * du_s) / (uni * uni);
    const double diou_e = (di_e * uni - inter * du_e) / (uni * uni);
    const double dspan_s = pred.start < gt.start ? -1.0 : 0.0;
    const double dspan_e = pred.end > gt.end ? 1.0 : 0.0;
    const double s2 = span * span;
    const double dpen_s = dc / s2 - 2.0 * dc * dc * dspan_s / (s2 * span);
    const double dpen_e = dc / s2 - 2.0 * dc * dc * dspan_e / (s2 * span);
    if (dstart) *dstart = -diou_s + dpen_s;
    if (dend) *dend = -diou_e + dpen_e;
  }
  return loss;
}

double localization_loss(const LocalizationOutput& loc, const SupervisionTargets& targets,
                         Vector* dd_start, Vector* dd_end) {
  const auto T = targets.length();
  if (loc.d_start.size() != T || loc.d_end.size() != T) {
    throw std::invalid_argument("localization output length does not match targets");
  }
  if (dd_start) *dd_start = Vector::Zero(T);
  if (dd_end) *dd_end = Vector::Zero(T);
  const int n_fg = targets.foreground_count();
  if (n_fg == 0) return 0.0;
  double loss = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    if (targets.fg_target(t) == 0.0) continue;
    const auto td = static_cast<double>(t);
    const Interval pred{td - loc.d_start(t), td + loc.d_end(t)};
    double ds = 0.0, de = 0.0;
    loss += diou_1d(pred, targets.gt_interval[static_cast<std::size_t>(t)], &ds, &de);
    // pred.start = t - d_start, pred.end = t + d_end
    if (dd_start) (*dd_start)(t) = -ds / n_fg;
    if (dd_end) (*dd_end)(t) = de / n_fg;
  }
  return loss / n_fg;
}

double total_loss(double l_cls, double l_fg, double l_loc) {
  return total_loss(l_cls, l_fg, l_loc, LossWeights{});
}

double total_loss(double l_cls, double l_fg, double l_loc, const LossWeights& w) {
  for (double v : {l_cls, l_fg, l_loc}) {
    if (!std::isfinite(v)) throw NumericError("non-finite loss component");
    if (v < 0.0) throw std::invalid_argument("loss components must be nonnegative");
  }
  return w.classification * l_cls + w.foreground * l_fg + w.localization * l_loc;
}

}  // namespace pda
