#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pda/interval.hpp"

namespace pda {

struct Detection {
  std::string video_id;
  double start = 0.0;  // seconds
  double end = 0.0;    // seconds
  std::string class_name;
  double score = 0.0;

  Interval interval() const { return {start, end}; }
  bool operator==(const Detection&) const = default;
};

struct GroundTruthSegment {
  double start = 0.0;  // seconds
  double end = 0.0;
  std::string label;
  bool operator==(const GroundTruthSegment&) const = default;
};

using AnnotationSet = std::vector<GroundTruthSegment>;
/// video_id -> segments
using GroundTruth = std::map<std::string, AnnotationSet>;

/// |a ∩ b| / |a ∪ b|.
double tiou(const Interval& a, const Interval& b);

struct EvalConfig {
  std::vector<double> thresholds;

  /// 0.3:0.1:0.7
  static EvalConfig thumos();
  /// 0.5:0.05:0.95
  static EvalConfig activitynet();
  /// Throws std::invalid_argument unless nonempty, strictly increasing, in (0, 1).
  void validate() const;
};

/// Greedy matching in descending score order (ties: earlier start, then
/// video_id); a detection takes the unmatched same-class, same-video GT with the
/// highest tIoU >= threshold. All-point interpolated area under the PR curve.
/// Returns 0 when there is no GT.
double average_precision(const std::vector<Detection>& dets, const GroundTruth& gts,
                         double threshold);

struct MeanApResult {
  std::vector<double> thresholds;
  std::vector<double> map;  // one per threshold
  double average = 0.0;
  /// class -> AP per threshold, for classes with at least one GT segment
  std::map<std::string, std::vector<double>> per_class;
};

/// Per threshold, mean AP over classes that have ground truth; `average` is the
/// mean over thresholds. Throws std::invalid_argument on an empty GT set.
MeanApResult mean_ap(const std::vector<Detection>& dets, const GroundTruth& gts,
                     const EvalConfig& cfg);

void write_map_csv(const MeanApResult& r, const std::filesystem::path& path);
void write_per_class_csv(const MeanApResult& r, const std::filesystem::path& path);
void write_summary_json(const MeanApResult& r, const std::filesystem::path& path);

}  // namespace pda
