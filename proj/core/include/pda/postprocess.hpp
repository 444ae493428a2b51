#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pda/apa.hpp"
#include "pda/metrics.hpp"

namespace pda {

/// Timing information needed to turn snippet offsets into seconds.
struct VideoMeta {
  std::string video_id;
  int snippet_stride = 1;  // frames per snippet
  double frame_rate = 1.0;
  double duration = 0.0;  // seconds

  double seconds_per_snippet() const { return snippet_stride / frame_rate; }
};

struct ProposalConfig {
  int top_k = 200;
  double score_floor = 1e-3;
};

struct SoftNmsConfig {
  double sigma = 0.5;
  double prune = 1e-3;
};

/// Every (t, c) becomes a candidate [t - d_start, t + d_end] (seconds, clamped to
/// the video) scored softmax_c(scores_t) * fg_prob_t. Candidates below the floor
/// are dropped, then the top_k by score survive (ties keep (t, c) order).
std::vector<Detection> assemble_proposals(const Matrix& scores, const LocalizationOutput& loc,
                                          const VideoMeta& meta,
                                          const std::vector<std::string>& vocabulary,
                                          const ProposalConfig& cfg);

/// Gaussian SoftNMS over one (video, class) group. Survivors come back sorted by
/// decayed score, descending.
std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma, double prune);

/// Splits by (video, class), suppresses each group independently, and merges
/// in group order.
std::vector<Detection> suppress_classwise(const std::vector<Detection>& dets,
                                          const SoftNmsConfig& cfg);

/// {"video_id", "t_start", "t_end", "label", "score"} with 6 decimals.
std::string to_json_line(const Detection& d);
void write_detections_jsonl(const std::vector<Detection>& dets, const std::filesystem::path& path);
std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path);

}  // namespace pda
