#include "pda/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

std::vector<Detection> assemble_proposals(const Matrix& scores, const LocalizationOutput& loc,
                                          const VideoMeta& meta,
                                          const std::vector<std::string>& vocabulary,
                                          const ProposalConfig& cfg) {
  const auto T = scores.rows();
  const auto C = scores.cols();
  if (cfg.top_k < 1) throw std::invalid_argument("top_k must be >= 1");
  if (static_cast<Eigen::Index>(vocabulary.size()) != C || loc.fg_prob.size() != T ||
      loc.d_start.size() != T || loc.d_end.size() != T) {
    throw std::invalid_argument("proposal inputs disagree in shape");
  }
  const Matrix probs = softmax_rows(scores);
  const double sps = meta.seconds_per_snippet();

  std::vector<Detection> out;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double td = static_cast<double>(t);
    const double start = std::clamp((td - loc.d_start(t)) * sps, 0.0, meta.duration);
    const double end = std::clamp((td + loc.d_end(t)) * sps, 0.0, meta.duration);
    if (!(start < end)) continue;
    for (Eigen::Index c = 0; c < C; ++c) {
      const double s = probs(t, c) * loc.fg_prob(t);
      if (s < cfg.score_floor) continue;
      out.push_back(Detection{meta.video_id, start, end, vocabulary[static_cast<std::size_t>(c)], s});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  if (out.size() > static_cast<std::size_t>(cfg.top_k)) out.resize(static_cast<std::size_t>(cfg.top_k));
  return out;
}

std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma, double prune) {
  if (!(sigma > 0.0)) throw std::invalid_argument("soft_nms sigma must be positive");
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  while (!dets.empty()) {
    // Earliest index wins ties, so equal scores keep their input order.
    std::size_t best = 0;
    for (std::size_t i = 1; i < dets.size(); ++i) {
      if (dets[i].score > dets[best].score) best = i;
    }
    Detection top = dets[best];
    dets.erase(dets.begin() + static_cast<std::ptrdiff_t>(best));
    std::vector<Detection> rest;
    rest.reserve(dets.size());
    for (auto& d : dets) {
      const double o = tiou(top.interval(), d.interval());
      d.score *= std::exp(-(o * o) / sigma);
      if (d.score >= prune) rest.push_back(std::move(d));
    }
    kept.push_back(std::move(top));
    dets = std::move(rest);
  }
  return kept;
}

std::vector<Detection> suppress_classwise(const std::vector<Detection>& dets,
                                          const SoftNmsConfig& cfg) {
  std::map<std::pair<std::string, std::string>, std::vector<Detection>> groups;
  for (const auto& d : dets) groups[{d.video_id, d.class_name}].push_back(d);
  std::vector<Detection> out;
  for (auto& [_, g] : groups) {
    auto kept = soft_nms(std::move(g), cfg.sigma, cfg.prune);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

namespace {
std::string six(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string to_json_line(const Detection& d) {
  // Numbers are spliced in as text so the 6-decimal rendering is exact.
  return "{\"video_id\": " + nlohmann::json(d.video_id).dump() + ", \"t_start\": " + six(d.start) +
         ", \"t_end\": " + six(d.end) + ", \"label\": " + nlohmann::json(d.class_name).dump() +
         ", \"score\": " + six(d.score) + "}";
}

void write_detections_jsonl(const std::vector<Detection>& dets, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& d : dets) out << to_json_line(d) << "\n";
}

std::vector<Detection> read_detections_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<Detection> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back(Detection{j.at("video_id").get<std::string>(), j.at("t_start").get<double>(),
                              j.at("t_end").get<double>(), j.at("label").get<std::string>(),
                              j.at("score").get<double>()});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pda
