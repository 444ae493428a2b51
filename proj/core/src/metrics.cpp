#include "pda/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

double tiou(const Interval& a, const Interval& b) {
  require_valid(a, "tiou");
  require_valid(b, "tiou");
  const double inter = intersection_length(a, b);
  return inter / (a.length() + b.length() - inter);
}

EvalConfig EvalConfig::thumos() { return EvalConfig{{0.3, 0.4, 0.5, 0.6, 0.7}}; }

EvalConfig EvalConfig::activitynet() {
  EvalConfig cfg;
  for (int i = 0; i < 10; ++i) cfg.thresholds.push_back(0.5 + 0.05 * i);
  return cfg;
}

void EvalConfig::validate() const {
  if (thresholds.empty()) throw std::invalid_argument("no tIoU thresholds");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0 && thresholds[i] < 1.0)) {
      throw std::invalid_argument("tIoU thresholds must lie in (0, 1)");
    }
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) {
      throw std::invalid_argument("tIoU thresholds must be strictly increasing");
    }
  }
}

double average_precision(const std::vector<Detection>& dets, const GroundTruth& gts,
                         double threshold) {
  std::size_t n_gt = 0;
  for (const auto& [_, segs] : gts) n_gt += segs.size();
  if (n_gt == 0) return 0.0;

  std::vector<const Detection*> order;
  order.reserve(dets.size());
  for (const auto& d : dets) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score > b->score;
    if (a->start != b->start) return a->start < b->start;
    return a->video_id < b->video_id;
  });

  std::map<std::string, std::vector<bool>> used;
  for (const auto& [vid, segs] : gts) used[vid].assign(segs.size(), false);

  std::vector<double> precision, recall;
  precision.reserve(order.size());
  recall.reserve(order.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Detection& d = *order[i];
    const auto it = gts.find(d.video_id);
    if (it != gts.end()) {
      auto& flags = used[d.video_id];
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < it->second.size(); ++j) {
        const auto& g = it->second[j];
        if (flags[j] || g.label != d.class_name) continue;
        const double o = tiou(d.interval(), Interval{g.start, g.end});
        if (o >= threshold && o > best) {
          best = o;
          best_j = j;
        }
      }
      if (best >= 0.0) {
        flags[best_j] = true;
        ++tp;
      }
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  if (precision.empty()) return 0.0;

  // Precision envelope, then area under the step function.
  for (std::size_t i = precision.size() - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

MeanApResult mean_ap(const std::vector<Detection>& dets, const GroundTruth& gts,
                     const EvalConfig& cfg) {
  cfg.validate();
  std::map<std::string, GroundTruth> gt_by_class;
  for (const auto& [vid, segs] : gts) {
    for (const auto& s : segs) gt_by_class[s.label][vid].push_back(s);
  }
  if (gt_by_class.empty()) throw std::invalid_argument("mean AP needs at least one GT segment");
  std::map<std::string, std::vector<Detection>> det_by_class;
  for (const auto& d : dets) {
    if (gt_by_class.count(d.class_name)) det_by_class[d.class_name].push_back(d);
  }

  MeanApResult r;
  r.thresholds = cfg.thresholds;
  r.map.assign(cfg.thresholds.size(), 0.0);
  for (const auto& [cls, class_gt] : gt_by_class) {
    auto& row = r.per_class[cls];
    for (std::size_t k = 0; k < cfg.thresholds.size(); ++k) {
      const double ap = average_precision(det_by_class[cls], class_gt, cfg.thresholds[k]);
      row.push_back(ap);
      r.map[k] += ap;
    }
  }
  for (auto& m : r.map) m /= static_cast<double>(gt_by_class.size());
  double sum = 0.0;
  for (double m : r.map) sum += m;
  r.average = sum / static_cast<double>(r.map.size());
  return r;
}

namespace {
std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace

void write_map_csv(const MeanApResult& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "threshold,mAP\n";
  for (std::size_t k = 0; k < r.thresholds.size(); ++k) {
    out << fixed(r.thresholds[k], 2) << "," << fixed(r.map[k]) << "\n";
  }
  out << "avg," << fixed(r.average) << "\n";
}

void write_per_class_csv(const MeanApResult& r, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "class";
  for (double t : r.thresholds) out << ",AP@" << fixed(t, 2);
  out << "\n";
  for (const auto& [cls, aps] : r.per_class) {
    out << cls;
    for (double ap : aps) out << "," << fixed(ap);
    out << "\n";
  }
}

void write_summary_json(const MeanApResult& r, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["thresholds"] = r.thresholds;
  j["mAP"] = r.map;
  j["avg_mAP"] = r.average;
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (const auto& [cls, aps] : r.per_class) pc[cls] = aps;
  j["per_class_AP"] = std::move(pc);
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace pda
