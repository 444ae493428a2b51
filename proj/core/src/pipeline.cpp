#include "pda/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "io_util.hpp"
#include "pda/errors.hpp"

namespace pda {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Scheduler s) { return s == Scheduler::Cosine ? "cosine" : "multistep"; }

Scheduler scheduler_from_string(std::string_view s) {
  if (s == "multistep") return Scheduler::MultiStep;
  if (s == "cosine") return Scheduler::Cosine;
  throw ConfigError("unknown scheduler '" + std::string(s) + "'");
}

double OptimConfig::effective_warmup() const {
  return epochs < 25 ? 0.2 * epochs : warmup_epochs;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  model.validate();
  const auto& o = optim;
  if (o.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(o.learning_rate >= 0.0) || !std::isfinite(o.learning_rate)) {
    throw ConfigError("learning_rate must be finite and nonnegative");
  }
  if (o.warmup_epochs < 0.0 || !(o.effective_warmup() < o.epochs)) {
    throw ConfigError("warmup must be shorter than training");
  }
  if (o.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  for (std::size_t i = 0; i < o.milestones.size(); ++i) {
    if (!(o.milestones[i] > 0.0 && o.milestones[i] <= 1.0) ||
        (i > 0 && !(o.milestones[i] > o.milestones[i - 1]))) {
      throw ConfigError("milestones must be increasing fractions in (0, 1]");
    }
  }
  if (!(o.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (encoder.dim < 1) throw ConfigError("encoder dim must be positive");
  if (encoder.dim != model.d_txt) throw ConfigError("encoder dim must equal model d_txt");
  for (double w : {loss.classification, loss.foreground, loss.localization}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  }
  if (inference.proposals.top_k < 1) throw ConfigError("top_k must be >= 1");
  if (!(inference.nms.sigma > 0.0)) throw ConfigError("soft-NMS sigma must be positive");
  try {
    eval.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ordered_json TrainConfig::to_json() const {
  const auto& b = model.backbone;
  ordered_json j;
  j["seed"] = seed;
  j["model"] = {{"d_in", b.d_in},           {"d_model", b.d_model},
                {"layers", b.layers},       {"heads", b.heads},
                {"ffn_hidden", b.ffn_hidden}, {"max_len", b.max_len},
                {"d_txt", model.d_txt},     {"cross_heads", model.cross_heads},
                {"weight_heads", model.weight_heads}, {"weight_hidden", model.weight_hidden},
                {"fusion_hidden", model.fusion_hidden}};
  j["phase_set"] = model.phase_count;
  j["filtering"] = to_string(model.filtering);
  j["alignment"] = to_string(model.alignment);
  j["weight_mode"] = to_string(model.weight_mode);
  j["weight_input"] = to_string(model.weight_input);
  j["optim"] = {{"epochs", optim.epochs},
                {"warmup_epochs", optim.warmup_epochs},
                {"learning_rate", optim.learning_rate},
                {"batch_size", optim.batch_size},
                {"scheduler", to_string(optim.scheduler)},
                {"milestones", optim.milestones},
                {"gamma", optim.gamma},
                {"clip_norm", optim.clip_norm}};
  j["loss_weights"] = {{"classification", loss.classification},
                       {"foreground", loss.foreground},
                       {"localization", loss.localization}};
  j["encoder"] = {{"dim", encoder.dim}, {"seed", encoder.seed}, {"lexicon", encoder.lexicon}};
  j["inference"] = {{"top_k", inference.proposals.top_k},
                    {"score_floor", inference.proposals.score_floor},
                    {"sigma", inference.nms.sigma},
                    {"prune", inference.nms.prune}};
  j["eval"] = {{"thresholds", eval.thresholds}};
  return j;
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) ==
        allowed.end()) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

}  // namespace

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    check_keys(j,
               {"seed", "model", "phase_set", "filtering", "alignment", "weight_mode",
                "weight_input", "optim", "loss_weights", "encoder", "inference", "eval"},
               "config");
    read_opt(j, "seed", c.seed);
    if (j.contains("encoder")) {
      const auto& e = j["encoder"];
      check_keys(e, {"dim", "seed", "lexicon"}, "encoder");
      read_opt(e, "dim", c.encoder.dim);
      read_opt(e, "seed", c.encoder.seed);
      read_opt(e, "lexicon", c.encoder.lexicon);
    }
    c.model.d_txt = c.encoder.dim;
    if (j.contains("model")) {
      const auto& m = j["model"];
      check_keys(m,
                 {"preset", "d_in", "d_model", "layers", "heads", "ffn_hidden", "max_len", "d_txt",
                  "cross_heads", "weight_heads", "weight_hidden", "fusion_hidden"},
                 "model");
      const std::string preset = m.value("preset", "desk");
      if (preset == "full") {
        c.model.backbone = BackboneConfig::full(c.model.backbone.d_in);
        c.model.weight_heads = 4;
        c.model.weight_hidden = 1024;
        c.model.fusion_hidden = 1024;
      } else if (preset != "desk") {
        throw ConfigError("unknown model preset '" + preset + "'");
      }
      auto& b = c.model.backbone;
      read_opt(m, "d_in", b.d_in);
      read_opt(m, "d_model", b.d_model);
      read_opt(m, "layers", b.layers);
      read_opt(m, "heads", b.heads);
      read_opt(m, "ffn_hidden", b.ffn_hidden);
      read_opt(m, "max_len", b.max_len);
      read_opt(m, "d_txt", c.model.d_txt);
      read_opt(m, "cross_heads", c.model.cross_heads);
      read_opt(m, "weight_heads", c.model.weight_heads);
      read_opt(m, "weight_hidden", c.model.weight_hidden);
      read_opt(m, "fusion_hidden", c.model.fusion_hidden);
    }
    read_opt(j, "phase_set", c.model.phase_count);
    if (j.contains("filtering")) c.model.filtering = filtering_from_string(j["filtering"].get<std::string>());
    if (j.contains("alignment")) c.model.alignment = alignment_from_string(j["alignment"].get<std::string>());
    if (j.contains("weight_mode")) {
      c.model.weight_mode = weight_mode_from_string(j["weight_mode"].get<std::string>());
    }
    if (j.contains("weight_input")) {
      c.model.weight_input = weight_input_from_string(j["weight_input"].get<std::string>());
    }
    if (j.contains("optim")) {
      const auto& o = j["optim"];
      check_keys(o,
                 {"epochs", "warmup_epochs", "learning_rate", "batch_size", "scheduler",
                  "milestones", "gamma", "clip_norm"},
                 "optim");
      read_opt(o, "epochs", c.optim.epochs);
      read_opt(o, "warmup_epochs", c.optim.warmup_epochs);
      read_opt(o, "learning_rate", c.optim.learning_rate);
      read_opt(o, "batch_size", c.optim.batch_size);
      if (o.contains("scheduler")) c.optim.scheduler = scheduler_from_string(o["scheduler"].get<std::string>());
      read_opt(o, "milestones", c.optim.milestones);
      read_opt(o, "gamma", c.optim.gamma);
      read_opt(o, "clip_norm", c.optim.clip_norm);
    }
    if (j.contains("loss_weights")) {
      const auto& l = j["loss_weights"];
      check_keys(l, {"classification", "foreground", "localization"}, "loss_weights");
      read_opt(l, "classification", c.loss.classification);
      read_opt(l, "foreground", c.loss.foreground);
      read_opt(l, "localization", c.loss.localization);
    }
    if (j.contains("inference")) {
      const auto& i = j["inference"];
      check_keys(i, {"top_k", "score_floor", "sigma", "prune"}, "inference");
      read_opt(i, "top_k", c.inference.proposals.top_k);
      read_opt(i, "score_floor", c.inference.proposals.score_floor);
      read_opt(i, "sigma", c.inference.nms.sigma);
      read_opt(i, "prune", c.inference.nms.prune);
    }
    if (j.contains("eval")) {
      const auto& e = j["eval"];
      check_keys(e, {"preset", "thresholds"}, "eval");
      const std::string preset = e.value("preset", "thumos");
      if (preset == "activitynet") {
        c.eval = EvalConfig::activitynet();
      } else if (preset != "thumos") {
        throw ConfigError("unknown eval preset '" + preset + "'");
      }
      read_opt(e, "thresholds", c.eval.thresholds);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::slurp(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Optimization

double learning_rate_at(const OptimConfig& cfg, long step, long steps_per_epoch) {
  const double base = cfg.learning_rate;
  const double total = static_cast<double>(cfg.epochs) * static_cast<double>(steps_per_epoch);
  const double warm = std::round(cfg.effective_warmup() * static_cast<double>(steps_per_epoch));
  const double s = static_cast<double>(step);
  if (s < warm) return base * (s + 1.0) / warm;
  if (cfg.scheduler == Scheduler::Cosine) {
    const double span = std::max(1.0, total - warm);
    const double progress = std::clamp((s - warm) / span, 0.0, 1.0);
    return 0.5 * base * (1.0 + std::cos(M_PI * progress));
  }
  double lr = base;
  for (double m : cfg.milestones) {
    if (s >= std::round(m * total)) lr *= cfg.gamma;
  }
  return lr;
}

Adam::Adam(nn::ParamList params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: "PDAC", u32 header length, JSON header, then raw doubles in
// header order.

Checkpoint Checkpoint::capture(PdaModel& model, const TrainConfig& cfg,
                               std::vector<std::string> classes, int epoch, const std::string& rng) {
  Checkpoint c;
  c.config = cfg;
  c.train_classes = std::move(classes);
  c.epoch = epoch;
  c.rng_state = rng;
  for (const auto* p : model.parameters()) c.params[p->name] = p->value;
  return c;
}

PdaModel Checkpoint::instantiate() const {
  PdaModel model(config.model);
  auto params = model.parameters();
  if (params.size() != this->params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(this->params.size()) +
                      " tensors, config expects " + std::to_string(params.size()));
  }
  for (auto* p : params) {
    const auto it = this->params.find(p->name);
    if (it == this->params.end()) throw ConfigError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      throw ConfigError("checkpoint shape mismatch for '" + p->name + "'");
    }
    p->value = it->second;
  }
  return model;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  ordered_json header;
  header["config"] = config.to_json();
  header["train_classes"] = train_classes;
  header["epoch"] = epoch;
  header["rng_state"] = rng_state;
  ordered_json index = ordered_json::array();
  for (const auto& [name, m] : params) index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["params"] = std::move(index);
  const std::string h = header.dump();

  std::string buf = "PDAC";
  const auto hl = static_cast<std::uint32_t>(h.size());
  buf.append(reinterpret_cast<const char*>(&hl), sizeof hl);
  buf += h;
  for (const auto& [_, m] : params) {
    buf.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  detail::write_atomic(path, buf);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  const auto where = path.string() + ": ";
  if (buf.size() < 8 || buf.compare(0, 4, "PDAC") != 0) throw FormatError(where + "not a checkpoint");
  std::uint32_t hl;
  std::memcpy(&hl, buf.data() + 4, sizeof hl);
  if (buf.size() < 8 + static_cast<std::size_t>(hl)) throw FormatError(where + "truncated header");
  json header;
  try {
    header = json::parse(buf.substr(8, hl));
  } catch (const json::exception& e) {
    throw FormatError(where + e.what());
  }
  Checkpoint c;
  c.config = TrainConfig::from_json(header.at("config"));
  c.train_classes = header.at("train_classes").get<std::vector<std::string>>();
  c.epoch = header.at("epoch").get<int>();
  c.rng_state = header.at("rng_state").get<std::string>();
  std::size_t offset = 8 + hl;
  for (const auto& e : header.at("params")) {
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
    if (rows < 0 || cols < 0 || buf.size() < offset + bytes) throw FormatError(where + "truncated payload");
    Matrix m(rows, cols);
    std::memcpy(m.data(), buf.data() + offset, bytes);
    offset += bytes;
    c.params.emplace(e.at("name").get<std::string>(), std::move(m));
  }
  if (offset != buf.size()) throw FormatError(where + "trailing bytes");
  return c;
}

// ---------------------------------------------------------------------------
// Training

void write_loss_curve_csv(const std::vector<EpochLoss>& curve, const std::filesystem::path& path) {
  std::string out = "epoch,classification,foreground,localization,total,learning_rate\n";
  char buf[256];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%d,%.12e,%.12e,%.12e,%.12e,%.6e\n", e.epoch, e.loss.classification,
                  e.loss.foreground, e.loss.localization, e.loss.total, e.learning_rate);
    out += buf;
  }
  detail::write_atomic(path, out);
}

double seconds_to_snippets(double seconds, const VideoEntry& video) {
  const double u = seconds * video.frame_rate / video.snippet_stride;
  const double r = std::round(u);
  return std::abs(u - r) < 1e-6 ? r : u;
}

namespace {

struct TrainingVideo {
  const FeatureSequence* features = nullptr;
  SupervisionTargets targets;
};

std::vector<TrainingVideo> training_videos(const Dataset& data, const std::vector<std::string>& classes) {
  std::vector<TrainingVideo> out;
  for (const auto& vid : videos_with(data.manifest, classes)) {
    const auto& entry = data.manifest.video(vid);
    const auto& seq = data.sequence(vid);
    std::vector<SegmentTarget> segs;
    for (const auto& s : segments_for(data.manifest, vid, classes)) {
      const auto idx = std::find(classes.begin(), classes.end(), s.label) - classes.begin();
      segs.push_back({Interval{seconds_to_snippets(s.start, entry), seconds_to_snippets(s.end, entry)},
                      static_cast<int>(idx)});
    }
    out.push_back({&seq, build_targets(static_cast<int>(seq.length()),
                                       static_cast<int>(classes.size()), segs)});
  }
  return out;
}

std::string rng_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

LossBreakdown& operator+=(LossBreakdown& a, const LossBreakdown& b) {
  a.classification += b.classification;
  a.foreground += b.foreground;
  a.localization += b.localization;
  a.total += b.total;
  return a;
}

LossBreakdown scaled(LossBreakdown l, double s) {
  l.classification *= s;
  l.foreground *= s;
  l.localization *= s;
  l.total *= s;
  return l;
}

TrainConfig resolve(const TrainConfig& cfg, const Dataset& data) {
  TrainConfig c = cfg;
  c.model.backbone.d_in = data.feature_dim();
  c.validate();
  return c;
}

}  // namespace

TrainResult train(const Dataset& data, const OpenVocabSplit& split, const DescriptionSource& descs,
                  const TextEncoder& encoder, const TrainConfig& cfg_in) {
  const TrainConfig cfg = resolve(cfg_in, data);
  std::vector<std::string> classes = split.seen;
  std::sort(classes.begin(), classes.end());
  if (classes.empty()) throw DataError("split has no seen classes");
  const std::set<std::string> vocab(data.manifest.vocabulary.begin(), data.manifest.vocabulary.end());
  for (const auto& c : classes) {
    if (!vocab.count(c)) throw DataError("seen class '" + c + "' is not in the manifest vocabulary");
  }
  const auto videos = training_videos(data, classes);
  if (videos.empty()) throw DataError("no training video holds a seen-class segment");
  for (const auto& v : videos) {
    if (v.features->length() > cfg.model.backbone.max_len) {
      throw DataError("video '" + v.features->video_id + "' is longer than max_len " +
                      std::to_string(cfg.model.backbone.max_len));
    }
  }

  const VocabularyTexts texts = encode_vocabulary(cfg.model, classes, descs, encoder);
  PdaModel model(cfg.model);
  model.init(cfg.seed);
  auto params = model.parameters();
  Adam adam(params);
  std::mt19937_64 rng(cfg.seed ^ 0x5DEECE66DULL);

  const auto n = static_cast<long>(videos.size());
  const long bs = cfg.optim.batch_size;
  const long steps_per_epoch = (n + bs - 1) / bs;

  TrainResult result;
  {
    LossBreakdown sum;
    for (const auto& v : videos) {
      ModelCache cache;
      const auto out = model.forward(v.features->features, texts, &cache);
      sum += loss_and_backward(nullptr, cache, out, texts, v.targets, cfg.loss);
    }
    result.curve.push_back({0, scaled(sum, 1.0 / static_cast<double>(n)), 0.0});
  }

  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 1; epoch <= cfg.optim.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossBreakdown sum;
    double lr = 0.0;
    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      nn::zero_grads(params);
      const long first = b * bs;
      const long last = std::min(n, first + bs);
      try {
        for (long i = first; i < last; ++i) {
          const auto& v = videos[order[static_cast<std::size_t>(i)]];
          ModelCache cache;
          const auto out = model.forward(v.features->features, texts, &cache);
          sum += loss_and_backward(&model, cache, out, texts, v.targets, cfg.loss);
        }
        const double inv = 1.0 / static_cast<double>(last - first);
        for (auto* p : params) p->grad *= inv;
        const double norm = nn::global_grad_norm(params);
        if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
        if (cfg.optim.clip_norm > 0.0 && norm > cfg.optim.clip_norm) {
          for (auto* p : params) p->grad *= cfg.optim.clip_norm / norm;
        }
      } catch (const NumericError& e) {
        throw NumericError("divergence at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ": " + e.what());
      }
      lr = learning_rate_at(cfg.optim, step, steps_per_epoch);
      adam.step(lr);
    }
    result.curve.push_back({epoch, scaled(sum, 1.0 / static_cast<double>(n)), lr});
  }
  result.checkpoint = Checkpoint::capture(model, cfg, classes, cfg.optim.epochs, rng_string(rng));
  return result;
}

std::vector<Detection> detect(const Checkpoint& ckpt, const Dataset& data,
                              const std::vector<std::string>& videos,
                              const std::vector<std::string>& test_vocab,
                              const DescriptionSource& descs, const TextEncoder& encoder,
                              const InferenceConfig& cfg) {
  if (test_vocab.empty()) throw std::invalid_argument("empty test vocabulary");
  if (data.feature_dim() != ckpt.config.model.backbone.d_in) {
    throw ConfigError("feature width " + std::to_string(data.feature_dim()) +
                      " does not match the checkpoint's " + std::to_string(ckpt.config.model.backbone.d_in));
  }
  const PdaModel model = ckpt.instantiate();
  const VocabularyTexts texts = encode_vocabulary(ckpt.config.model, test_vocab, descs, encoder);
  std::vector<Detection> out;
  for (const auto& vid : videos) {
    const auto& entry = data.manifest.video(vid);
    const auto& seq = data.sequence(vid);
    const auto result = model.forward(seq.features, texts, nullptr);
    auto proposals = assemble_proposals(result.logits, result.loc, entry.meta(), test_vocab, cfg.proposals);
    auto kept = suppress_classwise(proposals, cfg.nms);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

MeanApResult evaluate_split(const Checkpoint& ckpt, const Dataset& data, const OpenVocabSplit& split,
                            const DescriptionSource& descs, const TextEncoder& encoder) {
  std::vector<std::string> unseen = split.unseen;
  std::sort(unseen.begin(), unseen.end());
  const auto videos = videos_with(data.manifest, unseen);
  const GroundTruth gt = restrict_ground_truth(data.manifest, videos, unseen);
  if (gt.empty()) throw DataError("no unseen-class segments to evaluate");
  const auto dets = detect(ckpt, data, videos, unseen, descs, encoder, ckpt.config.inference);
  return mean_ap(dets, gt, ckpt.config.eval);
}

std::vector<AblationRow> run_ablation(
    const Dataset& data, const std::vector<OpenVocabSplit>& splits,
    const std::vector<AblationCell>& cells, const DescriptionSource& descs,
    const TextEncoder& encoder,
    const std::function<void(const AblationCell&, std::size_t, const MeanApResult&)>& progress) {
  if (cells.empty()) throw ConfigError("ablation grid is empty");
  if (splits.empty()) throw ConfigError("ablation needs at least one split");
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row;
    row.label = cell.label;
    row.thresholds = cell.config.eval.thresholds;
    row.map_mean.assign(row.thresholds.size(), 0.0);
    for (std::size_t s = 0; s < splits.size(); ++s) {
      const auto trained = train(data, splits[s], descs, encoder, cell.config);
      const auto r = evaluate_split(trained.checkpoint, data, splits[s], descs, encoder);
      for (std::size_t k = 0; k < r.map.size(); ++k) row.map_mean[k] += r.map[k];
      row.avg_per_split.push_back(r.average);
      if (progress) progress(cell, s, r);
    }
    const double ns = static_cast<double>(splits.size());
    for (auto& m : row.map_mean) m /= ns;
    row.avg_mean = std::accumulate(row.avg_per_split.begin(), row.avg_per_split.end(), 0.0) / ns;
    double var = 0.0;
    for (double a : row.avg_per_split) var += (a - row.avg_mean) * (a - row.avg_mean);
    row.avg_std = std::sqrt(var / ns);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path) {
  std::string out = "label,n_splits";
  if (!rows.empty()) {
    char buf[64];
    for (double t : rows.front().thresholds) {
      std::snprintf(buf, sizeof buf, ",mAP@%.2f", t);
      out += buf;
    }
  }
  out += ",avg_mean,avg_std\n";
  for (const auto& r : rows) {
    std::string label = r.label;
    if (label.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char ch : label) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
      label = q + "\"";
    }
    out += label + "," + std::to_string(r.avg_per_split.size());
    char buf[64];
    for (double m : r.map_mean) {
      std::snprintf(buf, sizeof buf, ",%.6f", m);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f\n", r.avg_mean, r.avg_std);
    out += buf;
  }
  detail::write_atomic(path, out);
}

std::unique_ptr<StubTextEncoder> make_encoder(const EncoderConfig& cfg,
                                              const std::filesystem::path& base_dir) {
  std::unordered_map<std::string, Vector> lexicon;
  if (!cfg.lexicon.empty()) {
    std::filesystem::path p(cfg.lexicon);
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    lexicon = StubTextEncoder::load_lexicon(p);
    for (const auto& [tok, v] : lexicon) {
      if (v.size() != cfg.dim) {
        throw ConfigError("lexicon token '" + tok + "' has width " + std::to_string(v.size()) +
                          ", encoder dim is " + std::to_string(cfg.dim));
      }
    }
  }
  return std::make_unique<StubTextEncoder>(cfg.dim, cfg.seed, std::move(lexicon));
}

}  // namespace pda
