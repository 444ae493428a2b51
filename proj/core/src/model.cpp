#include "pda/model.hpp"

#include <array>
#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const std::array<std::pair<std::string_view, E>, N>& table,
             const char* what) {
  for (const auto& [name, v] : table) {
    if (name == s) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string_view name_of(E v, const std::array<std::pair<std::string_view, E>, N>& table) {
  for (const auto& [name, e] : table) {
    if (e == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, Filtering>, 3> kFiltering{{
    {"none", Filtering::None}, {"static", Filtering::Static}, {"text_infused", Filtering::TextInfused}}};
constexpr std::array<std::pair<std::string_view, Alignment>, 4> kAlignment{{
    {"global_label", Alignment::GlobalLabel},
    {"global_merge", Alignment::GlobalMerge},
    {"phase_average", Alignment::PhaseAverage},
    {"phase_adaptive", Alignment::PhaseAdaptive}}};
constexpr std::array<std::pair<std::string_view, WeightMode>, 2> kWeightMode{{
    {"softmax", WeightMode::Softmax}, {"sigmoid", WeightMode::Sigmoid}}};
constexpr std::array<std::pair<std::string_view, WeightInput>, 2> kWeightInput{{
    {"pooled", WeightInput::Pooled}, {"per_phase", WeightInput::PerPhase}}};

}  // namespace

std::string_view to_string(Filtering f) { return name_of(f, kFiltering); }
std::string_view to_string(Alignment a) { return name_of(a, kAlignment); }
std::string_view to_string(WeightMode m) { return name_of(m, kWeightMode); }
std::string_view to_string(WeightInput w) { return name_of(w, kWeightInput); }
Filtering filtering_from_string(std::string_view s) { return parse_enum(s, kFiltering, "filtering"); }
Alignment alignment_from_string(std::string_view s) { return parse_enum(s, kAlignment, "alignment"); }
WeightMode weight_mode_from_string(std::string_view s) {
  return parse_enum(s, kWeightMode, "weight_mode");
}
WeightInput weight_input_from_string(std::string_view s) {
  return parse_enum(s, kWeightInput, "weight_input");
}

PhaseSet ModelConfig::branches() const {
  if (alignment == Alignment::GlobalLabel || alignment == Alignment::GlobalMerge) {
    return PhaseSet({Phase::Global});
  }
  return description_phases();
}

void ModelConfig::validate() const {
  const auto& b = backbone;
  if (b.d_in < 1 || b.d_model < 1 || b.layers < 1 || b.heads < 1 || b.ffn_hidden < 1 ||
      b.max_len < 1) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (b.d_model % b.heads != 0) throw ConfigError("backbone heads must divide d_model");
  if (d_txt < 1 || weight_hidden < 1 || fusion_hidden < 1) {
    throw ConfigError("text and head widths must be positive");
  }
  if (cross_heads < 1 || b.d_model % cross_heads != 0) {
    throw ConfigError("cross-attention heads must divide d_model");
  }
  if (weight_heads < 1 || b.d_model % weight_heads != 0) {
    throw ConfigError("weighting heads must divide d_model");
  }
  if (phase_count < 1 || phase_count > 6) throw ConfigError("phase count must be in 1..6");
}

VocabularyTexts encode_vocabulary(const ModelConfig& cfg, const std::vector<std::string>& classes,
                                  const DescriptionSource& descs, const TextEncoder& encoder) {
  if (classes.empty()) throw std::invalid_argument("empty vocabulary");
  if (encoder.dim() != cfg.d_txt) {
    throw ConfigError("text encoder width " + std::to_string(encoder.dim()) +
                      " does not match d_txt " + std::to_string(cfg.d_txt));
  }
  VocabularyTexts out;
  out.classes = classes;
  const auto C = static_cast<Eigen::Index>(classes.size());
  switch (cfg.alignment) {
    case Alignment::GlobalLabel: {
      Matrix m(C, cfg.d_txt);
      for (Eigen::Index c = 0; c < C; ++c) m.row(c) = encoder.encode(classes[static_cast<std::size_t>(c)]);
      out.per_branch.push_back(std::move(m));
      break;
    }
    case Alignment::GlobalMerge: {
      const PhaseSet phases = cfg.description_phases();
      Matrix m(C, cfg.d_txt);
      for (Eigen::Index c = 0; c < C; ++c) {
        const auto& set = descs.get(classes[static_cast<std::size_t>(c)]);
        std::string merged;
        for (Phase p : phases) {
          if (!merged.empty()) merged += ' ';
          merged += set.at(p);
        }
        m.row(c) = encoder.encode(wrap_description(merged));
      }
      out.per_branch.push_back(std::move(m));
      break;
    }
    case Alignment::PhaseAverage:
    case Alignment::PhaseAdaptive:
      for (Phase p : cfg.branches()) out.per_branch.push_back(encode_phase_texts(classes, descs, encoder, p));
      break;
  }
  for (const auto& m : out.per_branch) {
    if (!all_finite(m)) throw NumericError("non-finite text embedding");
  }
  return out;
}

PdaModel::PdaModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  branches_ = cfg_.branches();
  const int D = cfg_.backbone.d_model;
  const int n = static_cast<int>(branches_.size());
  backbone = Backbone(cfg_.backbone);
  for (Phase p : branches_) {
    const std::string tag(phase_tag(p));
    text_proj.emplace_back("text_proj." + tag, cfg_.d_txt, D);
    cross.emplace_back("cross." + tag, D, cfg_.cross_heads);
  }
  weighting = WeightingNetwork("weighting", D, n, cfg_.weight_heads, cfg_.weight_hidden);
  fusion = FusionMlp("fusion", D, n, cfg_.fusion_hidden);
  heads = LocalizationHeads("heads", D);
}

void PdaModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  backbone.init(rng);
  for (auto& p : text_proj) p.init(rng);
  for (auto& c : cross) c.init(rng);
  weighting.init(rng);
  fusion.init(rng);
  heads.init(rng);
}

nn::ParamList PdaModel::parameters() {
  nn::ParamList out;
  backbone.collect(out);
  for (auto& p : text_proj) p.collect(out);
  for (auto& c : cross) c.collect(out);
  if (cfg_.alignment == Alignment::PhaseAdaptive) weighting.collect(out);
  fusion.collect(out);
  heads.collect(out);
  return out;
}

ModelOutput PdaModel::forward(const Matrix& features, const VocabularyTexts& texts,
                              ModelCache* cache) const {
  const std::size_t n = branches_.size();
  if (texts.per_branch.size() != n) throw std::invalid_argument("text banks do not match branches");
  const auto T = static_cast<int>(features.rows());

  ModelCache local;
  ModelCache& c = cache ? *cache : local;
  const Matrix F = backbone.forward(features, &c.backbone);
  c.branches.assign(n, BranchCache{});

  ModelOutput out;
  std::vector<Matrix> masked;
  masked.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    BranchCache& b = c.branches[i];
    const Phase p = branches_[i];
    b.bank = text_proj[i].forward(texts.per_branch[i]);
    ForegroundMask mask;
    switch (cfg_.filtering) {
      case Filtering::None:
        mask = ForegroundMask{p, Vector::Ones(T)};
        break;
      case Filtering::Static:
        mask = static_mask(T, p, branches_);
        break;
      case Filtering::TextInfused:
        mask = binarize(foreground_score(F, b.bank, p));
        break;
    }
    b.mask = mask.mask;
    b.masked = apply_mask(F, mask);
    b.refined = cross[i].forward(b.masked, b.bank, &b.cross);
    if (global_alignment(cfg_.alignment)) {
      b.matched = b.refined.colwise().mean().replicate(T, 1);
    } else {
      b.matched = b.refined;
    }
    b.scores = classify_phase(b.matched, b.bank);
    masked.push_back(b.masked);
    out.masks.push_back(std::move(mask));
  }

  switch (cfg_.alignment) {
    case Alignment::GlobalLabel:
    case Alignment::GlobalMerge:
      out.weights.weights = Vector::Ones(1);
      break;
    case Alignment::PhaseAverage:
      out.weights.weights = Vector::Constant(static_cast<Eigen::Index>(n), 1.0 / static_cast<double>(n));
      break;
    case Alignment::PhaseAdaptive: {
      if (cfg_.weight_input == WeightInput::Pooled) {
        c.token_base = replicate_pooled(F, static_cast<int>(n));
      } else {
        c.token_base.resize(static_cast<Eigen::Index>(n), F.cols());
        for (std::size_t i = 0; i < n; ++i) {
          const double active = std::max(1.0, c.branches[i].mask.sum());
          c.token_base.row(static_cast<Eigen::Index>(i)) = c.branches[i].masked.colwise().sum() / active;
        }
      }
      out.weights = weighting.forward(c.token_base, cfg_.weight_mode, &c.weighting);
      break;
    }
  }

  out.logits = Matrix::Zero(T, static_cast<Eigen::Index>(texts.classes.size()));
  for (std::size_t i = 0; i < n; ++i) {
    out.logits += out.weights.weights(static_cast<Eigen::Index>(i)) * c.branches[i].scores;
  }
  const Matrix fused = fusion.forward(masked, &c.fusion);
  out.loc = heads.forward(fused, &c.heads);
  if (!all_finite(out.logits)) throw NumericError("non-finite classification logits");
  return out;
}

void PdaModel::backward(const ModelCache& cache, const ModelOutput& out, const VocabularyTexts& texts,
                        const Matrix& dlogits, const Vector& dfg_prob, const Vector& dd_start,
                        const Vector& dd_end) {
  const std::size_t n = branches_.size();
  const auto T = dlogits.rows();
  const auto D = static_cast<Eigen::Index>(cfg_.backbone.d_model);

  // d(masked features) per branch, gathered from every consumer.
  std::vector<Matrix> dmasked(n, Matrix::Zero(T, D));
  Matrix dF = Matrix::Zero(T, D);

  const Matrix dfused = heads.backward(cache.heads, out.loc, dfg_prob, dd_start, dd_end);
  const auto dfusion = fusion.backward(cache.fusion, dfused);
  for (std::size_t i = 0; i < n; ++i) dmasked[i] += dfusion[i];

  Vector dweights(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const BranchCache& b = cache.branches[i];
    const double w = out.weights.weights(static_cast<Eigen::Index>(i));
    dweights(static_cast<Eigen::Index>(i)) = (dlogits.array() * b.scores.array()).sum();
    const Matrix dscores = w * dlogits;
    Matrix drefined = dscores * b.bank;
    if (global_alignment(cfg_.alignment)) {
      const RowVector dmean = drefined.colwise().sum() / static_cast<double>(T);
      drefined = dmean.replicate(T, 1);
    }
    Matrix dbank = dscores.transpose() * b.matched;
    auto [dvis, dbank_attn] = cross[i].backward(b.cross, drefined);
    dmasked[i] += dvis;
    dbank += dbank_attn;
    text_proj[i].backward(texts.per_branch[i], dbank);
  }

  if (cfg_.alignment == Alignment::PhaseAdaptive) {
    const Matrix dtokens = weighting.backward(cache.weighting, dweights, cfg_.weight_mode);
    if (cfg_.weight_input == WeightInput::Pooled) {
      const RowVector dpooled = dtokens.colwise().sum() / static_cast<double>(T);
      dF.rowwise() += dpooled;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double active = std::max(1.0, cache.branches[i].mask.sum());
        dmasked[i].rowwise() += dtokens.row(static_cast<Eigen::Index>(i)) / active;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    dF += cache.branches[i].mask.asDiagonal() * dmasked[i];
  }
  backbone.backward(cache.backbone, dF);
}

LossBreakdown loss_and_backward(PdaModel* model, const ModelCache& cache, const ModelOutput& out,
                                const VocabularyTexts& texts, const SupervisionTargets& targets,
                                const LossWeights& weights) {
  Matrix dlogits;
  Vector dfg, dds, dde;
  const bool grads = model != nullptr;
  LossBreakdown l;
  l.classification = classification_loss(out.logits, targets, grads ? &dlogits : nullptr);
  l.foreground = foreground_loss(out.loc.fg_prob, targets.fg_target, grads ? &dfg : nullptr);
  l.localization = localization_loss(out.loc, targets, grads ? &dds : nullptr, grads ? &dde : nullptr);
  l.total = total_loss(l.classification, l.foreground, l.localization, weights);
  if (grads) {
    dlogits *= weights.classification;
    dfg *= weights.foreground;
    dds *= weights.localization;
    dde *= weights.localization;
    model->backward(cache, out, texts, dlogits, dfg, dds, dde);
  }
  return l;
}

}  // namespace pda
