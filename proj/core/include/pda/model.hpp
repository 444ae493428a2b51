#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pda/apa.hpp"
#include "pda/backbone.hpp"
#include "pda/objectives.hpp"
#include "pda/semantics.hpp"
#include "pda/tif.hpp"

namespace pda {

enum class Filtering { None, Static, TextInfused };
enum class Alignment { GlobalLabel, GlobalMerge, PhaseAverage, PhaseAdaptive };
/// What the weighting network sees: the pooled unmasked video, or each
/// branch's pooled masked features.
enum class WeightInput { Pooled, PerPhase };

std::string_view to_string(Filtering f);
std::string_view to_string(Alignment a);
std::string_view to_string(WeightMode m);
std::string_view to_string(WeightInput w);
Filtering filtering_from_string(std::string_view s);
Alignment alignment_from_string(std::string_view s);

/// Global modes match the time-mean of the branch features against the bank,
/// so their class logits are constant over time.
inline bool global_alignment(Alignment a) {
  return a == Alignment::GlobalLabel || a == Alignment::GlobalMerge;
}
WeightMode weight_mode_from_string(std::string_view s);
WeightInput weight_input_from_string(std::string_view s);

struct ModelConfig {
  BackboneConfig backbone;
  int d_txt = 32;
  int cross_heads = 1;
  int weight_heads = 2;
  int weight_hidden = 64;
  int fusion_hidden = 64;
  int phase_count = 4;
  Filtering filtering = Filtering::TextInfused;
  Alignment alignment = Alignment::PhaseAdaptive;
  WeightMode weight_mode = WeightMode::Softmax;
  WeightInput weight_input = WeightInput::Pooled;

  /// Phases whose descriptions feed the model (the named set of phase_count).
  PhaseSet description_phases() const { return PhaseSet::with_count(phase_count); }
  /// Branches actually built: the description phases, or one Global branch for
  /// the global alignment modes.
  PhaseSet branches() const;
  /// Throws ConfigError.
  void validate() const;
};

/// Encoder outputs for one vocabulary, one C x d_txt matrix per branch.
struct VocabularyTexts {
  std::vector<std::string> classes;
  std::vector<Matrix> per_branch;
};

/// global_label encodes the bare class name; global_merge encodes the wrapped
/// concatenation of the description phases; the phase modes encode each
/// branch's wrapped description.
VocabularyTexts encode_vocabulary(const ModelConfig& cfg, const std::vector<std::string>& classes,
                                  const DescriptionSource& descs, const TextEncoder& encoder);

struct ModelOutput {
  Matrix logits;  // T x C
  LocalizationOutput loc;
  PhaseWeights weights;
  std::vector<ForegroundMask> masks;
};

struct BranchCache {
  Matrix bank;
  Vector mask;
  Matrix masked;
  nn::AttentionCache cross;
  Matrix refined;
  Matrix matched;  // rows compared with the bank: refined, or its time mean for global modes
  Matrix scores;
};

struct ModelCache {
  BackboneCache backbone;
  std::vector<BranchCache> branches;
  Matrix token_base;
  WeightingCache weighting;
  nn::MlpCache fusion;
  HeadsCache heads;
};

class PdaModel {
 public:
  PdaModel() = default;
  explicit PdaModel(const ModelConfig& cfg);

  void init(std::uint64_t seed);
  ModelOutput forward(const Matrix& features, const VocabularyTexts& texts, ModelCache* cache) const;
  /// Accumulates parameter gradients given output gradients.
  void backward(const ModelCache& cache, const ModelOutput& out, const VocabularyTexts& texts,
                const Matrix& dlogits, const Vector& dfg_prob, const Vector& dd_start,
                const Vector& dd_end);
  nn::ParamList parameters();

  const ModelConfig& config() const { return cfg_; }

  Backbone backbone;
  std::vector<PhaseProjection> text_proj;
  std::vector<CrossAttention> cross;
  WeightingNetwork weighting;
  FusionMlp fusion;
  LocalizationHeads heads;

 private:
  ModelConfig cfg_;
  PhaseSet branches_;
};

struct LossBreakdown {
  double classification = 0.0;
  double foreground = 0.0;
  double localization = 0.0;
  double total = 0.0;
};

/// Losses for one video; with `model` set, backpropagates them as well.
LossBreakdown loss_and_backward(PdaModel* model, const ModelCache& cache, const ModelOutput& out,
                                const VocabularyTexts& texts, const SupervisionTargets& targets,
                                const LossWeights& weights);

}  // namespace pda
