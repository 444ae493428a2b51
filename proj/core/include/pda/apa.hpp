#pragma once

#include <map>
#include <string>
#include <vector>

#include "pda/nn.hpp"
#include "pda/phase.hpp"

namespace pda {

enum class WeightMode { Softmax, Sigmoid };

/// Per-timestep class logits of one phase branch, T x C.
struct PhaseClassScores {
  Phase phase = Phase::Global;
  Matrix scores;
};

struct PhaseWeights {
  Vector weights;  // one entry per branch, in phase-set order
};

struct LocalizationOutput {
  Vector fg_prob;  // (0, 1)
  Vector d_start;  // snippet units, > 0
  Vector d_end;    // snippet units, > 0
};

/// Added after softplus so regressed distances stay strictly positive.
inline constexpr double kDistanceEpsilon = 1e-4;

/// Text-infusing cross-attention: visual rows query the phase bank, one layer,
/// residual from the query, no output projection and no FFN.
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(const std::string& name, int dim, int heads);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& visual, const Matrix& bank, nn::AttentionCache* cache) const;
  /// Returns {d visual, d bank}.
  std::pair<Matrix, Matrix> backward(const nn::AttentionCache& cache, const Matrix& dout);
  void collect(nn::ParamList& out) { attn.collect(out); }

  nn::MultiHeadAttention attn;
  bool residual = true;
};

/// refined · bankᵀ, T x C raw logits.
Matrix classify_phase(const Matrix& refined, const Matrix& bank);

/// Softmax (sums to one) or element-wise sigmoid of the per-branch logits.
PhaseWeights weights_from_logits(const Vector& logits, WeightMode mode);

struct WeightingCache {
  Matrix tokens;
  nn::AttentionCache attn;
  Matrix mixed;
  nn::MlpCache head;
  Vector logits;
  Vector weights;
};

/// Lightweight transformer predicting one weight per branch: replicated video
/// tokens + learned phase embeddings -> MHSA (residual) -> MLP to a scalar per
/// token -> softmax or sigmoid.
class WeightingNetwork {
 public:
  WeightingNetwork() = default;
  WeightingNetwork(const std::string& name, int dim, int n_phases, int heads, int hidden);

  void init(std::mt19937_64& rng);
  /// `token_base` holds one D-vector per branch (the pooled video feature
  /// replicated, or the per-phase pooled masked features).
  PhaseWeights forward(const Matrix& token_base, WeightMode mode, WeightingCache* cache) const;
  /// Returns d(token_base).
  Matrix backward(const WeightingCache& cache, const Vector& dweights, WeightMode mode);
  void collect(nn::ParamList& out);

  nn::Param phase_embeddings;  // n_phases x D
  nn::MultiHeadAttention attn;
  nn::Mlp head;
};

/// Time-mean of `visual` replicated into `n` rows.
Matrix replicate_pooled(const Matrix& visual, int n);

/// Σ_p w_p · scores_p over the phases of `phases`; every phase must be present.
Matrix aggregate_scores(const PhaseSet& phases, const std::map<Phase, PhaseClassScores>& per_phase,
                        const PhaseWeights& w);

/// Concatenates branch features along the feature axis and maps them back to D
/// with a three-layer MLP applied per timestep.
class FusionMlp {
 public:
  FusionMlp() = default;
  FusionMlp(const std::string& name, int dim, int n_phases, int hidden);

  void init(std::mt19937_64& rng) { mlp.init(rng); }
  Matrix forward(const std::vector<Matrix>& per_phase, nn::MlpCache* cache) const;
  std::vector<Matrix> backward(const nn::MlpCache& cache, const Matrix& dout);
  void collect(nn::ParamList& out) { mlp.collect(out); }

  int n_phases() const { return n_phases_; }

  nn::Mlp mlp;

 private:
  int dim_ = 0;
  int n_phases_ = 0;
};

struct HeadsCache {
  Matrix input;
  Vector reg_start_logit;
  Vector reg_end_logit;
};

/// Foreground head (logistic) and boundary regression head (softplus + eps).
class LocalizationHeads {
 public:
  LocalizationHeads() = default;
  LocalizationHeads(const std::string& name, int dim);

  void init(std::mt19937_64& rng);
  LocalizationOutput forward(const Matrix& fused, HeadsCache* cache) const;
  Matrix backward(const HeadsCache& cache, const LocalizationOutput& out, const Vector& dfg_prob,
                  const Vector& dd_start, const Vector& dd_end);
  void collect(nn::ParamList& out);

  nn::Linear foreground;  // D -> 1
  nn::Linear regression;  // D -> 2 (start, end)
};

}  // namespace pda
