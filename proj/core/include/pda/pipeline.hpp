#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pda/data.hpp"
#include "pda/metrics.hpp"
#include "pda/model.hpp"
#include "pda/postprocess.hpp"

namespace pda {

enum class Scheduler { MultiStep, Cosine };
std::string_view to_string(Scheduler s);
Scheduler scheduler_from_string(std::string_view s);

struct OptimConfig {
  int epochs = 30;
  double warmup_epochs = 5.0;
  double learning_rate = 1e-4;
  int batch_size = 4;
  Scheduler scheduler = Scheduler::MultiStep;
  std::vector<double> milestones{0.6, 0.85};  // fractions of the epoch budget
  double gamma = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping

  /// Warmup actually used: warmup_epochs, or 0.2 * epochs when epochs < 25.
  double effective_warmup() const;
};

struct EncoderConfig {
  int dim = 32;
  std::uint64_t seed = 0;
  std::string lexicon;  // optional lexicon JSON path
};

struct InferenceConfig {
  ProposalConfig proposals;
  SoftNmsConfig nms;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  OptimConfig optim;
  LossWeights loss;
  EncoderConfig encoder;
  InferenceConfig inference;
  EvalConfig eval = EvalConfig::thumos();

  /// Throws ConfigError.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Missing keys keep their defaults; "model.preset" selects desk or full
  /// widths before the explicit model keys apply. Throws ConfigError.
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Learning rate at optimizer step `step` (0-based): linear warmup to the base
/// rate, then step decay or cosine annealing to zero.
double learning_rate_at(const OptimConfig& cfg, long step, long steps_per_epoch);

/// Adam without weight decay.
class Adam {
 public:
  explicit Adam(nn::ParamList params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(double lr);
  long steps() const { return t_; }

 private:
  nn::ParamList params_;
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Parameters plus everything needed to rebuild the model and its inputs.
struct Checkpoint {
  TrainConfig config;
  std::vector<std::string> train_classes;
  int epoch = 0;
  std::string rng_state;
  std::map<std::string, Matrix> params;

  static Checkpoint capture(PdaModel& model, const TrainConfig& cfg,
                            std::vector<std::string> classes, int epoch, const std::string& rng);
  /// Rebuilds the model; throws ConfigError when parameter names or shapes do
  /// not match the configuration.
  PdaModel instantiate() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct EpochLoss {
  int epoch = 0;  // 0 = before any update
  LossBreakdown loss;
  double learning_rate = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLoss> curve;
};

void write_loss_curve_csv(const std::vector<EpochLoss>& curve, const std::filesystem::path& path);

/// Converts annotation seconds to snippet units, snapping values within 1e-6
/// of an integer.
double seconds_to_snippets(double seconds, const VideoEntry& video);

/// Trains on the videos holding seen-class segments, with only seen-class
/// descriptions. Throws NumericError naming epoch and step on divergence.
TrainResult train(const Dataset& data, const OpenVocabSplit& split, const DescriptionSource& descs,
                  const TextEncoder& encoder, const TrainConfig& cfg);

/// Detections for `videos` against `test_vocab` only. Throws
/// std::invalid_argument on an empty vocabulary and KeyError on a missing
/// description.
std::vector<Detection> detect(const Checkpoint& ckpt, const Dataset& data,
                              const std::vector<std::string>& videos,
                              const std::vector<std::string>& test_vocab,
                              const DescriptionSource& descs, const TextEncoder& encoder,
                              const InferenceConfig& cfg);

/// Unseen-class detection and mAP for one split.
MeanApResult evaluate_split(const Checkpoint& ckpt, const Dataset& data, const OpenVocabSplit& split,
                            const DescriptionSource& descs, const TextEncoder& encoder);

struct AblationCell {
  std::string label;
  TrainConfig config;
};

struct AblationRow {
  std::string label;
  std::vector<double> thresholds;
  std::vector<double> map_mean;  // per threshold, mean over splits
  std::vector<double> avg_per_split;
  double avg_mean = 0.0;
  double avg_std = 0.0;  // population std over splits
};

/// Trains and evaluates every cell on every split. The optional callback sees
/// each (cell, split) result as it completes.
std::vector<AblationRow> run_ablation(
    const Dataset& data, const std::vector<OpenVocabSplit>& splits,
    const std::vector<AblationCell>& cells, const DescriptionSource& descs,
    const TextEncoder& encoder,
    const std::function<void(const AblationCell&, std::size_t, const MeanApResult&)>& progress = {});

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

/// StubTextEncoder described by `cfg`; a relative lexicon path resolves against
/// `base_dir`.
std::unique_ptr<StubTextEncoder> make_encoder(const EncoderConfig& cfg,
                                              const std::filesystem::path& base_dir = {});

}  // namespace pda
