#pragma once

// Label decomposition into phase descriptions, the description cache, text
// encoding and the per-phase projection into the shared embedding space.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pda/nn.hpp"
#include "pda/phase.hpp"
#include "pda/tensor.hpp"

namespace pda {

// ---------------------------------------------------------------------------
// Prompts and answers

/// Phase-wise decomposition prompt; `n_phases` in [2, 6] is spelled out.
std::string build_phase_prompt(std::string_view action, int n_phases);
/// Holistic description prompt.
std::string build_global_prompt(std::string_view action);

/// Parses "In the <phase> phase, the person would <text>." sentences for each
/// requested temporal phase. The last occurrence wins so that step-by-step
/// reasoning preceding the final summary is tolerated. Returned descriptions
/// are normalized to "The person would <text>.".
std::map<Phase, std::string> parse_phase_answer(const std::string& raw,
                                                const std::vector<Phase>& phases);
/// Parses a "The person would <text>." answer.
std::string parse_global_answer(const std::string& raw);

/// "a video of people's motion that " + d, first character lower-cased.
std::string wrap_description(std::string_view description);

// ---------------------------------------------------------------------------
// Descriptions

struct PhaseDescriptionSet {
  std::string class_name;
  std::map<Phase, std::string> descriptions;

  const std::string& at(Phase p) const;
  bool covers(const PhaseSet& set) const;
  bool operator==(const PhaseDescriptionSet&) const = default;
};

/// Read access to per-class descriptions.
class DescriptionSource {
 public:
  virtual ~DescriptionSource() = default;
  /// Throws KeyError if the class is unknown.
  virtual const PhaseDescriptionSet& get(const std::string& class_name) const = 0;
};

/// In-memory table; serialized as {class: {phase tag: text}}, classes sorted by
/// name and phases in canonical order.
class DescriptionTable : public DescriptionSource {
 public:
  const PhaseDescriptionSet& get(const std::string& class_name) const override;
  void put(PhaseDescriptionSet set);
  bool contains(const std::string& class_name) const { return sets_.count(class_name) > 0; }
  std::vector<std::string> classes() const;
  std::size_t size() const { return sets_.size(); }

  std::string to_json() const;
  static DescriptionTable from_json(const std::string& text);
  static DescriptionTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, PhaseDescriptionSet> sets_;
};

/// Records every class looked up through it.
class TrackingDescriptionSource : public DescriptionSource {
 public:
  explicit TrackingDescriptionSource(const DescriptionSource& inner) : inner_(inner) {}
  const PhaseDescriptionSet& get(const std::string& class_name) const override;
  const std::set<std::string>& accessed() const { return accessed_; }

 private:
  const DescriptionSource& inner_;
  mutable std::set<std::string> accessed_;
};

// ---------------------------------------------------------------------------
// LLM backends and the replayable cache

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
  virtual std::string provider() const = 0;
  virtual std::string model() const = 0;
};

/// Answers from a fixed prompt -> response table; unknown prompts raise
/// ProviderError. Counts calls, which makes cache bypass observable.
class ScriptedLlmClient : public LlmClient {
 public:
  ScriptedLlmClient(std::string provider, std::string model,
                    std::map<std::string, std::string> responses = {});
  void add(std::string prompt, std::string response);
  std::string complete(const std::string& prompt) override;
  std::string provider() const override { return provider_; }
  std::string model() const override { return model_; }
  int calls() const { return calls_; }

 private:
  std::string provider_, model_;
  std::map<std::string, std::string> responses_;
  int calls_ = 0;
};

/// File-backed store keyed by (provider, model, action, phase count). One JSON
/// file per (provider, model, count) at <root>/<provider>/<model>/phases-<n>.json
/// using the DescriptionTable schema. Writers take an exclusive lock on a
/// sibling ".lock" file, readers a shared one.
class DescriptionCache {
 public:
  explicit DescriptionCache(std::filesystem::path root);

  std::optional<PhaseDescriptionSet> lookup(const std::string& provider, const std::string& model,
                                            const std::string& action, int n_phases) const;
  void store(const std::string& provider, const std::string& model, int n_phases,
             const PhaseDescriptionSet& set);
  std::filesystem::path file_for(const std::string& provider, const std::string& model,
                                 int n_phases) const;
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

/// Cache hit returns without touching the client; a miss queries the client
/// (phase prompt for temporal phases, global prompt for Global), parses, and
/// stores the result.
PhaseDescriptionSet decompose_label(const std::string& action, const PhaseSet& phases,
                                    LlmClient& client, DescriptionCache& cache);

// ---------------------------------------------------------------------------
// Text encoding

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Vector encode(std::string_view text) const = 0;
  virtual int dim() const = 0;
};

/// Lower-cases and splits on anything that is not alphanumeric, '_' or '\''.
std::vector<std::string> tokenize(std::string_view text);

/// Deterministic offline encoder: every token maps to a fixed Gaussian vector
/// (seeded by a hash of the token and the encoder seed, or taken from the
/// lexicon when present), token vectors are mean-pooled and L2-normalized.
class StubTextEncoder : public TextEncoder {
 public:
  StubTextEncoder(int dim, std::uint64_t seed,
                  std::unordered_map<std::string, Vector> lexicon = {});

  Vector encode(std::string_view text) const override;
  int dim() const override { return dim_; }

  Vector token_vector(const std::string& token) const;
  std::uint64_t seed() const { return seed_; }

  /// Lexicon file: {"token": [numbers...]}.
  static std::unordered_map<std::string, Vector> load_lexicon(const std::filesystem::path& path);
  static void save_lexicon(const std::unordered_map<std::string, Vector>& lexicon,
                           const std::filesystem::path& path);

 private:
  int dim_;
  std::uint64_t seed_;
  std::unordered_map<std::string, Vector> lexicon_;
};

// ---------------------------------------------------------------------------
// Phase banks

/// Trainable affine map from encoder space to the shared space, one per phase.
using PhaseProjection = nn::Linear;

struct PhaseEmbeddingBank {
  Phase phase = Phase::Global;
  Matrix embeddings;  // C x D
  std::map<std::string, int> class_index;
};

/// Raw encoder outputs (C x D_txt) of the wrapped phase descriptions.
Matrix encode_phase_texts(const std::vector<std::string>& vocab, const DescriptionSource& descs,
                          const TextEncoder& encoder, Phase phase);

PhaseEmbeddingBank encode_phase_bank(const std::vector<std::string>& vocab,
                                     const DescriptionSource& descs, const TextEncoder& encoder,
                                     Phase phase, const PhaseProjection& proj);

}  // namespace pda
