#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "pda/backbone.hpp"
#include "pda/metrics.hpp"
#include "pda/phase.hpp"
#include "pda/postprocess.hpp"
#include "pda/semantics.hpp"

namespace pda {

// ---------------------------------------------------------------------------
// Feature files: "PDAF", u16 version, u32 T, u32 D, T*D little-endian float32.

inline constexpr std::uint16_t kFeatureFormatVersion = 1;

/// Throws FormatError on bad magic/version, truncation, T = 0 or a size that
/// does not fit in memory.
FeatureSequence read_features(const std::filesystem::path& path);
/// Values are narrowed to float32.
void write_features(const FeatureSequence& seq, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests and annotations

struct VideoEntry {
  std::string video_id;
  std::string feature_path;  // relative to the manifest directory
  double duration_seconds = 0.0;
  double frame_rate = 1.0;
  int snippet_stride = 1;

  VideoMeta meta() const { return {video_id, snippet_stride, frame_rate, duration_seconds}; }
  bool operator==(const VideoEntry&) const = default;
};

struct DatasetManifest {
  std::vector<std::string> vocabulary;
  std::vector<VideoEntry> videos;
  GroundTruth annotations;
  std::filesystem::path base_dir;  // not serialized

  const VideoEntry& video(const std::string& id) const;
  /// Throws DataError on unknown labels, duplicate ids or out-of-range segments.
  void validate() const;

  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, std::filesystem::path base_dir);
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// {video_id: [{"start_sec", "end_sec", "label"}]}
GroundTruth annotations_from_json(const std::string& text);
std::string annotations_to_json(const GroundTruth& gt);
GroundTruth load_annotations(const std::filesystem::path& path);
void save_annotations(const GroundTruth& gt, const std::filesystem::path& path);

/// Manifest plus every feature sequence held in memory.
struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, FeatureSequence> features;

  const FeatureSequence& sequence(const std::string& video_id) const;
  /// Loads the manifest and all feature files; checks that widths agree.
  static Dataset load(const std::filesystem::path& manifest_path);
  int feature_dim() const;
};

/// Segments of `video` restricted to `classes`.
AnnotationSet segments_for(const DatasetManifest& m, const std::string& video_id,
                           const std::vector<std::string>& classes);
/// Videos with at least one segment of the given classes, in manifest order.
std::vector<std::string> videos_with(const DatasetManifest& m,
                                     const std::vector<std::string>& classes);
/// Ground truth restricted to `classes` over `videos`.
GroundTruth restrict_ground_truth(const DatasetManifest& m, const std::vector<std::string>& videos,
                                  const std::vector<std::string>& classes);

// ---------------------------------------------------------------------------
// Open-vocabulary splits

struct OpenVocabSplit {
  std::uint64_t seed = 0;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  double fraction_seen = 0.5;
  bool operator==(const OpenVocabSplit&) const = default;
};

/// Split i shuffles the vocabulary with an engine seeded from (seed, i); the
/// first round(fraction * |V|) classes are seen. Both lists come back sorted.
std::vector<OpenVocabSplit> make_splits(const std::vector<std::string>& vocab,
                                        double fraction_seen, int n_splits, std::uint64_t seed);

std::string splits_to_json(const std::vector<OpenVocabSplit>& splits);
std::vector<OpenVocabSplit> splits_from_json(const std::string& text);
std::vector<OpenVocabSplit> load_splits(const std::filesystem::path& path);
void save_splits(const std::vector<OpenVocabSplit>& splits, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic phase-prototype benchmark

struct SharedPhasePair {
  int class_a = 0;
  int class_b = 1;
  Phase phase = Phase::Start;  // Start, Middle or End
  bool operator==(const SharedPhasePair&) const = default;
};

struct SyntheticSpec {
  int n_classes = 8;
  int n_videos = 200;
  int t_min = 40;
  int t_max = 80;
  int instance_min = 8;
  int instance_max = 20;
  int max_instances = 3;
  /// Probability that an instance after the first takes a uniformly drawn
  /// class instead of the video's own class.
  double mixed_class_prob = 0.0;
  int d_in = 32;
  int phase_prototype_dim = 32;  // leading feature dims carrying the prototype
  /// Dims after the prototype block carrying a per-class scene vector over the
  /// whole instance. Only the global description mentions it.
  int context_dim = 0;
  std::vector<SharedPhasePair> shared_phase_pairs;
  double noise_std = 0.5;
  double background_std = 0.5;
  int words_per_phase = 3;
  double text_noise_std = 0.05;
  double global_text_noise_std = 0.5;
  double frame_rate = 25.0;
  int snippet_stride = 5;
  std::uint64_t seed = 0;

  /// 8 classes with pairs (0,1,start), (2,3,middle), (4,5,end), (6,7,start);
  /// 8-dim prototypes and background_std 0.3.
  static SyntheticSpec shared_phase_default();
  /// Throws ConfigError on inconsistent fields, DataError when an instance
  /// cannot fit in the shortest video.
  void validate() const;
};

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const std::string& text);

struct SyntheticDataset {
  Dataset data;  // manifest paths point at features/<video_id>.pdaf
  DescriptionTable descriptions;  // phases for every count up to six, plus Global
  std::unordered_map<std::string, Vector> lexicon;  // for StubTextEncoder(dim = d_in)
  /// class -> temporal phase -> prototype (length phase_prototype_dim)
  std::map<std::string, std::map<Phase, Vector>> prototypes;
  /// class -> scene vector (length context_dim); empty when context_dim = 0
  std::map<std::string, Vector> contexts;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

/// Writes manifest.json, features/, descriptions.json, lexicon.json and
/// spec.json under `dir`.
void write_synthetic(const SyntheticDataset& ds, const SyntheticSpec& spec,
                     const std::filesystem::path& dir);

}  // namespace pda
