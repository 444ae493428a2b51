#include "pda/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <limits>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <stdexcept>

#include "io_util.hpp"
#include "pda/errors.hpp"
#include "pda/tif.hpp"

namespace pda {

using nlohmann::json;
using nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'D', 'A', 'F'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4;

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <typename T>
T get(const std::string& buf, std::size_t offset) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return v;
}

}  // namespace

FeatureSequence read_features(const std::filesystem::path& path) {
  const std::string buf = detail::slurp(path);
  const auto where = path.string() + ": ";
  if (buf.size() < kHeaderBytes) throw FormatError(where + "truncated header");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError(where + "bad magic");
  const auto version = get<std::uint16_t>(buf, 4);
  if (version != kFeatureFormatVersion) {
    throw FormatError(where + "unsupported version " + std::to_string(version));
  }
  const auto T = get<std::uint32_t>(buf, 6);
  const auto D = get<std::uint32_t>(buf, 10);
  if (T == 0) throw FormatError(where + "empty sequence (T = 0)");
  if (D == 0) throw FormatError(where + "zero feature width");
  const std::uint64_t count = static_cast<std::uint64_t>(T) * D;
  if (count > (std::numeric_limits<std::uint64_t>::max() - kHeaderBytes) / sizeof(float) ||
      count > static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max())) {
    throw FormatError(where + "dimension overflow");
  }
  if (buf.size() != kHeaderBytes + count * sizeof(float)) {
    throw FormatError(where + "payload size does not match header");
  }
  FeatureSequence seq;
  seq.video_id = path.stem().string();
  seq.features.resize(T, D);
  const char* p = buf.data() + kHeaderBytes;
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t d = 0; d < D; ++d) {
      float f;
      std::memcpy(&f, p, sizeof f);
      p += sizeof f;
      seq.features(t, d) = f;
    }
  }
  return seq;
}

void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
  if (seq.length() < 1 || seq.dim() < 1) throw DataError("cannot write an empty feature sequence");
  std::string buf;
  buf.reserve(kHeaderBytes + static_cast<std::size_t>(seq.features.size()) * sizeof(float));
  buf.append(kMagic, 4);
  put<std::uint16_t>(buf, kFeatureFormatVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(seq.length()));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(seq.dim()));
  for (Eigen::Index t = 0; t < seq.length(); ++t) {
    for (Eigen::Index d = 0; d < seq.dim(); ++d) put<float>(buf, static_cast<float>(seq.features(t, d)));
  }
  detail::write_atomic(path, buf);
}

// ---------------------------------------------------------------------------

namespace {

ordered_json annotations_json(const GroundTruth& gt) {
  ordered_json j = ordered_json::object();
  for (const auto& [vid, segs] : gt) {
    ordered_json arr = ordered_json::array();
    for (const auto& s : segs) {
      arr.push_back({{"start_sec", s.start}, {"end_sec", s.end}, {"label", s.label}});
    }
    j[vid] = std::move(arr);
  }
  return j;
}

GroundTruth annotations_from(const json& j) {
  if (!j.is_object()) throw FormatError("annotations must be an object keyed by video id");
  GroundTruth gt;
  for (const auto& [vid, arr] : j.items()) {
    auto& segs = gt[vid];
    for (const auto& s : arr) {
      segs.push_back({s.at("start_sec").get<double>(), s.at("end_sec").get<double>(),
                      s.at("label").get<std::string>()});
    }
  }
  return gt;
}

template <typename F>
auto parse_or_format_error(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(what + ": " + e.what());
  }
}

}  // namespace

GroundTruth annotations_from_json(const std::string& text) {
  return parse_or_format_error("annotations", [&] { return annotations_from(json::parse(text)); });
}

std::string annotations_to_json(const GroundTruth& gt) { return annotations_json(gt).dump(2) + "\n"; }

GroundTruth load_annotations(const std::filesystem::path& path) {
  return annotations_from_json(detail::slurp(path));
}

void save_annotations(const GroundTruth& gt, const std::filesystem::path& path) {
  detail::write_atomic(path, annotations_to_json(gt));
}

const VideoEntry& DatasetManifest::video(const std::string& id) const {
  for (const auto& v : videos) {
    if (v.video_id == id) return v;
  }
  throw KeyError("unknown video '" + id + "'");
}

void DatasetManifest::validate() const {
  const std::set<std::string> vocab(vocabulary.begin(), vocabulary.end());
  if (vocab.size() != vocabulary.size()) throw DataError("duplicate class in vocabulary");
  std::map<std::string, double> durations;
  for (const auto& v : videos) {
    if (!durations.emplace(v.video_id, v.duration_seconds).second) {
      throw DataError("duplicate video id '" + v.video_id + "'");
    }
    if (!(v.duration_seconds > 0.0) || !(v.frame_rate > 0.0) || v.snippet_stride < 1) {
      throw DataError("video '" + v.video_id + "' has invalid timing fields");
    }
  }
  for (const auto& [vid, segs] : annotations) {
    const auto it = durations.find(vid);
    if (it == durations.end()) throw DataError("annotations for unknown video '" + vid + "'");
    for (const auto& s : segs) {
      if (!vocab.count(s.label)) {
        throw DataError("video '" + vid + "': label '" + s.label + "' not in vocabulary");
      }
      if (!(0.0 <= s.start && s.start < s.end && s.end <= it->second)) {
        throw DataError("video '" + vid + "': segment outside [0, duration] or empty");
      }
    }
  }
}

std::string DatasetManifest::to_json() const {
  ordered_json j;
  j["vocabulary"] = vocabulary;
  ordered_json vids = ordered_json::array();
  for (const auto& v : videos) {
    vids.push_back({{"video_id", v.video_id},
                    {"feature_path", v.feature_path},
                    {"duration_seconds", v.duration_seconds},
                    {"frame_rate", v.frame_rate},
                    {"snippet_stride", v.snippet_stride}});
  }
  j["videos"] = std::move(vids);
  j["annotations"] = annotations_json(annotations);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text, std::filesystem::path base_dir) {
  DatasetManifest m = parse_or_format_error("manifest", [&] {
    const auto j = json::parse(text);
    DatasetManifest out;
    out.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    for (const auto& v : j.at("videos")) {
      out.videos.push_back({v.at("video_id").get<std::string>(), v.at("feature_path").get<std::string>(),
                            v.at("duration_seconds").get<double>(), v.at("frame_rate").get<double>(),
                            v.at("snippet_stride").get<int>()});
    }
    if (j.contains("annotations")) out.annotations = annotations_from(j.at("annotations"));
    return out;
  });
  m.base_dir = std::move(base_dir);
  m.validate();
  return m;
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
  return from_json(detail::slurp(path), path.parent_path());
}

void DatasetManifest::save(const std::filesystem::path& path) const {
  detail::write_atomic(path, to_json());
}

const FeatureSequence& Dataset::sequence(const std::string& video_id) const {
  const auto it = features.find(video_id);
  if (it == features.end()) throw KeyError("no features for video '" + video_id + "'");
  return it->second;
}

Dataset Dataset::load(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = DatasetManifest::load(manifest_path);
  for (const auto& v : ds.manifest.videos) {
    auto seq = read_features(ds.manifest.base_dir / v.feature_path);
    seq.video_id = v.video_id;
    seq.snippet_stride = v.snippet_stride;
    ds.features.emplace(v.video_id, std::move(seq));
  }
  ds.feature_dim();
  return ds;
}

int Dataset::feature_dim() const {
  if (features.empty()) throw DataError("dataset has no videos");
  const auto d = features.begin()->second.dim();
  for (const auto& [vid, seq] : features) {
    if (seq.dim() != d) throw DataError("video '" + vid + "' has a different feature width");
  }
  return static_cast<int>(d);
}

AnnotationSet segments_for(const DatasetManifest& m, const std::string& video_id,
                           const std::vector<std::string>& classes) {
  AnnotationSet out;
  const auto it = m.annotations.find(video_id);
  if (it == m.annotations.end()) return out;
  for (const auto& s : it->second) {
    if (std::find(classes.begin(), classes.end(), s.label) != classes.end()) out.push_back(s);
  }
  return out;
}

std::vector<std::string> videos_with(const DatasetManifest& m, const std::vector<std::string>& classes) {
  std::vector<std::string> out;
  for (const auto& v : m.videos) {
    if (!segments_for(m, v.video_id, classes).empty()) out.push_back(v.video_id);
  }
  return out;
}

GroundTruth restrict_ground_truth(const DatasetManifest& m, const std::vector<std::string>& videos,
                                  const std::vector<std::string>& classes) {
  GroundTruth gt;
  for (const auto& vid : videos) {
    auto segs = segments_for(m, vid, classes);
    if (!segs.empty()) gt[vid] = std::move(segs);
  }
  return gt;
}

// ---------------------------------------------------------------------------

std::vector<OpenVocabSplit> make_splits(const std::vector<std::string>& vocab, double fraction_seen,
                                        int n_splits, std::uint64_t seed) {
  if (!(fraction_seen > 0.0 && fraction_seen < 1.0)) {
    throw std::invalid_argument("fraction_seen must lie in (0, 1)");
  }
  if (n_splits < 1) throw std::invalid_argument("n_splits must be >= 1");
  if (std::set<std::string>(vocab.begin(), vocab.end()).size() != vocab.size()) {
    throw std::invalid_argument("vocabulary has duplicates");
  }
  const auto n = static_cast<long>(vocab.size());
  const long n_seen = std::lround(fraction_seen * static_cast<double>(n));
  if (n_seen < 1 || n_seen > n - 1) {
    throw std::invalid_argument("split needs at least one seen and one unseen class");
  }
  std::vector<OpenVocabSplit> out;
  for (int i = 0; i < n_splits; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    auto shuffled = vocab;
    std::sort(shuffled.begin(), shuffled.end());
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    OpenVocabSplit s;
    s.seed = seed;
    s.fraction_seen = fraction_seen;
    s.seen.assign(shuffled.begin(), shuffled.begin() + n_seen);
    s.unseen.assign(shuffled.begin() + n_seen, shuffled.end());
    std::sort(s.seen.begin(), s.seen.end());
    std::sort(s.unseen.begin(), s.unseen.end());
    out.push_back(std::move(s));
  }
  return out;
}

std::string splits_to_json(const std::vector<OpenVocabSplit>& splits) {
  ordered_json arr = ordered_json::array();
  for (const auto& s : splits) {
    arr.push_back({{"seed", s.seed},
                   {"fraction_seen", s.fraction_seen},
                   {"seen", s.seen},
                   {"unseen", s.unseen}});
  }
  return arr.dump(2) + "\n";
}

std::vector<OpenVocabSplit> splits_from_json(const std::string& text) {
  return parse_or_format_error("splits", [&] {
    std::vector<OpenVocabSplit> out;
    for (const auto& j : json::parse(text)) {
      OpenVocabSplit s;
      s.seed = j.at("seed").get<std::uint64_t>();
      s.fraction_seen = j.at("fraction_seen").get<double>();
      s.seen = j.at("seen").get<std::vector<std::string>>();
      s.unseen = j.at("unseen").get<std::vector<std::string>>();
      out.push_back(std::move(s));
    }
    return out;
  });
}

std::vector<OpenVocabSplit> load_splits(const std::filesystem::path& path) {
  return splits_from_json(detail::slurp(path));
}

void save_splits(const std::vector<OpenVocabSplit>& splits, const std::filesystem::path& path) {
  detail::write_atomic(path, splits_to_json(splits));
}

// ---------------------------------------------------------------------------

SyntheticSpec SyntheticSpec::shared_phase_default() {
  SyntheticSpec s;
  s.shared_phase_pairs = {{0, 1, Phase::Start}, {2, 3, Phase::Middle}, {4, 5, Phase::End},
                          {6, 7, Phase::Start}};
  s.phase_prototype_dim = 8;
  s.background_std = 0.3;
  return s;
}

void SyntheticSpec::validate() const {
  if (n_classes < 1 || n_videos < 1 || d_in < 1 || phase_prototype_dim < 1 || words_per_phase < 1) {
    throw ConfigError("synthetic spec: counts and dimensions must be positive");
  }
  if (phase_prototype_dim > d_in) throw ConfigError("synthetic spec: prototype dim exceeds d_in");
  if (context_dim < 0 || phase_prototype_dim + context_dim > d_in) {
    throw ConfigError("synthetic spec: prototype and context dims exceed d_in");
  }
  if (t_min < 1 || t_max < t_min) throw ConfigError("synthetic spec: need 1 <= t_min <= t_max");
  if (instance_min < 3 || instance_max < instance_min) {
    throw ConfigError("synthetic spec: need 3 <= instance_min <= instance_max");
  }
  if (max_instances < 1) throw ConfigError("synthetic spec: max_instances must be >= 1");
  if (!(mixed_class_prob >= 0.0 && mixed_class_prob <= 1.0)) {
    throw ConfigError("synthetic spec: mixed_class_prob must lie in [0, 1]");
  }
  if (noise_std < 0 || background_std < 0 || text_noise_std < 0 || global_text_noise_std < 0) {
    throw ConfigError("synthetic spec: noise levels must be nonnegative");
  }
  if (!(frame_rate > 0.0) || snippet_stride < 1) throw ConfigError("synthetic spec: bad timing");
  for (const auto& p : shared_phase_pairs) {
    if (p.class_a < 0 || p.class_a >= n_classes || p.class_b < 0 || p.class_b >= n_classes ||
        p.class_a == p.class_b) {
      throw ConfigError("synthetic spec: shared pair references an invalid class");
    }
    if (p.phase != Phase::Start && p.phase != Phase::Middle && p.phase != Phase::End) {
      throw ConfigError("synthetic spec: shared pairs must name start, middle or end");
    }
  }
  if (instance_max > t_min) {
    throw DataError("synthetic spec infeasible: instances up to " + std::to_string(instance_max) +
                    " snippets do not fit a " + std::to_string(t_min) + "-snippet video");
  }
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  ordered_json pairs = ordered_json::array();
  for (const auto& p : s.shared_phase_pairs) {
    pairs.push_back({{"class_a", p.class_a}, {"class_b", p.class_b}, {"phase", phase_tag(p.phase)}});
  }
  ordered_json j{{"n_classes", s.n_classes},
                 {"n_videos", s.n_videos},
                 {"T_range", {s.t_min, s.t_max}},
                 {"instance_range", {s.instance_min, s.instance_max}},
                 {"max_instances", s.max_instances},
                 {"mixed_class_prob", s.mixed_class_prob},
                 {"D_in", s.d_in},
                 {"phase_prototype_dim", s.phase_prototype_dim},
                 {"context_dim", s.context_dim},
                 {"shared_phase_pairs", pairs},
                 {"noise_std", s.noise_std},
                 {"background_std", s.background_std},
                 {"words_per_phase", s.words_per_phase},
                 {"text_noise_std", s.text_noise_std},
                 {"global_text_noise_std", s.global_text_noise_std},
                 {"frame_rate", s.frame_rate},
                 {"snippet_stride", s.snippet_stride},
                 {"seed", s.seed}};
  return j.dump(2) + "\n";
}

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  SyntheticSpec s = SyntheticSpec::shared_phase_default();
  try {
    s.n_classes = j.value("n_classes", s.n_classes);
    s.n_videos = j.value("n_videos", s.n_videos);
    if (j.contains("T_range")) {
      s.t_min = j["T_range"].at(0).get<int>();
      s.t_max = j["T_range"].at(1).get<int>();
    }
    if (j.contains("instance_range")) {
      s.instance_min = j["instance_range"].at(0).get<int>();
      s.instance_max = j["instance_range"].at(1).get<int>();
    }
    s.max_instances = j.value("max_instances", s.max_instances);
    s.mixed_class_prob = j.value("mixed_class_prob", s.mixed_class_prob);
    s.d_in = j.value("D_in", s.d_in);
    s.phase_prototype_dim = j.value("phase_prototype_dim", s.phase_prototype_dim);
    s.context_dim = j.value("context_dim", s.context_dim);
    if (j.contains("shared_phase_pairs")) {
      s.shared_phase_pairs.clear();
      for (const auto& p : j["shared_phase_pairs"]) {
        s.shared_phase_pairs.push_back({p.at("class_a").get<int>(), p.at("class_b").get<int>(),
                                        phase_from_tag(p.at("phase").get<std::string>())});
      }
    }
    s.noise_std = j.value("noise_std", s.noise_std);
    s.background_std = j.value("background_std", s.background_std);
    s.words_per_phase = j.value("words_per_phase", s.words_per_phase);
    s.text_noise_std = j.value("text_noise_std", s.text_noise_std);
    s.global_text_noise_std = j.value("global_text_noise_std", s.global_text_noise_std);
    s.frame_rate = j.value("frame_rate", s.frame_rate);
    s.snippet_stride = j.value("snippet_stride", s.snippet_stride);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

namespace {

constexpr Phase kTemporal[] = {Phase::Start, Phase::Middle, Phase::End};

std::string class_name(int c) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%02d", c);
  return buf;
}

std::string motion_words(const std::string& stem, int n) {
  std::string out;
  for (int w = 0; w < n; ++w) {
    if (w) out += ' ';
    out += stem + "w" + std::to_string(w);
  }
  return out;
}

Vector gaussian(int n, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = stddev * nd(rng);
  return v;
}

// Text-space vector for a prototype: unit direction in the leading dims.
Vector text_direction(const Vector& proto, int dim) {
  Vector v = Vector::Zero(dim);
  v.head(proto.size()) = proto.normalized();
  return v;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int P = spec.phase_prototype_dim;
  const int D = spec.d_in;
  const double text_scale = 1.0 / std::sqrt(static_cast<double>(D));

  SyntheticDataset out;
  std::vector<std::string> names;
  for (int c = 0; c < spec.n_classes; ++c) names.push_back(class_name(c));

  // Prototype ids: (class, phase) -> id, shared pairs alias the first class.
  std::vector<std::array<int, 3>> pid(static_cast<std::size_t>(spec.n_classes));
  std::vector<Vector> protos;
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int k = 0; k < 3; ++k) {
      pid[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)] = static_cast<int>(protos.size());
      protos.push_back(gaussian(P, 1.0, rng).cast<float>().cast<double>());
    }
  }
  for (const auto& pair : spec.shared_phase_pairs) {
    const int k = pair.phase == Phase::Start ? 0 : pair.phase == Phase::Middle ? 1 : 2;
    pid[static_cast<std::size_t>(pair.class_b)][static_cast<std::size_t>(k)] =
        pid[static_cast<std::size_t>(pair.class_a)][static_cast<std::size_t>(k)];
  }
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int k = 0; k < 3; ++k) {
      out.prototypes[names[static_cast<std::size_t>(c)]][kTemporal[k]] =
          protos[static_cast<std::size_t>(pid[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)])];
    }
  }

  const int K = spec.context_dim;
  std::vector<Vector> ctx;
  for (int c = 0; c < spec.n_classes && K > 0; ++c) {
    ctx.push_back(gaussian(K, 1.0, rng).cast<float>().cast<double>());
    out.contexts[names[static_cast<std::size_t>(c)]] = ctx.back();
  }

  // Lexicon: motion words sit near their prototype direction.
  std::set<int> used_pids;
  for (const auto& row : pid) used_pids.insert(row.begin(), row.end());
  for (int p : used_pids) {
    const Vector dir = text_direction(protos[static_cast<std::size_t>(p)], D);
    for (int w = 0; w < spec.words_per_phase; ++w) {
      out.lexicon["m" + std::to_string(p) + "w" + std::to_string(w)] =
          dir + gaussian(D, spec.text_noise_std * text_scale, rng);
    }
  }
  for (int c = 0; c < spec.n_classes; ++c) {
    Vector sum = Vector::Zero(P);
    for (int k = 0; k < 3; ++k) sum += protos[static_cast<std::size_t>(pid[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)])].normalized();
    Vector dir = text_direction(sum, D);
    if (K > 0) {
      // Holistic text names the scene as strongly as the motion.
      dir.segment(P, K) = ctx[static_cast<std::size_t>(c)].normalized();
      dir.normalize();
    }
    for (int w = 0; w < spec.words_per_phase; ++w) {
      out.lexicon["g" + std::to_string(c) + "w" + std::to_string(w)] =
          dir + gaussian(D, spec.global_text_noise_std * text_scale, rng);
    }
  }

  // Descriptions for every phase tag any named set can ask for.
  static const char* kOrdinal[] = {"early", "midway", "late"};
  for (int c = 0; c < spec.n_classes; ++c) {
    const auto& ids = pid[static_cast<std::size_t>(c)];
    auto words = [&](int k) { return motion_words("m" + std::to_string(ids[static_cast<std::size_t>(k)]), spec.words_per_phase); };
    PhaseDescriptionSet set;
    set.class_name = names[static_cast<std::size_t>(c)];
    set.descriptions[Phase::Start] = "The person would " + words(0) + ".";
    set.descriptions[Phase::Middle] = "The person would " + words(1) + ".";
    set.descriptions[Phase::End] = "The person would " + words(2) + ".";
    set.descriptions[Phase::Mid1] = "The person would " + std::string(kOrdinal[0]) + " " + words(1) + ".";
    set.descriptions[Phase::Mid2] = "The person would " + std::string(kOrdinal[1]) + " " + words(1) + ".";
    set.descriptions[Phase::Mid3] = "The person would " + std::string(kOrdinal[2]) + " " + words(1) + ".";
    set.descriptions[Phase::Global] =
        "The person would " + motion_words("g" + std::to_string(c), spec.words_per_phase) + ".";
    out.descriptions.put(std::move(set));
  }

  // Videos.
  DatasetManifest& m = out.data.manifest;
  m.vocabulary = names;
  const double sps = spec.snippet_stride / spec.frame_rate;
  for (int v = 0; v < spec.n_videos; ++v) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "video_%04d", v);
    const std::string vid = idbuf;
    const int video_class = v % spec.n_classes;
    const int T = std::uniform_int_distribution<int>(spec.t_min, spec.t_max)(rng);

    int k = std::uniform_int_distribution<int>(1, spec.max_instances)(rng);
    std::vector<int> lengths;
    for (int i = 0; i < k; ++i) {
      lengths.push_back(std::uniform_int_distribution<int>(spec.instance_min, spec.instance_max)(rng));
    }
    auto total = [&] { int s = 0; for (int l : lengths) s += l; return s; };
    while (total() > T) lengths.pop_back();
    k = static_cast<int>(lengths.size());
    const int free = T - total();
    std::vector<int> cuts;
    for (int i = 0; i < k; ++i) cuts.push_back(std::uniform_int_distribution<int>(0, free)(rng));
    std::sort(cuts.begin(), cuts.end());

    Matrix X(T, D);
    {
      std::normal_distribution<double> nd(0.0, 1.0);
      for (int t = 0; t < T; ++t) {
        for (int d = 0; d < D; ++d) X(t, d) = spec.background_std * nd(rng);
      }
    }
    AnnotationSet segs;
    int offset = 0;
    for (int i = 0; i < k; ++i) {
      int c = video_class;
      // No draws at probability 0 keeps single-class streams unchanged.
      if (i > 0 && spec.mixed_class_prob > 0.0 &&
          std::bernoulli_distribution(spec.mixed_class_prob)(rng)) {
        c = std::uniform_int_distribution<int>(0, spec.n_classes - 1)(rng);
      }
      const int a = cuts[static_cast<std::size_t>(i)] + offset;
      const int L = lengths[static_cast<std::size_t>(i)];
      offset += L;
      for (int ph = 0; ph < 3; ++ph) {
        const Vector block = static_block_mask(L, ph, 3);
        const Vector& proto = protos[static_cast<std::size_t>(pid[static_cast<std::size_t>(c)][static_cast<std::size_t>(ph)])];
        for (int j = 0; j < L; ++j) {
          if (block(j) == 0.0) continue;
          X.row(a + j).head(P) = proto.transpose() + gaussian(P, spec.noise_std, rng).transpose();
        }
      }
      for (int j = 0; j < L && K > 0; ++j) {
        X.row(a + j).segment(P, K) =
            ctx[static_cast<std::size_t>(c)].transpose() + gaussian(K, spec.noise_std, rng).transpose();
      }
      segs.push_back({a * sps, (a + L) * sps, names[static_cast<std::size_t>(c)]});
    }

    FeatureSequence seq;
    seq.video_id = vid;
    seq.snippet_stride = spec.snippet_stride;
    seq.features = X.cast<float>().cast<double>();
    out.data.features.emplace(vid, std::move(seq));
    m.videos.push_back({vid, "features/" + vid + ".pdaf", T * sps, spec.frame_rate, spec.snippet_stride});
    m.annotations[vid] = std::move(segs);
  }
  m.validate();
  return out;
}

void write_synthetic(const SyntheticDataset& ds, const SyntheticSpec& spec,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "features");
  for (const auto& v : ds.data.manifest.videos) {
    write_features(ds.data.sequence(v.video_id), dir / v.feature_path);
  }
  ds.data.manifest.save(dir / "manifest.json");
  ds.descriptions.save(dir / "descriptions.json");
  StubTextEncoder::save_lexicon(ds.lexicon, dir / "lexicon.json");
  detail::write_atomic(dir / "spec.json", synthetic_spec_to_json(spec));
}

}  // namespace pda
