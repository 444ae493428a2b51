#include "pda/semantics.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <cctype>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

namespace {

const char* spelled(int n) {
  static const char* kWords[] = {"zero", "one", "two", "three", "four", "five", "six"};
  return kWords[n];
}

constexpr std::string_view kWrapPrefix = "a video of people's motion that ";

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Advisory lock on a sibling file; released on destruction.
class FileLock {
 public:
  FileLock(const std::filesystem::path& target, bool exclusive) {
    const auto lock_path = target.string() + ".lock";
    fd_ = ::open(lock_path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw DataError("cannot open lock file " + lock_path);
    if (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      ::close(fd_);
      throw DataError("cannot lock " + lock_path);
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts

std::string build_phase_prompt(std::string_view action, int n_phases) {
  if (trim(action).empty()) throw std::invalid_argument("action name must not be empty");
  if (n_phases < 2 || n_phases > 6) {
    throw std::invalid_argument("phase prompt count must be in [2, 6], got " +
                                std::to_string(n_phases));
  }
  std::string out = "Decompose the action of ";
  out += action;
  out += " into coherent ";
  out += spelled(n_phases);
  out += " phases based on the natural temporal progression of the action. "
         "Please provide the output step by step.";
  return out;
}

std::string build_global_prompt(std::string_view action) {
  if (trim(action).empty()) throw std::invalid_argument("action name must not be empty");
  return "Describe how a person does " + std::string(action) + ".";
}

std::map<Phase, std::string> parse_phase_answer(const std::string& raw,
                                                const std::vector<Phase>& phases) {
  static const std::regex kSentence(
      R"(In the ([a-z]+(?: [a-z]+)?) phase, the person would ([^.]*)\.)");
  std::map<std::string, std::string> found;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kSentence);
       it != std::sregex_iterator(); ++it) {
    found[(*it)[1].str()] = trim((*it)[2].str());
  }
  std::map<Phase, std::string> out;
  for (Phase p : phases) {
    const auto it = found.find(std::string(phase_answer_name(p)));
    if (it == found.end() || it->second.empty()) {
      throw DecompositionParseError(
          "LLM answer has no '" + std::string(phase_answer_name(p)) + "' phase sentence", raw);
    }
    out[p] = "The person would " + it->second + ".";
  }
  return out;
}

std::string parse_global_answer(const std::string& raw) {
  static const std::regex kSentence(R"(The person would ([^.]*)\.)");
  std::string text;
  for (auto it = std::sregex_iterator(raw.begin(), raw.end(), kSentence);
       it != std::sregex_iterator(); ++it) {
    text = trim((*it)[1].str());
  }
  if (text.empty()) {
    throw DecompositionParseError("LLM answer has no 'The person would ...' sentence", raw);
  }
  return "The person would " + text + ".";
}

std::string wrap_description(std::string_view description) {
  const std::string d = trim(description);
  if (d.empty()) throw std::invalid_argument("description must not be empty");
  if (d.rfind(kWrapPrefix, 0) == 0) {
    throw std::invalid_argument("description is already wrapped");
  }
  std::string out(kWrapPrefix);
  out += static_cast<char>(std::tolower(static_cast<unsigned char>(d[0])));
  out.append(d, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Descriptions

const std::string& PhaseDescriptionSet::at(Phase p) const {
  const auto it = descriptions.find(p);
  if (it == descriptions.end()) {
    throw KeyError("no '" + std::string(phase_tag(p)) + "' description for class '" +
                   class_name + "'");
  }
  return it->second;
}

bool PhaseDescriptionSet::covers(const PhaseSet& set) const {
  for (Phase p : set) {
    if (descriptions.count(p) == 0) return false;
  }
  return true;
}

const PhaseDescriptionSet& DescriptionTable::get(const std::string& class_name) const {
  const auto it = sets_.find(class_name);
  if (it == sets_.end()) throw KeyError("no descriptions for class '" + class_name + "'");
  return it->second;
}

void DescriptionTable::put(PhaseDescriptionSet set) {
  if (set.class_name.empty()) throw std::invalid_argument("description set without class name");
  for (const auto& [phase, text] : set.descriptions) {
    if (trim(text).empty()) {
      throw std::invalid_argument("empty '" + std::string(phase_tag(phase)) +
                                  "' description for class '" + set.class_name + "'");
    }
  }
  auto name = set.class_name;
  sets_[name] = std::move(set);
}

std::vector<std::string> DescriptionTable::classes() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : sets_) out.push_back(name);
  return out;
}

std::string DescriptionTable::to_json() const {
  nlohmann::ordered_json root = nlohmann::ordered_json::object();
  for (const auto& [name, set] : sets_) {
    nlohmann::ordered_json phases = nlohmann::ordered_json::object();
    for (const auto& [phase, text] : set.descriptions) phases[std::string(phase_tag(phase))] = text;
    root[name] = std::move(phases);
  }
  return root.dump(2) + "\n";
}

DescriptionTable DescriptionTable::from_json(const std::string& text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("description table is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw DataError("description table must be a JSON object");
  DescriptionTable table;
  for (const auto& [name, phases] : root.items()) {
    if (!phases.is_object()) throw DataError("descriptions of '" + name + "' must be an object");
    PhaseDescriptionSet set{name, {}};
    for (const auto& [tag, value] : phases.items()) {
      Phase p;
      try {
        p = phase_from_tag(tag);
      } catch (const std::invalid_argument& e) {
        throw DataError(e.what());
      }
      if (!value.is_string() || trim(value.get<std::string>()).empty()) {
        throw DataError("description '" + tag + "' of '" + name + "' must be a nonempty string");
      }
      set.descriptions[p] = value.get<std::string>();
    }
    table.put(std::move(set));
  }
  return table;
}

DescriptionTable DescriptionTable::load(const std::filesystem::path& path) {
  return from_json(read_file(path));
}

void DescriptionTable::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out << to_json();
  }
  std::filesystem::rename(tmp, path);
}

const PhaseDescriptionSet& TrackingDescriptionSource::get(const std::string& class_name) const {
  accessed_.insert(class_name);
  return inner_.get(class_name);
}

// ---------------------------------------------------------------------------
// LLM clients and cache

ScriptedLlmClient::ScriptedLlmClient(std::string provider, std::string model,
                                     std::map<std::string, std::string> responses)
    : provider_(std::move(provider)), model_(std::move(model)), responses_(std::move(responses)) {}

void ScriptedLlmClient::add(std::string prompt, std::string response) {
  responses_[std::move(prompt)] = std::move(response);
}

std::string ScriptedLlmClient::complete(const std::string& prompt) {
  ++calls_;
  const auto it = responses_.find(prompt);
  if (it == responses_.end()) throw ProviderError("scripted client has no answer for: " + prompt);
  return it->second;
}

DescriptionCache::DescriptionCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path DescriptionCache::file_for(const std::string& provider,
                                                 const std::string& model, int n_phases) const {
  if (provider.empty() || model.empty()) throw std::invalid_argument("empty provider or model");
  return root_ / provider / model / ("phases-" + std::to_string(n_phases) + ".json");
}

std::optional<PhaseDescriptionSet> DescriptionCache::lookup(const std::string& provider,
                                                            const std::string& model,
                                                            const std::string& action,
                                                            int n_phases) const {
  const auto path = file_for(provider, model, n_phases);
  if (!std::filesystem::exists(path)) return std::nullopt;
  FileLock lock(path, /*exclusive=*/false);
  const auto table = DescriptionTable::load(path);
  if (!table.contains(action)) return std::nullopt;
  return table.get(action);
}

void DescriptionCache::store(const std::string& provider, const std::string& model, int n_phases,
                             const PhaseDescriptionSet& set) {
  const auto path = file_for(provider, model, n_phases);
  std::filesystem::create_directories(path.parent_path());
  FileLock lock(path, /*exclusive=*/true);
  DescriptionTable table;
  if (std::filesystem::exists(path)) table = DescriptionTable::load(path);
  table.put(set);
  table.save(path);
}

PhaseDescriptionSet decompose_label(const std::string& action, const PhaseSet& phases,
                                    LlmClient& client, DescriptionCache& cache) {
  if (trim(action).empty()) throw std::invalid_argument("action name must not be empty");
  const int n = static_cast<int>(phases.size());
  if (auto hit = cache.lookup(client.provider(), client.model(), action, n);
      hit && hit->covers(phases)) {
    return *hit;
  }

  auto ask = [&client](const std::string& prompt) {
    try {
      return client.complete(prompt);
    } catch (const ProviderError&) {
      throw;
    } catch (const std::exception& e) {
      throw ProviderError(client.provider() + "/" + client.model() + ": " + e.what());
    }
  };

  PhaseDescriptionSet set{action, {}};
  const auto temporal = phases.temporal();
  if (!temporal.empty()) {
    const auto raw = ask(build_phase_prompt(action, static_cast<int>(temporal.size())));
    set.descriptions = parse_phase_answer(raw, temporal);
  }
  if (phases.has_global()) {
    set.descriptions[Phase::Global] = parse_global_answer(ask(build_global_prompt(action)));
  }
  cache.store(client.provider(), client.model(), n, set);
  return set;
}

// ---------------------------------------------------------------------------
// Text encoding

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '_' || ch == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

StubTextEncoder::StubTextEncoder(int dim, std::uint64_t seed,
                                 std::unordered_map<std::string, Vector> lexicon)
    : dim_(dim), seed_(seed), lexicon_(std::move(lexicon)) {
  if (dim <= 0) throw std::invalid_argument("encoder dimension must be positive");
  for (const auto& [token, v] : lexicon_) {
    if (v.size() != dim) {
      throw DataError("lexicon vector for '" + token + "' has dimension " +
                      std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
  }
}

Vector StubTextEncoder::token_vector(const std::string& token) const {
  if (const auto it = lexicon_.find(token); it != lexicon_.end()) return it->second;
  std::mt19937_64 rng(fnv1a(token) ^ (seed_ * 0x9E3779B97F4A7C15ULL));
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim_)));
  Vector v(dim_);
  for (int i = 0; i < dim_; ++i) v(i) = dist(rng);
  return v;
}

Vector StubTextEncoder::encode(std::string_view text) const {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw std::invalid_argument("cannot encode text without tokens");
  Vector sum = Vector::Zero(dim_);
  for (const auto& t : tokens) sum += token_vector(t);
  sum /= static_cast<double>(tokens.size());
  const double norm = sum.norm();
  if (norm == 0.0 || !std::isfinite(norm)) throw NumericError("degenerate text embedding");
  return sum / norm;
}

std::unordered_map<std::string, Vector> StubTextEncoder::load_lexicon(
    const std::filesystem::path& path) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("lexicon " + path.string() + " is not valid JSON: " + e.what());
  }
  std::unordered_map<std::string, Vector> out;
  for (const auto& [token, values] : root.items()) {
    const auto v = values.get<std::vector<double>>();
    out[token] = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return out;
}

void StubTextEncoder::save_lexicon(const std::unordered_map<std::string, Vector>& lexicon,
                                   const std::filesystem::path& path) {
  nlohmann::json root = nlohmann::json::object();  // std::map-backed: sorted keys
  for (const auto& [token, v] : lexicon) {
    root[token] = std::vector<double>(v.data(), v.data() + v.size());
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << root.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Banks

Matrix encode_phase_texts(const std::vector<std::string>& vocab, const DescriptionSource& descs,
                          const TextEncoder& encoder, Phase phase) {
  Matrix out(static_cast<Eigen::Index>(vocab.size()), encoder.dim());
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    const auto& set = descs.get(vocab[c]);
    out.row(static_cast<Eigen::Index>(c)) = encoder.encode(wrap_description(set.at(phase)));
  }
  return out;
}

PhaseEmbeddingBank encode_phase_bank(const std::vector<std::string>& vocab,
                                     const DescriptionSource& descs, const TextEncoder& encoder,
                                     Phase phase, const PhaseProjection& proj) {
  if (vocab.empty()) throw std::invalid_argument("empty vocabulary");
  PhaseEmbeddingBank bank;
  bank.phase = phase;
  bank.embeddings = proj.forward(encode_phase_texts(vocab, descs, encoder, phase));
  if (!all_finite(bank.embeddings)) throw NumericError("non-finite phase bank");
  for (std::size_t c = 0; c < vocab.size(); ++c) bank.class_index[vocab[c]] = static_cast<int>(c);
  return bank;
}

}  // namespace pda
