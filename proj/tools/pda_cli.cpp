#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pda/data.hpp"
#include "pda/errors.hpp"
#include "pda/llm_http.hpp"
#include "pda/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pda;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct ModelFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, phases;
  std::optional<double> lr, warmup;
  std::optional<std::string> scheduler, filtering, alignment, weight_mode, weight_input, lexicon;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "Training config JSON");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--lr", lr, "Base learning rate");
    cmd->add_option("--warmup", warmup, "Warmup epochs");
    cmd->add_option("--scheduler", scheduler)->check(CLI::IsMember({"multistep", "cosine"}));
    cmd->add_option("--phases", phases, "Phase-set size (1-6)");
    cmd->add_option("--filtering", filtering)->check(CLI::IsMember({"none", "static", "text_infused"}));
    cmd->add_option("--alignment", alignment)
        ->check(CLI::IsMember({"global_label", "global_merge", "phase_average", "phase_adaptive"}));
    cmd->add_option("--weight-mode", weight_mode)->check(CLI::IsMember({"softmax", "sigmoid"}));
    cmd->add_option("--weight-input", weight_input)->check(CLI::IsMember({"pooled", "per_phase"}));
    cmd->add_option("--lexicon", lexicon, "Token lexicon JSON for the stub text encoder");
  }

  /// Config file (or defaults) with flag overrides applied; relative lexicon
  /// paths become absolute so checkpoints stay usable from any directory.
  TrainConfig resolve() const {
    TrainConfig c;
    fs::path base;
    if (!config.empty()) {
      c = TrainConfig::load(config);
      base = fs::path(config).parent_path();
    }
    if (seed) c.seed = *seed;
    if (epochs) c.optim.epochs = *epochs;
    if (batch_size) c.optim.batch_size = *batch_size;
    if (lr) c.optim.learning_rate = *lr;
    if (warmup) c.optim.warmup_epochs = *warmup;
    if (scheduler) c.optim.scheduler = scheduler_from_string(*scheduler);
    if (phases) c.model.phase_count = *phases;
    if (filtering) c.model.filtering = filtering_from_string(*filtering);
    if (alignment) c.model.alignment = alignment_from_string(*alignment);
    if (weight_mode) c.model.weight_mode = weight_mode_from_string(*weight_mode);
    if (weight_input) c.model.weight_input = weight_input_from_string(*weight_input);
    if (lexicon) {
      c.encoder.lexicon = *lexicon;
      base.clear();
    }
    if (!c.encoder.lexicon.empty()) {
      fs::path p(c.encoder.lexicon);
      if (p.is_relative()) p = fs::absolute(base / p);
      c.encoder.lexicon = p.lexically_normal().string();
    }
    c.validate();
    return c;
  }
};

struct SplitFlags {
  std::string path;
  int index = 0;

  void attach(CLI::App* cmd, bool required) {
    auto* o = cmd->add_option("--splits", path, "Splits JSON");
    if (required) o->required();
    cmd->add_option("--split-index", index, "Which split to use")->check(CLI::NonNegativeNumber);
  }

  OpenVocabSplit get() const {
    const auto all = load_splits(path);
    if (index >= static_cast<int>(all.size())) {
      throw ConfigError("split index " + std::to_string(index) + " out of range (" +
                        std::to_string(all.size()) + " splits)");
    }
    return all[static_cast<std::size_t>(index)];
  }
};

std::unique_ptr<LlmClient> make_client(const std::string& provider, const std::string& model,
                                       const std::string& base_url, const std::string& key_env) {
  if (provider == "cache") {
    // Cache-only: any miss is a provider failure.
    return std::make_unique<ScriptedLlmClient>("cache", model);
  }
  ChatCompletionsClient::Options o;
  o.provider = provider;
  o.model = model;
  if (!base_url.empty()) o.base_url = base_url;
  if (!key_env.empty()) o.api_key_env = key_env;
  return std::make_unique<ChatCompletionsClient>(o);
}

std::vector<std::string> read_class_list(const std::vector<std::string>& flags, const std::string& manifest) {
  if (!flags.empty()) return flags;
  if (manifest.empty()) throw ConfigError("give --class or --manifest");
  return DatasetManifest::load(manifest).vocabulary;
}

nlohmann::ordered_json matrix_json(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

void print_map(const MeanApResult& r) {
  for (std::size_t k = 0; k < r.thresholds.size(); ++k) {
    std::printf("mAP@%.2f %.4f\n", r.thresholds[k], r.map[k]);
  }
  std::printf("avg %.4f\n", r.average);
}

std::vector<AblationCell> ablation_grid(const std::string& axis, const TrainConfig& base) {
  std::vector<AblationCell> cells;
  auto add = [&](const std::string& label, auto&& edit) {
    TrainConfig c = base;
    edit(c);
    c.validate();
    cells.push_back({label, c});
  };
  if (axis == "phases") {
    for (int n = 1; n <= 6; ++n) {
      add(PhaseSet::with_count(n).label(), [n](TrainConfig& c) { c.model.phase_count = n; });
    }
  } else if (axis == "filtering") {
    for (auto f : {Filtering::None, Filtering::Static, Filtering::TextInfused}) {
      add(std::string(to_string(f)), [f](TrainConfig& c) { c.model.filtering = f; });
    }
  } else if (axis == "alignment") {
    for (auto a : {Alignment::GlobalLabel, Alignment::GlobalMerge, Alignment::PhaseAverage,
                   Alignment::PhaseAdaptive}) {
      add(std::string(to_string(a)), [a](TrainConfig& c) { c.model.alignment = a; });
    }
  } else if (axis == "weighting") {
    for (auto m : {WeightMode::Softmax, WeightMode::Sigmoid}) {
      for (auto in : {WeightInput::Pooled, WeightInput::PerPhase}) {
        add(std::string(to_string(m)) + "/" + std::string(to_string(in)), [m, in](TrainConfig& c) {
          c.model.alignment = Alignment::PhaseAdaptive;
          c.model.weight_mode = m;
          c.model.weight_input = in;
        });
      }
    }
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "'");
  }
  return cells;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phase-wise decomposition and alignment for open-vocabulary action detection"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // synth ---------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate the shared-phase synthetic benchmark");
  std::string synth_cfg, synth_out;
  std::uint64_t synth_seed = 0;
  std::optional<int> synth_videos, synth_classes;
  synth->add_option("--config", synth_cfg, "Synthetic spec JSON");
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-videos", synth_videos);
  synth->add_option("--n-classes", synth_classes);

  // decompose -----------------------------------------------------------------
  auto* decompose = app.add_subcommand("decompose", "Phase descriptions for class labels via an LLM");
  std::vector<std::string> dec_classes;
  std::string dec_manifest, dec_cache = "llm_cache", dec_out, dec_provider = "openai",
                             dec_model = "gpt-4o", dec_url, dec_key_env;
  int dec_phases = 4;
  decompose->add_option("--class", dec_classes, "Class label (repeatable)");
  decompose->add_option("--manifest", dec_manifest, "Take classes from this manifest's vocabulary");
  decompose->add_option("--phases", dec_phases, "Phase-set size (1-6)")->check(CLI::Range(1, 6));
  decompose->add_option("--cache", dec_cache, "Description cache root");
  decompose->add_option("--out", dec_out, "Descriptions JSON to write")->required();
  decompose->add_option("--provider", dec_provider, "LLM provider name, or 'cache' for cache-only");
  decompose->add_option("--model", dec_model, "LLM model name");
  decompose->add_option("--base-url", dec_url, "Chat-completions endpoint base URL");
  decompose->add_option("--api-key-env", dec_key_env, "Environment variable holding the API key");

  // encode --------------------------------------------------------------------
  auto* encode = app.add_subcommand("encode", "Encode descriptions with the text encoder");
  std::string enc_desc, enc_manifest, enc_out, enc_cfg, enc_lexicon;
  std::vector<std::string> enc_classes;
  int enc_phases = 4;
  encode->add_option("--descriptions", enc_desc)->required();
  encode->add_option("--class", enc_classes);
  encode->add_option("--manifest", enc_manifest);
  encode->add_option("--phases", enc_phases)->check(CLI::Range(1, 6));
  encode->add_option("--config", enc_cfg, "Training config JSON (encoder section is used)");
  encode->add_option("--lexicon", enc_lexicon);
  encode->add_option("--out", enc_out)->required();

  // split ---------------------------------------------------------------------
  auto* split = app.add_subcommand("split", "Seen/unseen class splits");
  std::string split_manifest, split_out;
  double split_fraction = 0.5;
  int split_n = 10;
  std::uint64_t split_seed = 0;
  split->add_option("--manifest", split_manifest)->required();
  split->add_option("--fraction-seen", split_fraction)->check(CLI::Range(0.0, 1.0));
  split->add_option("--n", split_n)->check(CLI::PositiveNumber);
  split->add_option("--seed", split_seed);
  split->add_option("--out", split_out)->required();

  // train ---------------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "Train on the seen classes of one split");
  ModelFlags train_flags;
  SplitFlags train_split;
  std::string train_manifest, train_desc, train_out;
  std::uint64_t train_seed = 0;
  train_flags.attach(trn);
  train_split.attach(trn, true);
  trn->add_option("--seed", train_seed)->required();
  trn->add_option("--manifest", train_manifest)->required();
  trn->add_option("--descriptions", train_desc)->required();
  trn->add_option("--out", train_out, "Output directory (checkpoint.pdac, loss_curve.csv)")->required();

  // detect --------------------------------------------------------------------
  auto* det = app.add_subcommand("detect", "Detect the test vocabulary with a checkpoint");
  SplitFlags det_split;
  std::string det_ckpt, det_manifest, det_desc, det_out, det_vocab = "unseen";
  std::vector<std::string> det_classes;
  std::optional<int> det_top_k;
  std::optional<double> det_sigma;
  det_split.attach(det, false);
  det->add_option("--checkpoint", det_ckpt)->required();
  det->add_option("--manifest", det_manifest)->required();
  det->add_option("--descriptions", det_desc)->required();
  det->add_option("--vocab", det_vocab, "Test vocabulary from the split")
      ->check(CLI::IsMember({"unseen", "seen", "all"}));
  det->add_option("--class", det_classes, "Explicit test vocabulary (overrides --vocab)");
  det->add_option("--top-k", det_top_k);
  det->add_option("--sigma", det_sigma, "Soft-NMS Gaussian width");
  det->add_option("--out", det_out, "Detections JSONL")->required();

  // eval ----------------------------------------------------------------------
  auto* evl = app.add_subcommand("eval", "mAP of detections against ground truth");
  SplitFlags eval_split;
  std::string eval_dets, eval_manifest, eval_out, eval_preset = "thumos";
  std::vector<double> eval_thresholds;
  eval_split.attach(evl, false);
  evl->add_option("--detections", eval_dets)->required();
  evl->add_option("--manifest", eval_manifest)->required();
  evl->add_option("--preset", eval_preset)->check(CLI::IsMember({"thumos", "activitynet"}));
  evl->add_option("--thresholds", eval_thresholds, "tIoU thresholds (override the preset)");
  evl->add_option("--out", eval_out, "Directory for map.csv, per_class.csv, summary.json");

  // ablate --------------------------------------------------------------------
  auto* abl = app.add_subcommand("ablate", "Train and evaluate a grid of variants over splits");
  ModelFlags abl_flags;
  std::string abl_manifest, abl_desc, abl_splits, abl_out, abl_axis = "alignment";
  std::optional<int> abl_n;
  abl_flags.attach(abl);
  abl->add_option("--seed", abl_flags.seed);
  abl->add_option("--manifest", abl_manifest)->required();
  abl->add_option("--descriptions", abl_desc)->required();
  abl->add_option("--splits", abl_splits)->required();
  abl->add_option("--n-splits", abl_n, "Use only the first n splits")->check(CLI::PositiveNumber);
  abl->add_option("--axis", abl_axis)
      ->check(CLI::IsMember({"phases", "filtering", "alignment", "weighting"}));
  abl->add_option("--out", abl_out, "Ablation CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*synth) {
      SyntheticSpec spec = synth_cfg.empty() ? SyntheticSpec::shared_phase_default()
                                             : synthetic_spec_from_json(slurp(synth_cfg));
      spec.seed = synth_seed;
      if (synth_videos) spec.n_videos = *synth_videos;
      if (synth_classes) spec.n_classes = *synth_classes;
      const auto ds = generate_synthetic(spec);
      write_synthetic(ds, spec, synth_out);
      std::printf("wrote %zu videos, %zu classes to %s\n", ds.data.manifest.videos.size(),
                  ds.data.manifest.vocabulary.size(), synth_out.c_str());
    } else if (*decompose) {
      const auto classes = read_class_list(dec_classes, dec_manifest);
      auto client = make_client(dec_provider, dec_model, dec_url, dec_key_env);
      DescriptionCache cache(dec_cache);
      DescriptionTable table;
      if (fs::exists(dec_out)) table = DescriptionTable::load(dec_out);
      const auto phases = PhaseSet::with_count(dec_phases);
      for (const auto& cls : classes) {
        auto set = decompose_label(cls, phases, *client, cache);
        if (table.contains(cls)) {
          // Keep phases from other counts already in the file.
          auto merged = table.get(cls);
          for (auto& [p, text] : set.descriptions) merged.descriptions[p] = text;
          set = std::move(merged);
        }
        table.put(std::move(set));
      }
      table.save(dec_out);
      std::printf("wrote %zu classes to %s\n", table.size(), dec_out.c_str());
    } else if (*encode) {
      const auto descs = DescriptionTable::load(enc_desc);
      const auto classes = enc_classes.empty() && enc_manifest.empty() ? descs.classes()
                                                                     : read_class_list(enc_classes, enc_manifest);
      EncoderConfig ec;
      fs::path base;
      if (!enc_cfg.empty()) {
        ec = TrainConfig::load(enc_cfg).encoder;
        base = fs::path(enc_cfg).parent_path();
      }
      if (!enc_lexicon.empty()) {
        ec.lexicon = enc_lexicon;
        base.clear();
      }
      const auto encoder = make_encoder(ec, base);
      nlohmann::ordered_json out;
      out["classes"] = classes;
      out["dim"] = encoder->dim();
      for (Phase p : PhaseSet::with_count(enc_phases)) {
        out["phases"][std::string(phase_tag(p))] = matrix_json(encode_phase_texts(classes, descs, *encoder, p));
      }
      write_text(enc_out, out.dump() + "\n");
    } else if (*split) {
      const auto m = DatasetManifest::load(split_manifest);
      const auto splits = make_splits(m.vocabulary, split_fraction, split_n, split_seed);
      save_splits(splits, split_out);
      std::printf("wrote %d splits to %s\n", split_n, split_out.c_str());
    } else if (*trn) {
      train_flags.seed = train_seed;
      const TrainConfig cfg = train_flags.resolve();
      const auto data = Dataset::load(train_manifest);
      const auto descs = DescriptionTable::load(train_desc);
      const auto encoder = make_encoder(cfg.encoder);
      const auto result = train(data, train_split.get(), descs, *encoder, cfg);
      const fs::path out(train_out);
      fs::create_directories(out);
      result.checkpoint.save(out / "checkpoint.pdac");
      write_loss_curve_csv(result.curve, out / "loss_curve.csv");
      const auto& last = result.curve.back().loss;
      std::printf("trained %d epochs, loss %.4f -> %.4f\n", cfg.optim.epochs,
                  result.curve.front().loss.total, last.total);
    } else if (*det) {
      const auto ckpt = Checkpoint::load(det_ckpt);
      const auto data = Dataset::load(det_manifest);
      const auto descs = DescriptionTable::load(det_desc);
      std::vector<std::string> vocab = det_classes;
      std::vector<std::string> videos;
      if (vocab.empty()) {
        if (det_split.path.empty()) throw ConfigError("give --class or --splits");
        const auto s = det_split.get();
        if (det_vocab == "unseen") vocab = s.unseen;
        else if (det_vocab == "seen") vocab = s.seen;
        else vocab = data.manifest.vocabulary;
        std::sort(vocab.begin(), vocab.end());
        videos = videos_with(data.manifest, vocab);
      } else {
        for (const auto& v : data.manifest.videos) videos.push_back(v.video_id);
      }
      InferenceConfig ic = ckpt.config.inference;
      if (det_top_k) ic.proposals.top_k = *det_top_k;
      if (det_sigma) ic.nms.sigma = *det_sigma;
      const auto encoder = make_encoder(ckpt.config.encoder);
      const auto dets = detect(ckpt, data, videos, vocab, descs, *encoder, ic);
      write_detections_jsonl(dets, det_out);
      std::printf("%zu detections over %zu videos\n", dets.size(), videos.size());
    } else if (*evl) {
      const auto m = DatasetManifest::load(eval_manifest);
      const auto dets = read_detections_jsonl(eval_dets);
      EvalConfig ec = eval_preset == "activitynet" ? EvalConfig::activitynet() : EvalConfig::thumos();
      if (!eval_thresholds.empty()) ec.thresholds = eval_thresholds;
      try {
        ec.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      std::vector<std::string> classes = m.vocabulary;
      if (!eval_split.path.empty()) classes = eval_split.get().unseen;
      const auto gt = restrict_ground_truth(m, videos_with(m, classes), classes);
      if (gt.empty()) throw DataError("no ground truth for the evaluated classes");
      const auto r = mean_ap(dets, gt, ec);
      print_map(r);
      if (!eval_out.empty()) {
        const fs::path out(eval_out);
        write_map_csv(r, out / "map.csv");
        write_per_class_csv(r, out / "per_class.csv");
        write_summary_json(r, out / "summary.json");
      }
    } else if (*abl) {
      const TrainConfig base = abl_flags.resolve();
      const auto data = Dataset::load(abl_manifest);
      const auto descs = DescriptionTable::load(abl_desc);
      auto splits = load_splits(abl_splits);
      if (abl_n) {
        if (*abl_n > static_cast<int>(splits.size())) throw ConfigError("--n-splits exceeds the splits file");
        splits.resize(static_cast<std::size_t>(*abl_n));
      }
      const auto encoder = make_encoder(base.encoder);
      const auto rows = run_ablation(data, splits, ablation_grid(abl_axis, base), descs, *encoder,
                                     [](const AblationCell& c, std::size_t s, const MeanApResult& r) {
                                       std::printf("%-40s split %zu avg %.4f\n", c.label.c_str(), s, r.average);
                                       std::fflush(stdout);
                                     });
      write_ablation_csv(rows, abl_out);
      for (const auto& r : rows) {
        std::printf("%-40s %.4f +- %.4f\n", r.label.c_str(), r.avg_mean, r.avg_std);
      }
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric divergence: %s\n", e.what());
    return kExitNumeric;
  } catch (const DecompositionParseError& e) {
    std::fprintf(stderr, "could not parse LLM answer: %s\n--- raw answer ---\n%s\n", e.what(),
                 e.raw_response().c_str());
    return kExitData;
  } catch (const ProviderError& e) {
    std::fprintf(stderr, "LLM provider error: %s\n", e.what());
    return kExitData;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
