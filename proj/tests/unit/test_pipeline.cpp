#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "../support/tempdir.hpp"
#include "pda/errors.hpp"
#include "pda/pipeline.hpp"

using namespace pda;
using pda::testing::TempDir;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.n_classes = 4;
  s.n_videos = 16;
  s.t_min = 16;
  s.t_max = 24;
  s.instance_min = 4;
  s.instance_max = 6;
  s.max_instances = 2;
  s.d_in = 8;
  s.phase_prototype_dim = 8;
  s.shared_phase_pairs = {{0, 1, Phase::Start}};
  s.seed = 5;
  return s;
}

TrainConfig small_config() {
  TrainConfig c;
  c.seed = 9;
  c.model.backbone = {8, 8, 1, 2, 16, 32};
  c.model.d_txt = 8;
  c.encoder.dim = 8;
  c.model.weight_hidden = 8;
  c.model.fusion_hidden = 8;
  c.optim.epochs = 2;
  c.optim.learning_rate = 1e-3;
  return c;
}

const SyntheticDataset& small_data() {
  static const SyntheticDataset ds = generate_synthetic(small_spec());
  return ds;
}

OpenVocabSplit small_split() {
  return make_splits(small_data().data.manifest.vocabulary, 0.5, 1, 3).front();
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(PipelineExamples, PhaseSetLabels) {
  EXPECT_EQ(PhaseSet::with_count(1).label(), "One (Glob)");
  EXPECT_EQ(PhaseSet::with_count(2).label(), "Two (Start, End)");
  EXPECT_EQ(PhaseSet::with_count(3).label(), "Three (Start, Mid, End)");
  EXPECT_EQ(PhaseSet::with_count(4).label(), "Four (Start, Mid, End, Glob)");
  EXPECT_EQ(PhaseSet::with_count(5).label(), "Five (Start, Mid1, Mid2, End, Glob)");
  EXPECT_EQ(PhaseSet::with_count(6).label(), "Six (Start, Mid1, Mid2, Mid3, End, Glob)");
}

TEST(PipelineExamples, WarmupIsLinear) {
  OptimConfig o;
  o.epochs = 10;  // < 25, so warmup is 2 epochs
  o.learning_rate = 1.0;
  EXPECT_DOUBLE_EQ(o.effective_warmup(), 2.0);
  // 5 steps per epoch: 10 warmup steps.
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 0, 5), 0.1);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 4, 5), 0.5);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 9, 5), 1.0);
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 10, 5), 1.0);
}

TEST(PipelineExamples, MultistepDecay) {
  OptimConfig o;
  o.epochs = 30;
  o.learning_rate = 1.0;
  o.warmup_epochs = 5;
  // 30 epochs x 1 step: milestones at steps 18 and round(25.5) = 26.
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 17, 1), 1.0);
  EXPECT_NEAR(learning_rate_at(o, 18, 1), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate_at(o, 25, 1), 0.1, 1e-15);
  EXPECT_NEAR(learning_rate_at(o, 26, 1), 0.01, 1e-15);
}

TEST(PipelineExamples, CosineAnneals) {
  OptimConfig o;
  o.epochs = 30;
  o.learning_rate = 2.0;
  o.scheduler = Scheduler::Cosine;
  // warm = 5 steps, span = 25.
  EXPECT_DOUBLE_EQ(learning_rate_at(o, 5, 1), 2.0);
  EXPECT_NEAR(learning_rate_at(o, 17, 1), 0.5 * 2.0 * (1.0 + std::cos(M_PI * 12.0 / 25.0)), 1e-12);
  EXPECT_NEAR(learning_rate_at(o, 30, 1), 0.0, 1e-15);
}

TEST(PipelineExamples, UnknownConfigKeysRejected) {
  EXPECT_THROW(TrainConfig::from_json({{"sed", 1}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"optim", {{"lr", 0.1}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"model", {{"preset", "huge"}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"alignment", "sideways"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"optim", {{"epochs", "ten"}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"eval", {{"thresholds", {0.5, 0.3}}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"encoder", {{"dim", 16}}}, {"model", {{"d_txt", 32}}}}),
               ConfigError);
}

TEST(PipelineExamples, ConfigPresets) {
  const auto full = TrainConfig::from_json({{"model", {{"preset", "full"}}}});
  EXPECT_EQ(full.model.backbone.layers, 6);
  EXPECT_EQ(full.model.backbone.d_model, 512);
  EXPECT_EQ(full.model.backbone.heads, 8);
  const auto anet = TrainConfig::from_json({{"eval", {{"preset", "activitynet"}}}});
  EXPECT_EQ(anet.eval.thresholds.size(), 10u);
  const auto defaults = TrainConfig::from_json(nlohmann::json::object());
  EXPECT_EQ(defaults.model.phase_count, 4);
  EXPECT_EQ(defaults.model.alignment, Alignment::PhaseAdaptive);
  EXPECT_EQ(defaults.model.filtering, Filtering::TextInfused);
}

TEST(PipelineExamples, ConfigJsonRoundTrip) {
  auto c = small_config();
  c.model.alignment = Alignment::GlobalMerge;
  c.model.weight_mode = WeightMode::Sigmoid;
  c.optim.scheduler = Scheduler::Cosine;
  c.model.phase_count = 6;
  const auto back = TrainConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
}

TEST(PipelineExamples, SnippetConversion) {
  VideoEntry v;
  v.frame_rate = 25.0;
  v.snippet_stride = 5;
  EXPECT_EQ(seconds_to_snippets(1.0, v), 5.0);
  EXPECT_EQ(seconds_to_snippets(0.2 * 3, v), 3.0);  // 0.6 * 5 is not exactly 3 in binary
  EXPECT_DOUBLE_EQ(seconds_to_snippets(0.1, v), 0.5);
}

TEST(PipelineExamples, CheckpointRoundTrip) {
  TempDir dir;
  const auto& ds = small_data();
  const auto result = train(ds.data, small_split(), ds.descriptions, StubTextEncoder(8, 0, ds.lexicon),
                            small_config());
  ASSERT_EQ(result.curve.size(), 3u);
  EXPECT_EQ(result.curve[0].epoch, 0);
  result.checkpoint.save(dir / "m.ckpt");
  const auto back = Checkpoint::load(dir / "m.ckpt");
  EXPECT_EQ(back.params, result.checkpoint.params);
  EXPECT_EQ(back.train_classes, result.checkpoint.train_classes);
  EXPECT_EQ(back.rng_state, result.checkpoint.rng_state);
  EXPECT_EQ(back.config.to_json(), result.checkpoint.config.to_json());
  back.save(dir / "again.ckpt");
  EXPECT_EQ(file_bytes(dir / "m.ckpt"), file_bytes(dir / "again.ckpt"));
}

TEST(PipelineExamples, CorruptCheckpointRejected) {
  TempDir dir;
  {
    std::ofstream(dir / "bad.ckpt") << "PDAX1234";
  }
  EXPECT_THROW(Checkpoint::load(dir / "bad.ckpt"), FormatError);
  const auto& ds = small_data();
  const auto result = train(ds.data, small_split(), ds.descriptions, StubTextEncoder(8, 0, ds.lexicon),
                            small_config());
  result.checkpoint.save(dir / "m.ckpt");
  auto bytes = file_bytes(dir / "m.ckpt");
  bytes.resize(bytes.size() - 8);
  {
    std::ofstream(dir / "short.ckpt", std::ios::binary) << bytes;
  }
  EXPECT_THROW(Checkpoint::load(dir / "short.ckpt"), FormatError);
}

TEST(PipelineExamples, CheckpointShapeMismatchRejected) {
  const auto& ds = small_data();
  auto ckpt = train(ds.data, small_split(), ds.descriptions, StubTextEncoder(8, 0, ds.lexicon),
                    small_config())
                  .checkpoint;
  ckpt.config.model.fusion_hidden = 12;
  EXPECT_THROW(ckpt.instantiate(), ConfigError);
}

TEST(PipelineExamples, DetectRejectsEmptyVocabulary) {
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  const auto ckpt = train(ds.data, small_split(), ds.descriptions, enc, small_config()).checkpoint;
  EXPECT_THROW(detect(ckpt, ds.data, {}, {}, ds.descriptions, enc, {}), std::invalid_argument);
}

TEST(PipelineExamples, UnseenSeenClassRejected) {
  const auto& ds = small_data();
  OpenVocabSplit split = small_split();
  split.seen.push_back("NotAClass");
  EXPECT_THROW(train(ds.data, split, ds.descriptions, StubTextEncoder(8, 0, ds.lexicon), small_config()),
               DataError);
}

TEST(PipelineExamples, AblationCsvLayout) {
  TempDir dir;
  AblationRow r{"Four (Start, Mid, End, Glob)", {0.3, 0.5}, {0.5, 0.25}, {0.4, 0.2}, 0.3, 0.1};
  write_ablation_csv({r}, dir / "a.csv");
  EXPECT_EQ(file_bytes(dir / "a.csv"),
            "label,n_splits,mAP@0.30,mAP@0.50,avg_mean,avg_std\n"
            "\"Four (Start, Mid, End, Glob)\",2,0.500000,0.250000,0.300000,0.100000\n");
}

TEST(PipelineProperty, TrainingSeesOnlySeenDescriptions) {
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto split = make_splits(ds.data.manifest.vocabulary, 0.5, 1, seed).front();
    TrackingDescriptionSource tracked(ds.descriptions);
    auto cfg = small_config();
    cfg.optim.epochs = 1;
    const auto ckpt = train(ds.data, split, tracked, enc, cfg).checkpoint;
    const std::set<std::string> seen(split.seen.begin(), split.seen.end());
    EXPECT_EQ(tracked.accessed(), seen) << "seed " << seed;

    TrackingDescriptionSource at_test(ds.descriptions);
    evaluate_split(ckpt, ds.data, split, at_test, enc);
    const std::set<std::string> unseen(split.unseen.begin(), split.unseen.end());
    EXPECT_EQ(at_test.accessed(), unseen) << "seed " << seed;
  }
}

TEST(PipelineProperty, TrainingIsDeterministic) {
  TempDir dir;
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  const auto a = train(ds.data, small_split(), ds.descriptions, enc, small_config());
  const auto b = train(ds.data, small_split(), ds.descriptions, enc, small_config());
  a.checkpoint.save(dir / "a.ckpt");
  b.checkpoint.save(dir / "b.ckpt");
  EXPECT_EQ(file_bytes(dir / "a.ckpt"), file_bytes(dir / "b.ckpt"));
  auto other = small_config();
  other.seed = 10;
  const auto c = train(ds.data, small_split(), ds.descriptions, enc, other);
  EXPECT_NE(c.checkpoint.params, a.checkpoint.params);
}

TEST(PipelineProperty, LearningRateBoundedAndDecaying) {
  for (auto sched : {Scheduler::MultiStep, Scheduler::Cosine}) {
    for (int epochs : {3, 10, 30, 40}) {
      OptimConfig o;
      o.epochs = epochs;
      o.scheduler = sched;
      o.learning_rate = 1e-3;
      const long spe = 7;
      const long warm = std::lround(o.effective_warmup() * spe);
      double prev = 0.0;
      for (long s = 0; s < epochs * spe; ++s) {
        const double lr = learning_rate_at(o, s, spe);
        ASSERT_GT(lr, 0.0);
        ASSERT_LE(lr, o.learning_rate * (1.0 + 1e-12));
        if (s < warm) {
          ASSERT_GT(lr, prev);
        } else if (s > warm) {
          ASSERT_LE(lr, prev * (1.0 + 1e-12));
        }
        prev = lr;
      }
    }
  }
}

namespace {

// Two classes, 20 videos.
const SyntheticDataset& two_class_data() {
  static const SyntheticDataset ds = [] {
    auto s = small_spec();
    s.n_classes = 2;
    s.n_videos = 20;
    s.shared_phase_pairs.clear();
    return generate_synthetic(s);
  }();
  return ds;
}

OpenVocabSplit all_seen(const SyntheticDataset& ds) {
  OpenVocabSplit s;
  s.seen = ds.data.manifest.vocabulary;
  s.unseen = s.seen;
  return s;
}

}  // namespace

TEST(PipelineExamples, LossDecreases) {
  const auto& ds = two_class_data();
  auto cfg = small_config();
  cfg.optim.epochs = 5;
  cfg.optim.learning_rate = 3e-3;
  const auto r = train(ds.data, all_seen(ds), ds.descriptions, StubTextEncoder(8, 0, ds.lexicon), cfg);
  ASSERT_EQ(r.curve.size(), 6u);
  EXPECT_LT(r.curve.back().loss.total, r.curve.front().loss.total);
}

TEST(PipelineExamples, ZeroLearningRateKeepsParameters) {
  const auto& ds = two_class_data();
  auto cfg = small_config();
  cfg.optim.learning_rate = 0.0;
  cfg.optim.epochs = 3;
  const auto r = train(ds.data, all_seen(ds), ds.descriptions, StubTextEncoder(8, 0, ds.lexicon), cfg);
  PdaModel init(r.checkpoint.config.model);
  init.init(cfg.seed);
  for (const auto* p : init.parameters()) EXPECT_EQ(r.checkpoint.params.at(p->name), p->value) << p->name;
}

TEST(PipelineExamples, TrainedBeatsUntrainedOnTrainingVocabulary) {
  const auto& ds = two_class_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  auto cfg = small_config();
  cfg.optim.epochs = 10;
  cfg.optim.learning_rate = 3e-3;
  const auto split = all_seen(ds);
  const auto trained = train(ds.data, split, ds.descriptions, enc, cfg).checkpoint;
  PdaModel fresh(trained.config.model);
  fresh.init(cfg.seed);
  const auto untrained = Checkpoint::capture(fresh, trained.config, trained.train_classes, 0, "");
  const double after = evaluate_split(trained, ds.data, split, ds.descriptions, enc).average;
  const double before = evaluate_split(untrained, ds.data, split, ds.descriptions, enc).average;
  EXPECT_GT(after, before);
}

TEST(PipelineExamples, DetectionsSurviveCheckpointRoundTrip) {
  TempDir dir;
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  const auto split = small_split();
  const auto ckpt = train(ds.data, split, ds.descriptions, enc, small_config()).checkpoint;
  const auto videos = videos_with(ds.data.manifest, split.unseen);
  const auto before = detect(ckpt, ds.data, videos, split.unseen, ds.descriptions, enc, ckpt.config.inference);
  ckpt.save(dir / "m.ckpt");
  const auto loaded = Checkpoint::load(dir / "m.ckpt");
  const auto after = detect(loaded, ds.data, videos, split.unseen, ds.descriptions, enc, loaded.config.inference);
  ASSERT_FALSE(before.empty());
  EXPECT_EQ(before, after);
}

TEST(PipelineExamples, AblationRowsFollowCells) {
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  const std::vector<OpenVocabSplit> splits{small_split()};
  auto cfg = small_config();
  cfg.optim.epochs = 1;
  const auto one = run_ablation(ds.data, splits, {{"only", cfg}}, ds.descriptions, enc);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].avg_per_split.size(), 1u);

  std::vector<AblationCell> grid;
  for (int n = 1; n <= 4; ++n) {
    auto c = cfg;
    c.model.phase_count = n;
    grid.push_back({PhaseSet::with_count(n).label(), c});
  }
  const auto rows = run_ablation(ds.data, splits, grid, ds.descriptions, enc);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].label, "One (Glob)");
  EXPECT_EQ(rows[3].label, "Four (Start, Mid, End, Glob)");
}

TEST(PipelineProperty, IdenticalCellsGiveIdenticalRows) {
  const auto& ds = small_data();
  const StubTextEncoder enc(8, 0, ds.lexicon);
  auto cfg = small_config();
  cfg.optim.epochs = 1;
  const auto rows = run_ablation(ds.data, {small_split()}, {{"a", cfg}, {"b", cfg}}, ds.descriptions, enc);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].map_mean, rows[1].map_mean);
  EXPECT_EQ(rows[0].avg_per_split, rows[1].avg_per_split);
}
