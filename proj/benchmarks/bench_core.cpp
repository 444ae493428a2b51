#include <benchmark/benchmark.h>

#include <random>

#include "pda/backbone.hpp"
#include "pda/metrics.hpp"
#include "pda/model.hpp"
#include "pda/postprocess.hpp"

using namespace pda;

namespace {

Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

std::vector<Detection> random_detections(int n, int videos, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Detection> out;
  for (int i = 0; i < n; ++i) {
    const double s = 100.0 * u(rng);
    out.push_back({"v" + std::to_string(i % videos), s, s + 1.0 + 10.0 * u(rng), "a", u(rng)});
  }
  return out;
}

void BM_BackboneForward(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  const BackboneConfig cfg = BackboneConfig::desk(32);
  Backbone b(cfg);
  std::mt19937_64 rng(1);
  b.init(rng);
  const Matrix x = gaussian(T, 32, rng);
  for (auto _ : state) benchmark::DoNotOptimize(b.forward(x, nullptr));
  state.SetItemsProcessed(state.iterations() * T);
}
BENCHMARK(BM_BackboneForward)->Arg(64)->Arg(128)->Arg(256);

void BM_ModelTrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::desk(32);
  PdaModel model(cfg);
  model.init(2);
  std::mt19937_64 rng(3);
  VocabularyTexts texts;
  for (int c = 0; c < 4; ++c) texts.classes.push_back("c" + std::to_string(c));
  for (std::size_t i = 0; i < cfg.branches().size(); ++i) texts.per_branch.push_back(gaussian(4, cfg.d_txt, rng));
  const Matrix x = gaussian(64, 32, rng);
  const auto targets = build_targets(64, 4, {{{10.0, 30.0}, 1}, {{40.0, 50.0}, 3}});
  for (auto _ : state) {
    ModelCache cache;
    const auto out = model.forward(x, texts, &cache);
    benchmark::DoNotOptimize(loss_and_backward(&model, cache, out, texts, targets, {}));
  }
}
BENCHMARK(BM_ModelTrainStep);

void BM_SoftNms(benchmark::State& state) {
  std::mt19937_64 rng(4);
  const auto dets = random_detections(static_cast<int>(state.range(0)), 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(soft_nms(dets, 0.5, 1e-3));
}
BENCHMARK(BM_SoftNms)->Arg(100)->Arg(200)->Arg(1000);

void BM_AveragePrecision(benchmark::State& state) {
  std::mt19937_64 rng(5);
  const int n = static_cast<int>(state.range(0));
  const auto dets = random_detections(n, 20, rng);
  GroundTruth gt;
  for (const auto& d : random_detections(n / 10, 20, rng)) gt[d.video_id].push_back({d.start, d.end, "a"});
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(dets, gt, 0.5));
}
BENCHMARK(BM_AveragePrecision)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
