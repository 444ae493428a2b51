#include <gtest/gtest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "pda/apa.hpp"

using namespace pda;
using pda::testing::matches_finite_difference;
using pda::testing::params_match_finite_difference;
using pda::testing::random_matrix;

namespace {

double weighted_sum(const Matrix& y, const Matrix& r) { return (y.array() * r.array()).sum(); }

void randomize(const nn::ParamList& params, std::mt19937_64& rng, double scale = 0.3) {
  for (auto* p : params) p->value = random_matrix(p->value.rows(), p->value.cols(), rng, scale);
}

void zero_all(const nn::ParamList& params) {
  for (auto* p : params) p->value.setZero();
}

// Makes a {in, hidden, ..., out} GELU Mlp compute `out = x · S` for a linear
// selection S (in x out), using gelu(x) - gelu(-x) = x at every hidden layer.
void make_linear_passthrough(nn::Mlp& mlp, const Matrix& S) {
  const auto out = S.cols();
  nn::ParamList ps;
  mlp.collect(ps);
  zero_all(ps);
  auto& first = mlp.layers.front();
  first.weight.value.leftCols(out) = S;
  first.weight.value.middleCols(out, out) = -S;
  for (std::size_t l = 1; l + 1 < mlp.layers.size(); ++l) {
    auto& w = mlp.layers[l].weight.value;
    const Matrix I = Matrix::Identity(out, out);
    w.block(0, 0, out, out) = I;
    w.block(out, 0, out, out) = -I;
    w.block(0, out, out, out) = -I;
    w.block(out, out, out, out) = I;
  }
  auto& last = mlp.layers.back().weight.value;
  last.topRows(out) = Matrix::Identity(out, out);
  last.middleRows(out, out) = -Matrix::Identity(out, out);
}

}  // namespace

TEST(ApaExamples, SingleClassCrossAttentionReturnsValueRow) {
  std::mt19937_64 rng(1);
  CrossAttention ca("ca", 4, 1);
  ca.init(rng);
  ca.residual = false;
  const Matrix v = random_matrix(3, 4, rng);
  const Matrix bank = random_matrix(1, 4, rng);
  nn::AttentionCache cache;
  const Matrix out = ca.forward(v, bank, &cache);
  const Matrix value = ca.attn.v_proj.forward(bank);
  for (int t = 0; t < 3; ++t) {
    EXPECT_DOUBLE_EQ(cache.probs[0](t, 0), 1.0);
    EXPECT_LT((out.row(t) - value.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ApaExamples, CrossAttentionHasResidualAndNoOutputProjection) {
  CrossAttention ca("ca", 4, 2);
  EXPECT_FALSE(ca.attn.has_output_projection());
  std::mt19937_64 rng(2);
  ca.init(rng);
  const Matrix v = random_matrix(3, 4, rng);
  const Matrix bank = random_matrix(2, 4, rng);
  const Matrix with = ca.forward(v, bank, nullptr);
  ca.residual = false;
  const Matrix without = ca.forward(v, bank, nullptr);
  EXPECT_LT((with - without - v).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApaExamples, CrossAttentionTwoKeysByHand) {
  CrossAttention ca("ca", 2, 1);
  ca.attn.q_proj.weight.value = Matrix::Identity(2, 2);
  ca.attn.k_proj.weight.value = Matrix::Identity(2, 2);
  ca.attn.v_proj.weight.value << 2, 0, 0, 3;
  Matrix v(1, 2), bank(2, 2);
  v << 1, 0;
  bank << 1, 0, 0, 1;
  // Logits [1, 0] / sqrt(2); values rows [2, 0] and [0, 3].
  const double a = std::exp(1.0 / std::sqrt(2.0));
  const double p0 = a / (a + 1.0), p1 = 1.0 / (a + 1.0);
  const Matrix out = ca.forward(v, bank, nullptr);
  EXPECT_NEAR(out(0, 0), 1.0 + 2.0 * p0, 1e-6);
  EXPECT_NEAR(out(0, 1), 0.0 + 3.0 * p1, 1e-6);
}

TEST(ApaExamples, ClassifyOrthonormal) {
  const Matrix bank = Matrix::Identity(3, 3);
  Matrix refined(2, 3);
  refined << 0, 1, 0, 0, 0, 1;
  const Matrix s = classify_phase(refined, bank);
  EXPECT_EQ(s, refined);
  EXPECT_EQ(classify_phase(Matrix::Zero(4, 3), bank), Matrix::Zero(4, 3));
}

TEST(ApaExamples, ClassifyMatchesLoopOracle) {
  std::mt19937_64 rng(3);
  const Matrix refined = random_matrix(2, 5, rng);
  const Matrix bank = random_matrix(2, 5, rng);
  const Matrix s = classify_phase(refined, bank);
  for (int t = 0; t < 2; ++t) {
    for (int c = 0; c < 2; ++c) {
      double dot = 0.0;
      for (int j = 0; j < 5; ++j) dot += refined(t, j) * bank(c, j);
      EXPECT_NEAR(s(t, c), dot, 1e-6);
    }
  }
  EXPECT_THROW(classify_phase(refined, random_matrix(2, 4, rng)), std::invalid_argument);
}

TEST(ApaExamples, ZeroWeightingGivesUniformSoftmax) {
  WeightingNetwork net("w", 4, 4, 2, 8);
  std::mt19937_64 rng(4);
  const auto w = net.forward(random_matrix(4, 4, rng), WeightMode::Softmax, nullptr);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(w.weights(i), 0.25);
  const auto s = net.forward(random_matrix(4, 4, rng), WeightMode::Sigmoid, nullptr);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s.weights(i), 0.5);
}

TEST(ApaExamples, ForcedLogitsGiveDerivedWeights) {
  WeightingNetwork net("w", 4, 4, 2, 8);
  Matrix select = Matrix::Zero(4, 1);
  select(0, 0) = 1.0;
  make_linear_passthrough(net.head, select);
  net.phase_embeddings.value(0, 0) = std::log(2.0);
  const auto w = net.forward(Matrix::Zero(4, 4), WeightMode::Softmax, nullptr);
  const double expected[4] = {0.4, 0.2, 0.2, 0.2};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(w.weights(i), expected[i], 1e-12);
}

TEST(ApaExamples, InitialWeightsAreUniform) {
  WeightingNetwork net("w", 8, 4, 2, 16);
  std::mt19937_64 rng(5);
  net.init(rng);
  const auto w = net.forward(random_matrix(4, 8, rng), WeightMode::Softmax, nullptr);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(w.weights(i), 0.25, 1e-12);
}

TEST(ApaExamples, AggregateScores) {
  const PhaseSet set = PhaseSet::canonical();
  std::map<Phase, PhaseClassScores> per;
  double v = 1.0;
  for (Phase p : set) per[p] = {p, Matrix::Constant(1, 1, v++)};
  PhaseWeights w{Vector(4)};
  w.weights << 0.4, 0.2, 0.2, 0.2;
  EXPECT_NEAR(aggregate_scores(set, per, w)(0, 0), 2.2, 1e-12);

  std::mt19937_64 rng(6);
  for (Phase p : set) per[p] = {p, random_matrix(3, 2, rng)};
  w.weights = Vector::Zero(4);
  w.weights(2) = 1.0;
  EXPECT_EQ(aggregate_scores(set, per, w), per[set[2]].scores);
  w.weights = Vector::Constant(4, 0.25);
  Matrix mean = Matrix::Zero(3, 2);
  for (Phase p : set) mean += per[p].scores;
  mean /= 4.0;
  EXPECT_LT((aggregate_scores(set, per, w) - mean).cwiseAbs().maxCoeff(), 1e-12);
  per.erase(Phase::End);
  EXPECT_THROW(aggregate_scores(set, per, w), std::invalid_argument);
}

TEST(ApaExamples, FusionSliceIdentity) {
  FusionMlp fusion("f", 3, 4, 8);
  Matrix select = Matrix::Zero(12, 3);
  select.topRows(3) = Matrix::Identity(3, 3);
  make_linear_passthrough(fusion.mlp, select);
  std::mt19937_64 rng(7);
  std::vector<Matrix> branches;
  for (int p = 0; p < 4; ++p) branches.push_back(random_matrix(5, 3, rng));
  const Matrix out = fusion.forward(branches, nullptr);
  EXPECT_LT((out - branches[0]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApaExamples, FusionZeroInputZeroOutput) {
  FusionMlp fusion("f", 3, 4, 8);
  std::mt19937_64 rng(8);
  fusion.init(rng);
  std::vector<Matrix> branches(4, Matrix::Zero(2, 3));
  EXPECT_EQ(fusion.forward(branches, nullptr), Matrix::Zero(2, 3));
  branches.pop_back();
  EXPECT_THROW(fusion.forward(branches, nullptr), std::invalid_argument);
}

TEST(ApaExamples, FusionMatchesHandForward) {
  FusionMlp fusion("f", 2, 2, 3);
  std::mt19937_64 rng(9);
  nn::ParamList ps;
  fusion.collect(ps);
  randomize(ps, rng, 0.7);
  std::vector<Matrix> branches{random_matrix(1, 2, rng), random_matrix(1, 2, rng)};
  const double x[4] = {branches[0](0, 0), branches[0](0, 1), branches[1](0, 0), branches[1](0, 1)};
  auto gelu = [](double z) {
    return 0.5 * z * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (z + 0.044715 * z * z * z)));
  };
  auto layer = [](const nn::Linear& l, const std::vector<double>& in) {
    std::vector<double> out(static_cast<std::size_t>(l.out_features()));
    for (int j = 0; j < l.out_features(); ++j) {
      double acc = l.bias.value(0, j);
      for (int i = 0; i < l.in_features(); ++i) acc += in[i] * l.weight.value(i, j);
      out[j] = acc;
    }
    return out;
  };
  std::vector<double> h(x, x + 4);
  for (std::size_t l = 0; l < fusion.mlp.layers.size(); ++l) {
    h = layer(fusion.mlp.layers[l], h);
    if (l + 1 < fusion.mlp.layers.size()) {
      for (double& z : h) z = gelu(z);
    }
  }
  const Matrix out = fusion.forward(branches, nullptr);
  EXPECT_NEAR(out(0, 0), h[0], 1e-6);
  EXPECT_NEAR(out(0, 1), h[1], 1e-6);
}

TEST(ApaExamples, ZeroHeads) {
  LocalizationHeads heads("h", 4);
  std::mt19937_64 rng(10);
  const auto out = heads.forward(random_matrix(3, 4, rng), nullptr);
  for (int t = 0; t < 3; ++t) {
    EXPECT_DOUBLE_EQ(out.fg_prob(t), 0.5);
    EXPECT_NEAR(out.d_start(t), std::log(2.0) + 1e-4, 1e-12);
    EXPECT_NEAR(out.d_end(t), std::log(2.0) + 1e-4, 1e-12);
  }
}

TEST(ApaExamples, SoftplusAsymptote) {
  LocalizationHeads heads("h", 1);
  heads.regression.bias.value << 10.0, 10.0;
  const auto out = heads.forward(Matrix::Zero(1, 1), nullptr);
  EXPECT_NEAR(out.d_start(0), 10.0001, 1e-4);
  EXPECT_NEAR(out.d_end(0), 10.0001, 1e-4);
}

TEST(ApaProperty, DistancesStrictlyPositive) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    LocalizationHeads heads("h", 3);
    nn::ParamList ps;
    heads.collect(ps);
    randomize(ps, rng, 5.0);
    const auto out = heads.forward(random_matrix(4, 3, rng, 5.0), nullptr);
    ASSERT_GT(out.d_start.minCoeff(), 0.0);
    ASSERT_GT(out.d_end.minCoeff(), 0.0);
    ASSERT_GT(out.fg_prob.minCoeff(), 0.0);
    ASSERT_LT(out.fg_prob.maxCoeff(), 1.0 + 1e-15);
  }
}

TEST(ApaProperty, SoftmaxWeightsOnSimplex) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 6);
    WeightingNetwork net("w", 8, n, 2, 16);
    net.init(rng);
    nn::ParamList ps;
    net.collect(ps);
    randomize(ps, rng, 1.0);
    const auto w = net.forward(random_matrix(n, 8, rng, 3.0), WeightMode::Softmax, nullptr);
    ASSERT_NEAR(w.weights.sum(), 1.0, 1e-6);
    ASSERT_GE(w.weights.minCoeff(), 0.0);
    const auto s = net.forward(random_matrix(n, 8, rng, 3.0), WeightMode::Sigmoid, nullptr);
    ASSERT_GE(s.weights.minCoeff(), 0.0);
    ASSERT_LE(s.weights.maxCoeff(), 1.0);
  }
}

TEST(ApaProperty, CrossAttentionIsTimeEquivariant) {
  std::mt19937_64 rng(13);
  CrossAttention ca("ca", 6, 2);
  ca.init(rng);
  const Matrix v = random_matrix(5, 6, rng);
  const Matrix bank = random_matrix(3, 6, rng);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
  perm.indices() << 3, 0, 4, 1, 2;
  const Matrix a = perm * ca.forward(v, bank, nullptr);
  const Matrix b = ca.forward(perm * v, bank, nullptr);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApaGradient, CrossAttention) {
  std::mt19937_64 rng(20);
  CrossAttention ca("ca", 8, 2);
  ca.init(rng);
  nn::ParamList ps;
  ca.collect(ps);
  randomize(ps, rng, 0.4);
  Matrix v = random_matrix(6, 8, rng);
  Matrix bank = random_matrix(4, 8, rng);
  const Matrix r = random_matrix(6, 8, rng);
  auto loss = [&] { return weighted_sum(ca.forward(v, bank, nullptr), r); };
  Matrix dv, dbank;
  EXPECT_TRUE(params_match_finite_difference(ps, loss, [&] {
    nn::AttentionCache cache;
    ca.forward(v, bank, &cache);
    std::tie(dv, dbank) = ca.backward(cache, r);
  }));
  EXPECT_TRUE(matches_finite_difference(v, dv, loss, "visual"));
  EXPECT_TRUE(matches_finite_difference(bank, dbank, loss, "bank"));
}

TEST(ApaGradient, WeightingNetworkBothModes) {
  for (WeightMode mode : {WeightMode::Softmax, WeightMode::Sigmoid}) {
    std::mt19937_64 rng(21);
    WeightingNetwork net("w", 8, 4, 2, 16);
    net.init(rng);
    nn::ParamList ps;
    net.collect(ps);
    randomize(ps, rng, 0.4);
    Matrix tokens = random_matrix(4, 8, rng);
    const Vector r = random_matrix(4, 1, rng);
    auto loss = [&] { return net.forward(tokens, mode, nullptr).weights.dot(r); };
    Matrix dtokens;
    EXPECT_TRUE(params_match_finite_difference(ps, loss, [&] {
      WeightingCache cache;
      net.forward(tokens, mode, &cache);
      dtokens = net.backward(cache, r, mode);
    }));
    EXPECT_TRUE(matches_finite_difference(tokens, dtokens, loss, "tokens"));
  }
}

TEST(ApaGradient, FusionMlp) {
  std::mt19937_64 rng(22);
  FusionMlp fusion("f", 6, 3, 12);
  fusion.init(rng);
  nn::ParamList ps;
  fusion.collect(ps);
  randomize(ps, rng, 0.4);
  std::vector<Matrix> branches{random_matrix(5, 6, rng), random_matrix(5, 6, rng),
                               random_matrix(5, 6, rng)};
  const Matrix r = random_matrix(5, 6, rng);
  auto loss = [&] { return weighted_sum(fusion.forward(branches, nullptr), r); };
  std::vector<Matrix> grads;
  EXPECT_TRUE(params_match_finite_difference(ps, loss, [&] {
    nn::MlpCache cache;
    fusion.forward(branches, &cache);
    grads = fusion.backward(cache, r);
  }));
  for (std::size_t p = 0; p < branches.size(); ++p) {
    EXPECT_TRUE(matches_finite_difference(branches[p], grads[p], loss, "branch"));
  }
}

TEST(ApaGradient, LocalizationHeads) {
  std::mt19937_64 rng(23);
  LocalizationHeads heads("h", 6);
  heads.init(rng);
  nn::ParamList ps;
  heads.collect(ps);
  randomize(ps, rng, 0.5);
  Matrix x = random_matrix(5, 6, rng);
  const Vector rf = random_matrix(5, 1, rng), rs = random_matrix(5, 1, rng),
               re = random_matrix(5, 1, rng);
  auto loss = [&] {
    const auto o = heads.forward(x, nullptr);
    return o.fg_prob.dot(rf) + o.d_start.dot(rs) + o.d_end.dot(re);
  };
  Matrix dx;
  EXPECT_TRUE(params_match_finite_difference(ps, loss, [&] {
    HeadsCache cache;
    const auto o = heads.forward(x, &cache);
    dx = heads.backward(cache, o, rf, rs, re);
  }));
  EXPECT_TRUE(matches_finite_difference(x, dx, loss, "fused"));
}

TEST(ApaProperty, AggregationIsLinear) {
  std::mt19937_64 rng(30);
  const PhaseSet set = PhaseSet::canonical();
  for (int trial = 0; trial < 100; ++trial) {
    std::map<Phase, PhaseClassScores> a, b, sum;
    for (Phase p : set) {
      a[p] = {p, random_matrix(3, 2, rng)};
      b[p] = {p, random_matrix(3, 2, rng)};
      sum[p] = {p, a[p].scores + b[p].scores};
    }
    PhaseWeights w1{random_matrix(4, 1, rng)}, w2{random_matrix(4, 1, rng)};
    PhaseWeights w12{w1.weights + w2.weights};
    const Matrix lhs_s = aggregate_scores(set, sum, w1);
    const Matrix rhs_s = aggregate_scores(set, a, w1) + aggregate_scores(set, b, w1);
    ASSERT_LT((lhs_s - rhs_s).cwiseAbs().maxCoeff(), 1e-6);
    const Matrix lhs_w = aggregate_scores(set, a, w12);
    const Matrix rhs_w = aggregate_scores(set, a, w1) + aggregate_scores(set, a, w2);
    ASSERT_LT((lhs_w - rhs_w).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(ApaProperty, CrossAttentionRowIndependence) {
  std::mt19937_64 rng(31);
  CrossAttention ca("ca", 6, 3);
  ca.init(rng);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix v = random_matrix(5, 6, rng);
    const Matrix bank = random_matrix(4, 6, rng);
    const Matrix before = ca.forward(v, bank, nullptr);
    const int t = static_cast<int>(rng() % 5);
    v.row(t) += random_matrix(1, 6, rng);
    const Matrix after = ca.forward(v, bank, nullptr);
    for (int r = 0; r < 5; ++r) {
      if (r != t) {
        ASSERT_EQ(before.row(r), after.row(r));
      }
    }
  }
}

TEST(ApaProperty, PredictedIntervalsAreValid) {
  std::mt19937_64 rng(32);
  LocalizationHeads heads("h", 4);
  heads.init(rng);
  const auto out = heads.forward(random_matrix(20, 4, rng, 4.0), nullptr);
  for (int t = 0; t < 20; ++t) ASSERT_LT(t - out.d_start(t), t + out.d_end(t));
}
