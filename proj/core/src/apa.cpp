#include "pda/apa.hpp"

#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

CrossAttention::CrossAttention(const std::string& name, int dim, int heads)
    : attn(name, dim, heads, /*output_projection=*/false) {}

void CrossAttention::init(std::mt19937_64& rng) { attn.init(rng); }

Matrix CrossAttention::forward(const Matrix& visual, const Matrix& bank,
                               nn::AttentionCache* cache) const {
  if (bank.rows() == 0) throw std::invalid_argument("cross-attention over an empty class bank");
  if (bank.cols() != visual.cols()) throw std::invalid_argument("cross-attention width mismatch");
  Matrix out = attn.forward(visual, bank, cache);
  if (residual) out += visual;
  return out;
}

std::pair<Matrix, Matrix> CrossAttention::backward(const nn::AttentionCache& cache,
                                                   const Matrix& dout) {
  auto [dvisual, dbank] = attn.backward(cache, dout);
  if (residual) dvisual += dout;
  return {std::move(dvisual), std::move(dbank)};
}

Matrix classify_phase(const Matrix& refined, const Matrix& bank) {
  if (refined.cols() != bank.cols()) {
    throw std::invalid_argument("classification width mismatch: " +
                                std::to_string(refined.cols()) + " vs " +
                                std::to_string(bank.cols()));
  }
  return refined * bank.transpose();
}

PhaseWeights weights_from_logits(const Vector& logits, WeightMode mode) {
  if (!all_finite(logits)) throw NumericError("non-finite phase-weight logits");
  if (mode == WeightMode::Softmax) return PhaseWeights{softmax(logits)};
  return PhaseWeights{logits.unaryExpr([](double z) { return sigmoid(z); })};
}

// ---------------------------------------------------------------------------
// WeightingNetwork

WeightingNetwork::WeightingNetwork(const std::string& name, int dim, int n_phases, int heads,
                                   int hidden)
    : phase_embeddings(name + ".phase_embeddings", n_phases, dim),
      attn(name + ".attn", dim, heads, /*output_projection=*/true),
      head(name + ".head", {dim, hidden, 1}) {}

void WeightingNetwork::init(std::mt19937_64& rng) {
  nn::normal_fill(phase_embeddings.value, 0.02, rng);
  attn.init(rng);
  head.init(rng);
  // Start from uniform weights so the network only departs from plain
  // averaging where the data supports it.
  head.layers.back().weight.value.setZero();
}

PhaseWeights WeightingNetwork::forward(const Matrix& token_base, WeightMode mode,
                                       WeightingCache* cache) const {
  if (token_base.rows() != phase_embeddings.value.rows() ||
      token_base.cols() != phase_embeddings.value.cols()) {
    throw std::invalid_argument("weighting network token shape mismatch");
  }
  if (!all_finite(token_base)) throw NumericError("non-finite pooled feature in weighting network");
  Matrix tokens = token_base + phase_embeddings.value;
  nn::AttentionCache ac;
  Matrix mixed = tokens + attn.forward(tokens, tokens, cache ? &ac : nullptr);
  nn::MlpCache hc;
  const Matrix logit_col = head.forward(mixed, cache ? &hc : nullptr);
  Vector logits = logit_col.col(0);
  PhaseWeights w = weights_from_logits(logits, mode);
  if (cache) {
    cache->tokens = std::move(tokens);
    cache->attn = std::move(ac);
    cache->mixed = std::move(mixed);
    cache->head = std::move(hc);
    cache->logits = std::move(logits);
    cache->weights = w.weights;
  }
  return w;
}

Matrix WeightingNetwork::backward(const WeightingCache& cache, const Vector& dweights,
                                  WeightMode mode) {
  const Vector& w = cache.weights;
  Vector dlogits;
  if (mode == WeightMode::Softmax) {
    dlogits = (w.array() * (dweights.array() - w.dot(dweights))).matrix();
  } else {
    dlogits = (dweights.array() * w.array() * (1.0 - w.array())).matrix();
  }
  const Matrix dlogit_col = dlogits;  // n x 1
  Matrix dmixed = head.backward(cache.head, dlogit_col);
  auto [dq, dctx] = attn.backward(cache.attn, dmixed);
  Matrix dtokens = dmixed + dq + dctx;
  phase_embeddings.grad += dtokens;
  return dtokens;
}

void WeightingNetwork::collect(nn::ParamList& out) {
  out.push_back(&phase_embeddings);
  attn.collect(out);
  head.collect(out);
}

Matrix replicate_pooled(const Matrix& visual, int n) {
  const RowVector pooled = visual.colwise().mean();
  return pooled.replicate(n, 1);
}

Matrix aggregate_scores(const PhaseSet& phases, const std::map<Phase, PhaseClassScores>& per_phase,
                        const PhaseWeights& w) {
  if (static_cast<std::size_t>(w.weights.size()) != phases.size()) {
    throw std::invalid_argument("one weight per phase required");
  }
  Matrix out;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const auto it = per_phase.find(phases[i]);
    if (it == per_phase.end()) {
      throw std::invalid_argument("missing scores for phase '" +
                                  std::string(phase_tag(phases[i])) + "'");
    }
    const Matrix& s = it->second.scores;
    if (i == 0) {
      out = w.weights(0) * s;
    } else {
      if (s.rows() != out.rows() || s.cols() != out.cols()) {
        throw std::invalid_argument("phase score shapes disagree");
      }
      out += w.weights(static_cast<Eigen::Index>(i)) * s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FusionMlp

FusionMlp::FusionMlp(const std::string& name, int dim, int n_phases, int hidden)
    : mlp(name, {dim * n_phases, hidden, hidden, dim}), dim_(dim), n_phases_(n_phases) {}

Matrix FusionMlp::forward(const std::vector<Matrix>& per_phase, nn::MlpCache* cache) const {
  if (static_cast<int>(per_phase.size()) != n_phases_) {
    throw std::invalid_argument("fusion expects " + std::to_string(n_phases_) + " branches");
  }
  const auto T = per_phase.front().rows();
  Matrix cat(T, static_cast<Eigen::Index>(dim_) * n_phases_);
  for (int p = 0; p < n_phases_; ++p) {
    if (per_phase[p].rows() != T || per_phase[p].cols() != dim_) {
      throw std::invalid_argument("fusion branch shapes disagree");
    }
    cat.middleCols(static_cast<Eigen::Index>(p) * dim_, dim_) = per_phase[p];
  }
  return mlp.forward(cat, cache);
}

std::vector<Matrix> FusionMlp::backward(const nn::MlpCache& cache, const Matrix& dout) {
  const Matrix dcat = mlp.backward(cache, dout);
  std::vector<Matrix> out;
  out.reserve(n_phases_);
  for (int p = 0; p < n_phases_; ++p) {
    out.emplace_back(dcat.middleCols(static_cast<Eigen::Index>(p) * dim_, dim_));
  }
  return out;
}

// ---------------------------------------------------------------------------
// LocalizationHeads

LocalizationHeads::LocalizationHeads(const std::string& name, int dim)
    : foreground(name + ".foreground", dim, 1), regression(name + ".regression", dim, 2) {}

void LocalizationHeads::init(std::mt19937_64& rng) {
  foreground.init(rng);
  regression.init(rng);
}

LocalizationOutput LocalizationHeads::forward(const Matrix& fused, HeadsCache* cache) const {
  const Matrix fg = foreground.forward(fused);
  const Matrix reg = regression.forward(fused);
  LocalizationOutput out;
  out.fg_prob = fg.col(0).unaryExpr([](double z) { return sigmoid(z); });
  out.d_start = reg.col(0).unaryExpr([](double z) { return softplus(z) + kDistanceEpsilon; });
  out.d_end = reg.col(1).unaryExpr([](double z) { return softplus(z) + kDistanceEpsilon; });
  if (!all_finite(out.fg_prob) || !all_finite(out.d_start) || !all_finite(out.d_end)) {
    throw NumericError("non-finite localization outputs");
  }
  if (cache) {
    cache->input = fused;
    cache->reg_start_logit = reg.col(0);
    cache->reg_end_logit = reg.col(1);
  }
  return out;
}

Matrix LocalizationHeads::backward(const HeadsCache& cache, const LocalizationOutput& out,
                                   const Vector& dfg_prob, const Vector& dd_start,
                                   const Vector& dd_end) {
  const auto T = cache.input.rows();
  Matrix dfg(T, 1);
  dfg.col(0) = (dfg_prob.array() * out.fg_prob.array() * (1.0 - out.fg_prob.array())).matrix();
  Matrix dreg(T, 2);
  for (Eigen::Index t = 0; t < T; ++t) {
    dreg(t, 0) = dd_start(t) * sigmoid(cache.reg_start_logit(t));
    dreg(t, 1) = dd_end(t) * sigmoid(cache.reg_end_logit(t));
  }
  Matrix dinput = foreground.backward(cache.input, dfg);
  dinput += regression.backward(cache.input, dreg);
  return dinput;
}

void LocalizationHeads::collect(nn::ParamList& out) {
  foreground.collect(out);
  regression.collect(out);
}

}  // namespace pda
