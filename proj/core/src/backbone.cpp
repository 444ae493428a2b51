#include "pda/backbone.hpp"

#include <stdexcept>

#include "pda/errors.hpp"

namespace pda {

void FeatureSequence::validate() const {
  if (features.rows() < 1) throw DataError("feature sequence '" + video_id + "' is empty");
  if (features.cols() < 1) throw DataError("feature sequence '" + video_id + "' has no columns");
  if (!all_finite(features)) throw DataError("feature sequence '" + video_id + "' is not finite");
  if (snippet_stride <= 0) throw DataError("snippet stride must be positive");
}

BackboneConfig BackboneConfig::desk(int d_in) {
  return BackboneConfig{d_in, 32, 2, 2, 64, 256};
}

BackboneConfig BackboneConfig::full(int d_in) {
  return BackboneConfig{d_in, 512, 6, 8, 2048, 2304};
}

EncoderLayer::EncoderLayer(const std::string& name, int dim, int heads, int ffn_hidden)
    : ln1(name + ".ln1", dim),
      attn(name + ".attn", dim, heads, /*output_projection=*/true),
      ln2(name + ".ln2", dim),
      ffn(name + ".ffn", {dim, ffn_hidden, dim}) {}

void EncoderLayer::init(std::mt19937_64& rng) {
  attn.init(rng);
  ffn.init(rng);
}

Matrix EncoderLayer::forward(const Matrix& x, EncoderLayerCache* cache) const {
  const Matrix a_in = ln1.forward(x, cache ? &cache->ln1 : nullptr);
  Matrix h = x + attn.forward(a_in, a_in, cache ? &cache->attn : nullptr);
  const Matrix f_in = ln2.forward(h, cache ? &cache->ln2 : nullptr);
  h += ffn.forward(f_in, cache ? &cache->ffn : nullptr);
  return h;
}

Matrix EncoderLayer::backward(const EncoderLayerCache& cache, const Matrix& dy) {
  // y = h + ffn(ln2(h)), h = x + attn(ln1(x))
  Matrix dh = dy + ln2.backward(cache.ln2, ffn.backward(cache.ffn, dy));
  auto [dq, dctx] = attn.backward(cache.attn, dh);
  return dh + ln1.backward(cache.ln1, dq + dctx);
}

void EncoderLayer::collect(nn::ParamList& out) {
  ln1.collect(out);
  attn.collect(out);
  ln2.collect(out);
  ffn.collect(out);
}

Backbone::Backbone(const BackboneConfig& cfg)
    : input_proj("backbone.input", cfg.d_in, cfg.d_model),
      positions("backbone.positions", cfg.max_len, cfg.d_model),
      cfg_(cfg) {
  if (cfg.layers < 1) throw std::invalid_argument("backbone needs at least one layer");
  if (cfg.max_len < 1) throw std::invalid_argument("backbone max_len must be positive");
  for (int i = 0; i < cfg.layers; ++i) {
    layers.emplace_back("backbone.layer" + std::to_string(i), cfg.d_model, cfg.heads,
                        cfg.ffn_hidden);
  }
}

void Backbone::init(std::mt19937_64& rng) {
  input_proj.init(rng);
  nn::normal_fill(positions.value, 0.02, rng);
  for (auto& l : layers) l.init(rng);
}

Matrix Backbone::project_input(const Matrix& x) const {
  if (x.cols() != cfg_.d_in) {
    throw std::invalid_argument("backbone expects " + std::to_string(cfg_.d_in) +
                                " input features, got " + std::to_string(x.cols()));
  }
  return input_proj.forward(x);
}

Matrix Backbone::encode_temporal(const Matrix& projected, BackboneCache* cache) const {
  const auto T = projected.rows();
  if (T < 1) throw std::invalid_argument("empty sequence");
  if (T > cfg_.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(T) +
                                " exceeds positional table size " + std::to_string(cfg_.max_len));
  }
  if (projected.cols() != cfg_.d_model) throw std::invalid_argument("backbone width mismatch");
  Matrix h = projected + positions.value.topRows(T);
  if (cache) cache->layers.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h, cache ? &cache->layers[i] : nullptr);
    if (!all_finite(h)) {
      throw NumericError("non-finite activations in backbone layer " + std::to_string(i));
    }
  }
  return h;
}

Matrix Backbone::forward(const Matrix& x, BackboneCache* cache) const {
  if (cache) cache->input = x;
  return encode_temporal(project_input(x), cache);
}

Matrix Backbone::backward(const BackboneCache& cache, const Matrix& dout) {
  Matrix d = dout;
  for (std::size_t i = layers.size(); i-- > 0;) d = layers[i].backward(cache.layers[i], d);
  positions.grad.topRows(d.rows()) += d;
  return input_proj.backward(cache.input, d);
}

void Backbone::collect(nn::ParamList& out) {
  input_proj.collect(out);
  out.push_back(&positions);
  for (auto& l : layers) l.collect(out);
}

}  // namespace pda
