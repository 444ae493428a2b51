#pragma once

#include <string>
#include <vector>

#include "pda/nn.hpp"

namespace pda {

/// Snippet features of one video, T x D_in.
struct FeatureSequence {
  std::string video_id;
  Matrix features;
  int snippet_stride = 1;  // frames per snippet

  Eigen::Index length() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }
  /// Throws DataError unless T >= 1, all entries finite and stride > 0.
  void validate() const;
};

struct BackboneConfig {
  int d_in = 32;
  int d_model = 32;
  int layers = 2;
  int heads = 2;
  int ffn_hidden = 64;
  int max_len = 256;  // size of the learned positional table

  static BackboneConfig desk(int d_in);
  /// 6 layers, width 512, 8 heads.
  static BackboneConfig full(int d_in);
};

struct EncoderLayerCache {
  nn::LayerNormCache ln1;
  nn::AttentionCache attn;
  nn::LayerNormCache ln2;
  nn::MlpCache ffn;
};

struct BackboneCache {
  Matrix input;
  std::vector<EncoderLayerCache> layers;
};

/// Pre-norm residual block: x + MHSA(LN(x)), then x + FFN(LN(x)).
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(const std::string& name, int dim, int heads, int ffn_hidden);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x, EncoderLayerCache* cache) const;
  Matrix backward(const EncoderLayerCache& cache, const Matrix& dy);
  void collect(nn::ParamList& out);

  nn::LayerNorm ln1;
  nn::MultiHeadAttention attn;
  nn::LayerNorm ln2;
  nn::Mlp ffn;
};

/// Input projection, learned absolute positions and a stack of encoder layers.
class Backbone {
 public:
  Backbone() = default;
  explicit Backbone(const BackboneConfig& cfg);

  void init(std::mt19937_64& rng);

  /// Per-timestep affine map D_in -> D.
  Matrix project_input(const Matrix& x) const;
  /// Adds positional encodings and runs the layer stack on already projected
  /// features. Throws NumericError naming the first layer with non-finite output.
  Matrix encode_temporal(const Matrix& projected, BackboneCache* cache) const;
  Matrix forward(const Matrix& x, BackboneCache* cache) const;
  /// Accumulates parameter gradients; returns d(input).
  Matrix backward(const BackboneCache& cache, const Matrix& dout);
  void collect(nn::ParamList& out);

  const BackboneConfig& config() const { return cfg_; }

  nn::Linear input_proj;
  nn::Param positions;  // max_len x D
  std::vector<EncoderLayer> layers;

 private:
  BackboneConfig cfg_;
};

}  // namespace pda
