#pragma once

// Small layer library with hand-written backward passes. Every layer keeps its
// parameters as `Param` (value + accumulated gradient); forward passes are
// const and write whatever backward needs into an explicit cache struct.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pda/tensor.hpp"

namespace pda::nn {

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
};

using ParamList = std::vector<Param*>;

/// Xavier/Glorot uniform fill.
void xavier_uniform(Matrix& w, std::mt19937_64& rng);
void normal_fill(Matrix& w, double stddev, std::mt19937_64& rng);

/// y = x W + b, W stored in x out.
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in, int out);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x) const;
  /// Accumulates dW, db and returns dx.
  Matrix backward(const Matrix& x, const Matrix& dy);
  void collect(ParamList& out);

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  Param weight;
  Param bias;
};

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim, double eps = 1e-5);

  Matrix forward(const Matrix& x, LayerNormCache* cache) const;
  Matrix backward(const LayerNormCache& cache, const Matrix& dy);
  void collect(ParamList& out);

  Param gain;
  Param shift;
  double eps = 1e-5;
};

// tanh-approximated GELU.
Matrix gelu(const Matrix& x);
Matrix gelu_backward(const Matrix& x, const Matrix& dy);

struct AttentionCache {
  Matrix query_in;
  Matrix context_in;
  Matrix q, k, v;
  std::vector<Matrix> probs;  // one T x S matrix per head
  Matrix merged;              // concatenated head outputs (pre output projection)
};

/// Scaled dot-product attention with `heads` heads, queries from `query`, keys
/// and values from `context`. Scale is 1/sqrt(head_dim). The output projection
/// is optional (the text-infusing cross-attention has none).
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, int dim, int heads, bool output_projection);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& query, const Matrix& context, AttentionCache* cache) const;
  /// Returns {dquery, dcontext}.
  std::pair<Matrix, Matrix> backward(const AttentionCache& cache, const Matrix& dout);
  void collect(ParamList& out);

  int dim() const { return dim_; }
  int heads() const { return heads_; }
  bool has_output_projection() const { return has_out_; }

  Linear q_proj, k_proj, v_proj, out_proj;

 private:
  int dim_ = 0;
  int heads_ = 1;
  bool has_out_ = false;
};

struct MlpCache {
  std::vector<Matrix> inputs;  // input of each linear layer
  std::vector<Matrix> pre;     // pre-activation of each hidden layer
};

/// Stack of Linear layers with GELU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<int>& widths);

  void init(std::mt19937_64& rng);
  Matrix forward(const Matrix& x, MlpCache* cache) const;
  Matrix backward(const MlpCache& cache, const Matrix& dy);
  void collect(ParamList& out);

  std::vector<Linear> layers;
};

/// Sum of squared gradients over all params, sqrt.
double global_grad_norm(const ParamList& params);
void zero_grads(const ParamList& params);

}  // namespace pda::nn
