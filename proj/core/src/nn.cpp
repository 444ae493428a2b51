#include "pda/nn.hpp"

#include <stdexcept>

namespace pda::nn {

void xavier_uniform(Matrix& w, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

void normal_fill(Matrix& w, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(const std::string& name, int in, int out)
    : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("Linear " + name + ": non-positive size");
}

void Linear::init(std::mt19937_64& rng) {
  xavier_uniform(weight.value, rng);
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.rows()) {
    throw std::invalid_argument("Linear " + weight.name + ": expected " +
                                std::to_string(weight.value.rows()) + " input features, got " +
                                std::to_string(x.cols()));
  }
  Matrix y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& dy) {
  weight.grad.noalias() += x.transpose() * dy;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value.transpose();
}

void Linear::collect(ParamList& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

// ---------------------------------------------------------------------------
// LayerNorm

LayerNorm::LayerNorm(const std::string& name, int dim, double eps_)
    : gain(name + ".gain", 1, dim), shift(name + ".shift", 1, dim), eps(eps_) {
  gain.value.setOnes();
}

Matrix LayerNorm::forward(const Matrix& x, LayerNormCache* cache) const {
  const auto n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).sum() / n;
    const double var = (x.row(r).array() - mean).square().sum() / n;
    rstd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Matrix y = xhat.array().rowwise() * gain.value.row(0).array();
  y.rowwise() += shift.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

Matrix LayerNorm::backward(const LayerNormCache& cache, const Matrix& dy) {
  const auto n = static_cast<double>(dy.cols());
  gain.grad.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  shift.grad.row(0) += dy.colwise().sum();
  Matrix dxhat = dy.array().rowwise() * gain.value.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double sum_d = dxhat.row(r).sum();
    const double sum_dx = dxhat.row(r).dot(cache.xhat.row(r));
    dx.row(r) = (cache.rstd(r) / n) *
                (n * dxhat.row(r).array() - sum_d - cache.xhat.row(r).array() * sum_dx);
  }
  return dx;
}

void LayerNorm::collect(ParamList& out) {
  out.push_back(&gain);
  out.push_back(&shift);
}

// ---------------------------------------------------------------------------
// GELU

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Matrix gelu(const Matrix& x) {
  return x.unaryExpr([](double v) {
    return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  });
}

Matrix gelu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    const double u = kGeluC * (v + kGeluA * v * v * v);
    const double th = std::tanh(u);
    const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
    dx.data()[i] = dy.data()[i] * d;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MultiHeadAttention

MultiHeadAttention::MultiHeadAttention(const std::string& name, int dim, int heads,
                                       bool output_projection)
    : q_proj(name + ".q", dim, dim),
      k_proj(name + ".k", dim, dim),
      v_proj(name + ".v", dim, dim),
      dim_(dim),
      heads_(heads),
      has_out_(output_projection) {
  if (heads <= 0 || dim % heads != 0) {
    throw std::invalid_argument("attention " + name + ": head count " + std::to_string(heads) +
                                " does not divide width " + std::to_string(dim));
  }
  if (has_out_) out_proj = Linear(name + ".out", dim, dim);
}

void MultiHeadAttention::init(std::mt19937_64& rng) {
  q_proj.init(rng);
  k_proj.init(rng);
  v_proj.init(rng);
  if (has_out_) out_proj.init(rng);
}

Matrix MultiHeadAttention::forward(const Matrix& query, const Matrix& context,
                                   AttentionCache* cache) const {
  if (context.rows() == 0) throw std::invalid_argument("attention over an empty context");
  if (query.cols() != dim_ || context.cols() != dim_) {
    throw std::invalid_argument("attention width mismatch");
  }
  const int hd = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix q = q_proj.forward(query);
  Matrix k = k_proj.forward(context);
  Matrix v = v_proj.forward(context);
  Matrix merged(query.rows(), dim_);
  std::vector<Matrix> probs;
  probs.reserve(heads_);
  for (int h = 0; h < heads_; ++h) {
    const auto qh = q.middleCols(h * hd, hd);
    const auto kh = k.middleCols(h * hd, hd);
    const auto vh = v.middleCols(h * hd, hd);
    Matrix a = softmax_rows((qh * kh.transpose()) * scale);
    merged.middleCols(h * hd, hd) = a * vh;
    probs.push_back(std::move(a));
  }
  Matrix out = has_out_ ? out_proj.forward(merged) : merged;
  if (cache) {
    cache->query_in = query;
    cache->context_in = context;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->merged = std::move(merged);
  }
  return out;
}

std::pair<Matrix, Matrix> MultiHeadAttention::backward(const AttentionCache& c, const Matrix& dout) {
  const int hd = dim_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix dmerged = has_out_ ? out_proj.backward(c.merged, dout) : dout;
  Matrix dq(c.q.rows(), dim_), dk(c.k.rows(), dim_), dv(c.v.rows(), dim_);
  for (int h = 0; h < heads_; ++h) {
    const auto qh = c.q.middleCols(h * hd, hd);
    const auto kh = c.k.middleCols(h * hd, hd);
    const auto vh = c.v.middleCols(h * hd, hd);
    const Matrix& a = c.probs[h];
    const Matrix dh = dmerged.middleCols(h * hd, hd);
    dv.middleCols(h * hd, hd) = a.transpose() * dh;
    const Matrix da = dh * vh.transpose();
    const Matrix ds = softmax_rows_backward(a, da) * scale;
    dq.middleCols(h * hd, hd) = ds * kh;
    dk.middleCols(h * hd, hd) = ds.transpose() * qh;
  }
  Matrix dquery = q_proj.backward(c.query_in, dq);
  Matrix dcontext = k_proj.backward(c.context_in, dk);
  dcontext += v_proj.backward(c.context_in, dv);
  return {std::move(dquery), std::move(dcontext)};
}

void MultiHeadAttention::collect(ParamList& out) {
  q_proj.collect(out);
  k_proj.collect(out);
  v_proj.collect(out);
  if (has_out_) out_proj.collect(out);
}

// ---------------------------------------------------------------------------
// Mlp

Mlp::Mlp(const std::string& name, const std::vector<int>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp " + name + " needs at least 2 widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(name + "." + std::to_string(i), widths[i], widths[i + 1]);
  }
}

void Mlp::init(std::mt19937_64& rng) {
  for (auto& l : layers) l.init(rng);
}

Matrix Mlp::forward(const Matrix& x, MlpCache* cache) const {
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Matrix h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    Matrix z = layers[i].forward(h);
    if (i + 1 == layers.size()) return z;
    if (cache) cache->pre.push_back(z);
    h = gelu(z);
  }
  return h;
}

Matrix Mlp::backward(const MlpCache& cache, const Matrix& dy) {
  Matrix d = dy;
  for (std::size_t i = layers.size(); i-- > 0;) {
    d = layers[i].backward(cache.inputs[i], d);
    if (i > 0) d = gelu_backward(cache.pre[i - 1], d);
  }
  return d;
}

void Mlp::collect(ParamList& out) {
  for (auto& l : layers) l.collect(out);
}

double global_grad_norm(const ParamList& params) {
  double sq = 0.0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

}  // namespace pda::nn
