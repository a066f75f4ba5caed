#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "modalign/error.hpp"
#include "modalign/nn/tensor.hpp"
#include "modalign/util/rng.hpp"

// Layers act on T×d row-per-token matrices. Each forward has a matching
// backward that accumulates parameter gradients and returns the input
// gradient; the cache structs hold what backward needs.

namespace modalign::nn {

template <typename Scalar>
Mat<Scalar> xavier_uniform(Eigen::Index rows, Eigen::Index cols, util::Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.uniform(-limit, limit));
  return m;
}

template <typename Scalar>
Mat<Scalar> standard_normal(Eigen::Index rows, Eigen::Index cols, util::Rng& rng) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(rng.normal());
  return m;
}

// ---------------------------------------------------------------------------

/// y = x W + b with W in×out and b 1×out.
template <typename Scalar>
struct Linear {
  Param<Scalar> weight;
  Param<Scalar> bias;

  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, const std::string& name, util::Rng& rng)
      : weight(name + ".weight", xavier_uniform<Scalar>(in, out, rng)),
        bias(name + ".bias", Mat<Scalar>::Zero(1, out)) {}

  Eigen::Index in_features() const { return weight.value.rows(); }
  Eigen::Index out_features() const { return weight.value.cols(); }
  ParamList<Scalar> parameters() { return {&weight, &bias}; }
};

template <typename Scalar, typename Derived>
Mat<Scalar> linear(const Linear<Scalar>& layer, const Eigen::MatrixBase<Derived>& x) {
  if (x.cols() != layer.in_features()) throw ShapeError("linear: input width mismatch");
  Mat<Scalar> y = x * layer.weight.value;
  y.rowwise() += layer.bias.value.row(0);
  return y;
}

template <typename Scalar>
Mat<Scalar> linear_backward(Linear<Scalar>& layer, const Mat<Scalar>& x, const Mat<Scalar>& dy) {
  layer.weight.grad.noalias() += x.transpose() * dy;
  layer.bias.grad += dy.colwise().sum();
  return dy * layer.weight.value.transpose();
}

// ---------------------------------------------------------------------------

template <typename Scalar>
struct LayerNorm {
  Param<Scalar> gamma;
  Param<Scalar> beta;
  Scalar eps = Scalar(1e-5);

  LayerNorm() = default;
  LayerNorm(Eigen::Index d, const std::string& name)
      : gamma(name + ".gamma", Mat<Scalar>::Ones(1, d)), beta(name + ".beta", Mat<Scalar>::Zero(1, d)) {}

  ParamList<Scalar> parameters() { return {&gamma, &beta}; }
};

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> xhat;
  ColVec<Scalar> rstd;
};

template <typename Scalar>
Mat<Scalar> layer_norm(const LayerNorm<Scalar>& ln, const Mat<Scalar>& x, LayerNormCache<Scalar>* cache = nullptr) {
  const auto d = static_cast<Scalar>(x.cols());
  const ColVec<Scalar> mean = x.rowwise().mean();
  Mat<Scalar> centered = x.colwise() - mean;
  const ColVec<Scalar> var = centered.array().square().rowwise().sum() / d;
  const ColVec<Scalar> rstd = (var.array() + ln.eps).rsqrt();
  Mat<Scalar> xhat = centered.array().colwise() * rstd.array();
  Mat<Scalar> y = xhat.array().rowwise() * ln.gamma.value.row(0).array();
  y.rowwise() += ln.beta.value.row(0);
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(LayerNorm<Scalar>& ln, const LayerNormCache<Scalar>& cache, const Mat<Scalar>& dy) {
  ln.gamma.grad += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  ln.beta.grad += dy.colwise().sum();
  const Mat<Scalar> dxhat = dy.array().rowwise() * ln.gamma.value.row(0).array();
  const ColVec<Scalar> mean_dxhat = dxhat.rowwise().mean();
  const ColVec<Scalar> mean_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().mean();
  Mat<Scalar> dx = dxhat.colwise() - mean_dxhat;
  dx.array() -= cache.xhat.array().colwise() * mean_dxhat_xhat.array();
  return dx.array().colwise() * cache.rstd.array();
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation.

template <typename Scalar>
Mat<Scalar> gelu(const Mat<Scalar>& x) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  return x.unaryExpr([c](Scalar v) {
    return Scalar(0.5) * v * (Scalar(1) + std::tanh(c * (v + Scalar(0.044715) * v * v * v)));
  });
}

template <typename Scalar>
Mat<Scalar> gelu_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy) {
  const Scalar c = static_cast<Scalar>(std::sqrt(2.0 / std::numbers::pi));
  const Mat<Scalar> slope = x.unaryExpr([c](Scalar v) {
    const Scalar t = std::tanh(c * (v + Scalar(0.044715) * v * v * v));
    return Scalar(0.5) * (Scalar(1) + t) +
           Scalar(0.5) * v * (Scalar(1) - t * t) * c * (Scalar(1) + Scalar(3 * 0.044715) * v * v);
  });
  return dy.cwiseProduct(slope);
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& s) {
  Mat<Scalar> p = s.colwise() - s.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

template <typename Scalar>
struct MultiHeadAttention {
  Linear<Scalar> q, k, v, o;
  Eigen::Index heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(Eigen::Index d, Eigen::Index num_heads, const std::string& name, util::Rng& rng)
      : q(d, d, name + ".q", rng), k(d, d, name + ".k", rng), v(d, d, name + ".v", rng), o(d, d, name + ".o", rng),
        heads(num_heads) {
    if (num_heads <= 0 || d % num_heads != 0) throw ShapeError("attention: model width not divisible by heads");
  }

  Eigen::Index head_width() const { return q.out_features() / heads; }
  ParamList<Scalar> parameters() {
    ParamList<Scalar> out;
    for (auto* l : {&q, &k, &v, &o})
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }
};

template <typename Scalar>
struct AttentionCache {
  Mat<Scalar> x, q, k, v, context;
  /// Per-head attention weights, T×T, rows sum to one.
  std::vector<Mat<Scalar>> weights;
};

/// Self-attention over the rows of x; every row is a real token.
template <typename Scalar>
Mat<Scalar> attention(const MultiHeadAttention<Scalar>& mha, const Mat<Scalar>& x, AttentionCache<Scalar>* cache = nullptr) {
  const Eigen::Index dh = mha.head_width();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  Mat<Scalar> q = linear(mha.q, x), k = linear(mha.k, x), v = linear(mha.v, x);
  Mat<Scalar> context(x.rows(), q.cols());
  std::vector<Mat<Scalar>> weights;
  weights.reserve(static_cast<std::size_t>(mha.heads));
  for (Eigen::Index h = 0; h < mha.heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    Mat<Scalar> p = softmax_rows<Scalar>((qh * kh.transpose()) * scale);
    context.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
    weights.push_back(std::move(p));
  }
  Mat<Scalar> y = linear(mha.o, context);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->context = std::move(context);
    cache->weights = std::move(weights);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> attention_backward(MultiHeadAttention<Scalar>& mha, const AttentionCache<Scalar>& cache, const Mat<Scalar>& dy) {
  const Eigen::Index dh = mha.head_width();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Mat<Scalar> dcontext = linear_backward(mha.o, cache.context, dy);
  Mat<Scalar> dq(cache.q.rows(), cache.q.cols()), dk(dq.rows(), dq.cols()), dv(dq.rows(), dq.cols());
  for (Eigen::Index h = 0; h < mha.heads; ++h) {
    const Mat<Scalar>& p = cache.weights[static_cast<std::size_t>(h)];
    const auto dctx = dcontext.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dctx;
    const Mat<Scalar> dp = dctx * cache.v.middleCols(h * dh, dh).transpose();
    Mat<Scalar> ds = p.cwiseProduct(dp);
    const ColVec<Scalar> row_dot = ds.rowwise().sum();
    ds -= p.cwiseProduct(row_dot.replicate(1, p.cols()));
    ds *= scale;
    dq.middleCols(h * dh, dh).noalias() = ds * cache.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * cache.q.middleCols(h * dh, dh);
  }
  Mat<Scalar> dx = linear_backward(mha.q, cache.x, dq);
  dx += linear_backward(mha.k, cache.x, dk);
  dx += linear_backward(mha.v, cache.x, dv);
  return dx;
}

// ---------------------------------------------------------------------------

/// Pre-norm block: h = x + MHA(LN1(x)); y = h + FF2(gelu(FF1(LN2(h)))).
template <typename Scalar>
struct EncoderLayer {
  LayerNorm<Scalar> ln1;
  MultiHeadAttention<Scalar> attn;
  LayerNorm<Scalar> ln2;
  Linear<Scalar> ff1;
  Linear<Scalar> ff2;

  EncoderLayer() = default;
  EncoderLayer(Eigen::Index d, Eigen::Index heads, Eigen::Index ff, const std::string& name, util::Rng& rng)
      : ln1(d, name + ".ln1"), attn(d, heads, name + ".attn", rng), ln2(d, name + ".ln2"),
        ff1(d, ff, name + ".ff1", rng), ff2(ff, d, name + ".ff2", rng) {}

  ParamList<Scalar> parameters() {
    ParamList<Scalar> out = ln1.parameters();
    for (auto* p : attn.parameters()) out.push_back(p);
    for (auto* p : ln2.parameters()) out.push_back(p);
    for (auto* l : {&ff1, &ff2})
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }
};

template <typename Scalar>
struct EncoderCache {
  LayerNormCache<Scalar> ln1, ln2;
  AttentionCache<Scalar> attn;
  Mat<Scalar> normed2, hidden_pre;
};

template <typename Scalar>
Mat<Scalar> encoder_layer(const EncoderLayer<Scalar>& layer, const Mat<Scalar>& x, EncoderCache<Scalar>* cache = nullptr) {
  Mat<Scalar> a = layer_norm(layer.ln1, x, cache ? &cache->ln1 : nullptr);
  Mat<Scalar> h = x + attention(layer.attn, a, cache ? &cache->attn : nullptr);
  Mat<Scalar> b = layer_norm(layer.ln2, h, cache ? &cache->ln2 : nullptr);
  Mat<Scalar> pre = linear(layer.ff1, b);
  Mat<Scalar> y = h + linear(layer.ff2, gelu(pre));
  if (cache) {
    cache->normed2 = std::move(b);
    cache->hidden_pre = std::move(pre);
  }
  return y;
}

template <typename Scalar>
Mat<Scalar> encoder_layer_backward(EncoderLayer<Scalar>& layer, const EncoderCache<Scalar>& cache, const Mat<Scalar>& dy) {
  const Mat<Scalar> dg = linear_backward(layer.ff2, gelu(cache.hidden_pre), dy);
  const Mat<Scalar> dpre = gelu_backward(cache.hidden_pre, dg);
  const Mat<Scalar> db = linear_backward(layer.ff1, cache.normed2, dpre);
  const Mat<Scalar> dh = dy + layer_norm_backward(layer.ln2, cache.ln2, db);
  const Mat<Scalar> da = attention_backward(layer.attn, cache.attn, dh);
  return dh + layer_norm_backward(layer.ln1, cache.ln1, da);
}

// ---------------------------------------------------------------------------

/// Sinusoidal table: row p, column 2i = sin(p / 10000^(2i/d)), 2i+1 = cos.
template <typename Scalar>
Mat<Scalar> sinusoidal_positions(Eigen::Index length, Eigen::Index d) {
  Mat<Scalar> pe(length, d);
  for (Eigen::Index p = 0; p < length; ++p) {
    for (Eigen::Index j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(p) * freq;
      pe(p, j) = static_cast<Scalar>(j % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace modalign::nn
