#pragma once

// Forward and hand-derived backward kernels for the fixed layer types used by
// the text encoder, the denoiser and the adapters. Rows are tokens.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "compbind/errors.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/numkit/tensor.hpp"

namespace compbind::nn {

// Named parameter handles, in a fixed traversal order. Param structs expose
// `template <class F> void visit(F&& f, const std::string& prefix)` calling
// f(name, matrix) for every parameter; these helpers flatten that.
template <typename S>
using NamedParams = std::vector<std::pair<std::string, Mat<S>*>>;

template <typename P>
auto collect(P& params) {
  using S = typename P::Scalar;
  NamedParams<S> out;
  params.visit([&](const std::string& name, Mat<S>& m) { out.emplace_back(name, &m); }, "");
  return out;
}

template <typename P>
auto param_ptrs(P& params) {
  using S = typename P::Scalar;
  std::vector<Mat<S>*> out;
  params.visit([&](const std::string&, Mat<S>& m) { out.push_back(&m); }, "");
  return out;
}

template <typename P>
auto const_param_ptrs(P& params) {
  using S = typename P::Scalar;
  std::vector<const Mat<S>*> out;
  params.visit([&](const std::string&, Mat<S>& m) { out.push_back(&m); }, "");
  return out;
}

// A zero-filled copy with the same shapes (used as a gradient accumulator).
template <typename P>
P zeros_like(const P& params) {
  using S = typename P::Scalar;
  P out = params;
  out.visit([](const std::string&, Mat<S>& m) { m.setZero(); }, "");
  return out;
}

template <typename P>
void scale_all(P& params, typename P::Scalar factor) {
  using S = typename P::Scalar;
  params.visit([&](const std::string&, Mat<S>& m) { m *= factor; }, "");
}

template <typename To, typename P>
auto cast_params(const P& params) {
  return params.template cast<To>();
}

template <typename S>
void fill_normal(Mat<S>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal() * stddev);
}

// ---------------------------------------------------------------- Linear

template <typename S>
struct Linear {
  using Scalar = S;
  Mat<S> w;  // in x out
  Mat<S> b;  // 1 x out

  static Linear init(int in, int out, Rng& rng, double stddev) {
    Linear l;
    l.w.resize(in, out);
    fill_normal(l.w, rng, stddev);
    l.b = Mat<S>::Zero(1, out);
    return l;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "w", w);
    f(prefix + "b", b);
  }

  template <typename To>
  Linear<To> cast() const {
    return {w.template cast<To>(), b.template cast<To>()};
  }

  Mat<S> forward(const Mat<S>& x) const {
    Mat<S> y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }

  // Accumulates into `grad`; returns dx.
  Mat<S> backward(const Mat<S>& x, const Mat<S>& dy, Linear& grad) const {
    grad.w.noalias() += x.transpose() * dy;
    grad.b += dy.colwise().sum();
    return dy * w.transpose();
  }
};

// ---------------------------------------------------------------- LayerNorm

template <typename S>
struct LayerNorm {
  using Scalar = S;
  Mat<S> gamma;  // 1 x d
  Mat<S> beta;   // 1 x d
  static constexpr double kEps = 1e-5;

  static LayerNorm init(int d) { return {Mat<S>::Ones(1, d), Mat<S>::Zero(1, d)}; }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }

  template <typename To>
  LayerNorm<To> cast() const {
    return {gamma.template cast<To>(), beta.template cast<To>()};
  }

  struct Cache {
    Mat<S> xhat;
    Mat<S> rstd;  // n x 1
  };

  Mat<S> forward(const Mat<S>& x, Cache* cache = nullptr) const {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    Mat<S> xhat(n, d);
    Mat<S> rstd(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const S mean = x.row(i).mean();
      const auto centered = x.row(i).array() - mean;
      const S var = centered.square().mean();
      const S r = S(1) / std::sqrt(var + static_cast<S>(kEps));
      xhat.row(i) = centered * r;
      rstd(i, 0) = r;
    }
    Mat<S> y = (xhat.array().rowwise() * gamma.row(0).array()).matrix();
    y.rowwise() += beta.row(0);
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->rstd = std::move(rstd);
    }
    return y;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, LayerNorm& grad) const {
    grad.gamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    grad.beta += dy.colwise().sum();
    const Eigen::Index d = dy.cols();
    Mat<S> dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
    Mat<S> dx(dy.rows(), d);
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const S mean_dxhat = dxhat.row(i).mean();
      const S mean_dxhat_xhat = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
      dx.row(i) = c.rstd(i, 0) *
                  (dxhat.row(i).array() - mean_dxhat - c.xhat.row(i).array() * mean_dxhat_xhat)
                      .matrix();
    }
    return dx;
  }
};

// ---------------------------------------------------------------- GELU (tanh form)

template <typename S>
Mat<S> gelu(const Mat<S>& x) {
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S c = static_cast<S>(0.044715);
  return x.unaryExpr([k, c](S v) {
    return S(0.5) * v * (S(1) + std::tanh(k * (v + c * v * v * v)));
  });
}

template <typename S>
Mat<S> gelu_backward(const Mat<S>& x, const Mat<S>& dy) {
  const S k = static_cast<S>(0.7978845608028654);
  const S c = static_cast<S>(0.044715);
  Mat<S> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    const S u = k * (v + c * v * v * v);
    const S th = std::tanh(u);
    const S du = k * (S(1) + S(3) * c * v * v);
    const S d = S(0.5) * (S(1) + th) + S(0.5) * v * (S(1) - th * th) * du;
    dx.data()[i] = dy.data()[i] * d;
  }
  return dx;
}

// ---------------------------------------------------------------- attention core
//
// q: nq x (H*dh), k, v: nk x (H*dh). Head h uses columns [h*dh, (h+1)*dh).
// logits_ij = <q_i, k_j> / sqrt(dh) + bias_ij, probabilities per head row-wise.
// Causal masking drops j > i entirely (exact zero weights).

template <typename S>
struct AttentionCore {
  std::vector<Mat<S>> probs;  // per head, nq x nk
  Mat<S> mixed;               // nq x (H*dh), concatenated head outputs
};

template <typename S>
AttentionCore<S> attention_core_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v,
                                        int heads, bool causal, const Mat<S>* bias) {
  const Eigen::Index nq = q.rows();
  const Eigen::Index nk = k.rows();
  const Eigen::Index dh = q.cols() / heads;
  if (causal && nq != nk) throw ValidationError("causal attention needs a square score matrix");
  if (bias && (bias->rows() != nq || bias->cols() != nk)) {
    throw ValidationError("attention bias has the wrong shape");
  }
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  AttentionCore<S> out;
  out.mixed.resize(nq, q.cols());
  out.probs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.middleCols(h * dh, dh);
    const auto kh = k.middleCols(h * dh, dh);
    Mat<S> p = (qh * kh.transpose()) * scale;
    if (bias) p += *bias;
    for (Eigen::Index i = 0; i < nq; ++i) {
      const Eigen::Index limit = causal ? i + 1 : nk;
      S mx = -std::numeric_limits<S>::infinity();
      for (Eigen::Index j = 0; j < limit; ++j) mx = std::max(mx, p(i, j));
      S sum = 0;
      for (Eigen::Index j = 0; j < limit; ++j) {
        p(i, j) = std::exp(p(i, j) - mx);
        sum += p(i, j);
      }
      for (Eigen::Index j = 0; j < limit; ++j) p(i, j) /= sum;
      for (Eigen::Index j = limit; j < nk; ++j) p(i, j) = 0;
    }
    out.mixed.middleCols(h * dh, dh).noalias() = p * v.middleCols(h * dh, dh);
    out.probs.push_back(std::move(p));
  }
  return out;
}

template <typename S>
void attention_core_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v,
                             const AttentionCore<S>& core, int heads, const Mat<S>& dmixed,
                             Mat<S>& dq, Mat<S>& dk, Mat<S>& dv) {
  const Eigen::Index dh = q.cols() / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  dq = Mat<S>::Zero(q.rows(), q.cols());
  dk = Mat<S>::Zero(k.rows(), k.cols());
  dv = Mat<S>::Zero(v.rows(), v.cols());
  for (int h = 0; h < heads; ++h) {
    const Mat<S>& p = core.probs[h];
    const auto dout = dmixed.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() = p.transpose() * dout;
    Mat<S> dp = dout * v.middleCols(h * dh, dh).transpose();
    // softmax backward: dl = p * (dp - sum_j dp_j p_j); masked entries have p = 0.
    Mat<S> dl(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      const S dot = (dp.row(i).array() * p.row(i).array()).sum();
      dl.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
    }
    dl *= scale;
    dq.middleCols(h * dh, dh).noalias() = dl * k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dl.transpose() * q.middleCols(h * dh, dh);
  }
}

// ---------------------------------------------------------------- projection-only attention params
//
// No biases anywhere in the attention block, so the block output decomposes
// exactly into per-source-token summands.

template <typename S>
struct AttentionParams {
  using Scalar = S;
  Mat<S> wq;  // d_q x (H*dh)
  Mat<S> wk;  // d_kv x (H*dh)
  Mat<S> wv;  // d_kv x (H*dh)
  Mat<S> wo;  // (H*dh) x d_out

  static AttentionParams init(int d_q, int d_kv, int inner, int d_out, Rng& rng) {
    AttentionParams a;
    a.wq.resize(d_q, inner);
    a.wk.resize(d_kv, inner);
    a.wv.resize(d_kv, inner);
    a.wo.resize(inner, d_out);
    fill_normal(a.wq, rng, 1.0 / std::sqrt(static_cast<double>(d_q)));
    fill_normal(a.wk, rng, 1.0 / std::sqrt(static_cast<double>(d_kv)));
    fill_normal(a.wv, rng, 1.0 / std::sqrt(static_cast<double>(d_kv)));
    fill_normal(a.wo, rng, 0.5 / std::sqrt(static_cast<double>(inner)));
    return a;
  }

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "wq", wq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv);
    f(prefix + "wo", wo);
  }

  template <typename To>
  AttentionParams<To> cast() const {
    return {wq.template cast<To>(), wk.template cast<To>(), wv.template cast<To>(),
            wo.template cast<To>()};
  }
};

}  // namespace compbind::nn
