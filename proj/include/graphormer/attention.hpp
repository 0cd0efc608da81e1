// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <vector>

#include "graphormer/autodiff.hpp"
#include "graphormer/encoding.hpp"

namespace graphormer {

enum class Activation { kGelu, kRelu };

template <typename Scalar>
struct LayerParams {
  using Mat = ad::Matrix<Scalar>;
  int num_heads = 1;
  Mat w_q, w_k, w_v, w_o;  // [d x d]; columns h * d_head .. (h + 1) * d_head belong to head h
  std::optional<Mat> q_bias, k_bias;  // [1 x d], absent unless a construction needs them
  Mat ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Mat ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  int dim() const { return static_cast<int>(w_q.rows()); }
  int head_dim() const { return dim() / num_heads; }

  static LayerParams zeros(int d, int heads) {
    if (heads <= 0 || d % heads != 0) throw Error("hidden size must be divisible by the head count");
    LayerParams p;
    p.num_heads = heads;
    p.w_q = p.w_k = p.w_v = p.w_o = Mat::Zero(d, d);
    p.ffn_w1 = p.ffn_w2 = Mat::Zero(d, d);
    p.ffn_b1 = p.ffn_b2 = Mat::Zero(1, d);
    p.ln1_gamma = p.ln2_gamma = Mat::Ones(1, d);
    p.ln1_beta = p.ln2_beta = Mat::Zero(1, d);
    return p;
  }

  /// Truncated normal (std 0.02) projections, zero biases, identity LN.
  static LayerParams init(int d, int heads, Rng& rng) {
    auto p = zeros(d, heads);
    for (Mat* m : {&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.ffn_w1, &p.ffn_w2}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = Scalar(rng.truncated_normal(0.02));
    }
    return p;
  }
};

template <typename Scalar>
struct LayerVars {
  using V = ad::Var<Scalar>;
  int num_heads = 1;
  V w_q, w_k, w_v, w_o;
  std::optional<V> q_bias, k_bias;
  V ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  V ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  static LayerVars on(ad::Tape<Scalar>& tape, const LayerParams<Scalar>& p, bool requires_grad = true) {
    LayerVars v;
    v.num_heads = p.num_heads;
    auto leaf = [&](const ad::Matrix<Scalar>& m) { return tape.leaf(m, requires_grad); };
    v.w_q = leaf(p.w_q);
    v.w_k = leaf(p.w_k);
    v.w_v = leaf(p.w_v);
    v.w_o = leaf(p.w_o);
    if (p.q_bias) v.q_bias = leaf(*p.q_bias);
    if (p.k_bias) v.k_bias = leaf(*p.k_bias);
    v.ffn_w1 = leaf(p.ffn_w1);
    v.ffn_b1 = leaf(p.ffn_b1);
    v.ffn_w2 = leaf(p.ffn_w2);
    v.ffn_b2 = leaf(p.ffn_b2);
    v.ln1_gamma = leaf(p.ln1_gamma);
    v.ln1_beta = leaf(p.ln1_beta);
    v.ln2_gamma = leaf(p.ln2_gamma);
    v.ln2_beta = leaf(p.ln2_beta);
    return v;
  }
};

struct LayerOptions {
  double dropout = 0.0;            // MHA and FFN outputs
  double attention_dropout = 0.0;  // attention probabilities
  bool training = false;
  Activation activation = Activation::kGelu;
};

/// Post-softmax attention weights captured during a forward pass,
/// [(B * H * N) x N] in BiasLayout order.
template <typename Scalar>
struct AttentionProbe {
  ad::Matrix<Scalar> weights;
};

/// Per graph and head: softmax(Q_h K_h^T / sqrt(d_head) + bias_h) V_h, heads
/// concatenated. q, k, v are [(B * N) x d].
template <typename Scalar>
ad::Var<Scalar> attention_core(ad::Var<Scalar> q, ad::Var<Scalar> k, ad::Var<Scalar> v, ad::Var<Scalar> bias,
                               const BiasLayout& layout, double attention_dropout, bool training, Rng& rng,
                               AttentionProbe<Scalar>* probe = nullptr) {
  using Mat = ad::Matrix<Scalar>;
  const int B = layout.num_graphs, N = layout.num_nodes, H = layout.num_heads;
  const Eigen::Index d = q.cols();
  if (d % H != 0) throw Error("attention: width not divisible by head count");
  if (q.rows() != static_cast<Eigen::Index>(B) * N || k.rows() != q.rows() || v.rows() != q.rows() ||
      k.cols() != d || v.cols() != d) {
    throw Error("attention: q/k/v shape mismatch");
  }
  if (bias.rows() != layout.rows() || bias.cols() != N) throw Error("attention: bias shape mismatch");
  if (attention_dropout < 0.0 || attention_dropout >= 1.0) throw Error("attention: dropout rate must be in [0, 1)");
  const Eigen::Index dh = d / H;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  const bool drop = training && attention_dropout > 0.0;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - attention_dropout));

  const auto& qv = q.value();
  const auto& kv = k.value();
  const auto& vv = v.value();
  const auto& bv = bias.value();
  Mat probs(layout.rows(), N);
  Mat mask;
  if (drop) mask.resize(layout.rows(), N);
  Mat out(q.rows(), d);
  Mat logits(N, N);
  for (int g = 0; g < B; ++g) {
    for (int h = 0; h < H; ++h) {
      const auto qb = qv.block(static_cast<Eigen::Index>(g) * N, h * dh, N, dh);
      const auto kb = kv.block(static_cast<Eigen::Index>(g) * N, h * dh, N, dh);
      const auto vb = vv.block(static_cast<Eigen::Index>(g) * N, h * dh, N, dh);
      const Eigen::Index r0 = layout.row(g, h, 0);
      logits.noalias() = (qb * kb.transpose()) * scale;
      logits += bv.middleRows(r0, N);
      for (int i = 0; i < N; ++i) {
        const Scalar mx = logits.row(i).maxCoeff();
        probs.row(r0 + i) = (logits.row(i).array() - mx).exp();
        probs.row(r0 + i) /= probs.row(r0 + i).sum();
      }
      auto pb = probs.middleRows(r0, N);
      if (drop) {
        auto mb = mask.middleRows(r0, N);
        for (Eigen::Index idx = 0; idx < mb.size(); ++idx) {
          mb(idx / N, idx % N) = rng.uniform() < attention_dropout ? Scalar(0) : keep_scale;
        }
        out.block(static_cast<Eigen::Index>(g) * N, h * dh, N, dh).noalias() = pb.cwiseProduct(mb) * vb;
      } else {
        out.block(static_cast<Eigen::Index>(g) * N, h * dh, N, dh).noalias() = pb * vb;
      }
    }
  }
  if (probe) probe->weights = probs;

  return q.tape->record(
      std::move(out), {q, k, v, bias},
      [q, k, v, bias, layout, dh, scale, probs = std::move(probs), mask = std::move(mask)](ad::Tape<Scalar>& t,
                                                                                            int self) {
        const int B = layout.num_graphs, N = layout.num_nodes, H = layout.num_heads;
        const auto& g = t.grad(self);
        const auto& qv = t.value(q);
        const auto& kv = t.value(k);
        const auto& vv = t.value(v);
        const bool drop = mask.size() > 0;
        Mat dp(N, N), ds(N, N), pd(N, N);
        for (int gi = 0; gi < B; ++gi) {
          for (int h = 0; h < H; ++h) {
            const Eigen::Index r0 = layout.row(gi, h, 0);
            const Eigen::Index row0 = static_cast<Eigen::Index>(gi) * N;
            const auto pb = probs.middleRows(r0, N);
            const auto gb = g.block(row0, h * dh, N, dh);
            const auto vb = vv.block(row0, h * dh, N, dh);
            if (drop) {
              pd = pb.cwiseProduct(mask.middleRows(r0, N));
            } else {
              pd = pb;
            }
            if (t.requires_grad(v)) t.grad_mut(v.id).block(row0, h * dh, N, dh).noalias() += pd.transpose() * gb;
            dp.noalias() = gb * vb.transpose();
            if (drop) dp = dp.cwiseProduct(mask.middleRows(r0, N));
            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rowdot = dp.cwiseProduct(pb).rowwise().sum();
            ds = pb.cwiseProduct(dp - rowdot.replicate(1, N));
            if (t.requires_grad(bias)) t.grad_mut(bias.id).middleRows(r0, N) += ds;
            if (t.requires_grad(q)) {
              t.grad_mut(q.id).block(row0, h * dh, N, dh).noalias() += (ds * kv.block(row0, h * dh, N, dh)) * scale;
            }
            if (t.requires_grad(k)) {
              t.grad_mut(k.id).block(row0, h * dh, N, dh).noalias() +=
                  (ds.transpose() * qv.block(row0, h * dh, N, dh)) * scale;
            }
          }
        }
      });
}

/// Biased multi-head self-attention: Q = H W_Q (+ q_bias), K = H W_K
/// (+ k_bias), V = H W_V, per-head attention, then W_O.
template <typename Scalar>
ad::Var<Scalar> multi_head_attention(ad::Var<Scalar> x, ad::Var<Scalar> bias, const LayerVars<Scalar>& p,
                                     const BiasLayout& layout, const LayerOptions& opt, Rng& rng,
                                     AttentionProbe<Scalar>* probe = nullptr) {
  if (layout.num_heads != p.num_heads) throw Error("attention: layout head count differs from parameters");
  auto q = ad::matmul(x, p.w_q);
  if (p.q_bias) q = ad::add_row(q, *p.q_bias);
  auto k = ad::matmul(x, p.w_k);
  if (p.k_bias) k = ad::add_row(k, *p.k_bias);
  auto v = ad::matmul(x, p.w_v);
  auto heads = attention_core(q, k, v, bias, layout, opt.attention_dropout, opt.training, rng, probe);
  return ad::matmul(heads, p.w_o);
}

template <typename Scalar>
ad::Var<Scalar> activate(ad::Var<Scalar> x, Activation act) {
  return act == Activation::kGelu ? ad::gelu(x) : ad::relu(x);
}

/// Position-wise FFN: act(x W1 + b1) W2 + b2.
template <typename Scalar>
ad::Var<Scalar> feed_forward(ad::Var<Scalar> x, const LayerVars<Scalar>& p, Activation act) {
  auto hidden = activate(ad::add_row(ad::matmul(x, p.ffn_w1), p.ffn_b1), act);
  return ad::add_row(ad::matmul(hidden, p.ffn_w2), p.ffn_b2);
}

/// Pre-LN layer:
///   h' = MHA(LN(h)) + h
///   out = FFN(LN(h')) + h'
template <typename Scalar>
ad::Var<Scalar> graphormer_layer(ad::Var<Scalar> x, ad::Var<Scalar> bias, const LayerVars<Scalar>& p,
                                 const BiasLayout& layout, const LayerOptions& opt, Rng& rng,
                                 AttentionProbe<Scalar>* probe = nullptr) {
  auto attn = multi_head_attention(ad::layer_norm(x, p.ln1_gamma, p.ln1_beta), bias, p, layout, opt, rng, probe);
  auto mid = ad::add(x, ad::dropout(attn, opt.dropout, opt.training, rng));
  auto ffn = feed_forward(ad::layer_norm(mid, p.ln2_gamma, p.ln2_beta), p, opt.activation);
  return ad::add(mid, ad::dropout(ffn, opt.dropout, opt.training, rng));
}

}  // namespace graphormer
