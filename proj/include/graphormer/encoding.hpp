// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Structural encodings: degree (centrality) embeddings added to the node
// inputs, SPD-indexed spatial bias and shortest-path edge bias, assembled into
// per-head additive attention biases.
//
// Bias tensors for a batch of B graphs padded to N nodes with H heads are
// stored as a [(B * H * N) x N] matrix; block (g * H + h) holds head h of
// graph g.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "graphormer/autodiff.hpp"
#include "graphormer/graph.hpp"

namespace graphormer {

struct BiasLayout {
  int num_graphs = 1;
  int num_nodes = 0;  // padded node count per graph
  int num_heads = 1;

  Eigen::Index rows() const { return static_cast<Eigen::Index>(num_graphs) * num_heads * num_nodes; }
  Eigen::Index row(int g, int h, int i) const {
    return (static_cast<Eigen::Index>(g) * num_heads + h) * num_nodes + i;
  }
};

/// Learnable structural tables, shared by every layer of a model.
template <typename Scalar>
struct EncodingTables {
  using Mat = ad::Matrix<Scalar>;
  Mat z_in;        // [(max_degree + 2) x d], last row reserved for the virtual node
  Mat z_out;       // same shape
  Mat b_spatial;   // [heads x (max_spd + 3)]: distances, unreachable, virtual node
  Mat w_edge;      // [(heads * max_path_len) x d_E], row h * max_path_len + n
  Mat edge_embed;  // [sum(edge vocab) x d_E]
  std::vector<int> edge_vocab_offsets;

  int max_degree() const { return static_cast<int>(z_in.rows()) - 2; }
  int max_spd() const { return static_cast<int>(b_spatial.cols()) - 3; }
  int num_heads() const { return static_cast<int>(b_spatial.rows()); }
  int max_path_len() const { return num_heads() == 0 ? 0 : static_cast<int>(w_edge.rows()) / num_heads(); }

  static EncodingTables zeros(int hidden, int num_heads, int edge_dim, int max_degree, int max_spd, int max_path_len,
                              std::vector<int> edge_vocab = {1}) {
    EncodingTables t;
    t.z_in = Mat::Zero(max_degree + 2, hidden);
    t.z_out = Mat::Zero(max_degree + 2, hidden);
    t.b_spatial = Mat::Zero(num_heads, max_spd + 3);
    t.w_edge = Mat::Zero(num_heads * max_path_len, edge_dim);
    int total = 0;
    for (int v : edge_vocab) {
      t.edge_vocab_offsets.push_back(total);
      total += v;
    }
    t.edge_embed = Mat::Zero(total, edge_dim);
    return t;
  }
};

/// Row of z_in / z_out used for a node. Degrees above max_degree clamp.
inline int degree_code(int degree, int max_degree, bool is_vnode) {
  return is_vnode ? max_degree + 1 : std::clamp(degree, 0, max_degree);
}

/// Column of b_spatial used for an SPD value. Distances above max_spd clamp.
inline int spd_code(int spd, int max_spd) {
  if (spd == kVNodeDistance) return max_spd + 2;
  if (spd == kUnreachable) return max_spd + 1;
  return std::min(spd, max_spd);
}

template <typename Scalar>
struct EncodingVars {
  ad::Var<Scalar> z_in, z_out, b_spatial, w_edge, edge_embed;
  std::vector<int> edge_vocab_offsets;

  static EncodingVars on(ad::Tape<Scalar>& tape, const EncodingTables<Scalar>& t, bool requires_grad = true) {
    return {tape.leaf(t.z_in, requires_grad),      tape.leaf(t.z_out, requires_grad),
            tape.leaf(t.b_spatial, requires_grad), tape.leaf(t.w_edge, requires_grad),
            tape.leaf(t.edge_embed, requires_grad), t.edge_vocab_offsets};
  }
  int max_degree() const { return static_cast<int>(z_in.rows()) - 2; }
  int max_spd() const { return static_cast<int>(b_spatial.cols()) - 3; }
  int num_heads() const { return static_cast<int>(b_spatial.rows()); }
  int max_path_len() const { return static_cast<int>(w_edge.rows()) / num_heads(); }
};

/// Shortest paths of a padded batch in CSR form over (g, i, j) with
/// batch-global edge ids.
struct PathTable {
  std::vector<int> offsets;
  std::vector<int> edges;

  std::span<const int> path(std::size_t pair) const {
    return {edges.data() + offsets[pair], edges.data() + offsets[pair + 1]};
  }
};

/// h = x + z_in[in_code] + z_out[out_code], one code per row.
template <typename Scalar>
ad::Var<Scalar> centrality_encode(ad::Var<Scalar> node_embed, std::vector<int> in_codes, const std::vector<int>& out_codes,
                                  const EncodingVars<Scalar>& t) {
  auto zi = ad::embedding_lookup(t.z_in, std::move(in_codes));
  // Out-code -1: undirected node, whose single degree already went through z_in.
  std::vector<std::vector<int>> out_bags(out_codes.size());
  for (std::size_t i = 0; i < out_codes.size(); ++i) {
    if (out_codes[i] >= 0) out_bags[i] = {out_codes[i]};
  }
  auto zo = ad::embedding_bag(t.z_out, std::move(out_bags));
  return ad::add(ad::add(node_embed, zi), zo);
}

template <typename Scalar>
ad::Var<Scalar> centrality_encode(ad::Var<Scalar> node_embed, const StructuralFeatures& sf, bool directed,
                                  const EncodingVars<Scalar>& t) {
  std::vector<int> in(sf.num_nodes), out(sf.num_nodes);
  for (int i = 0; i < sf.num_nodes; ++i) {
    const bool vn = i == sf.vnode_index();
    in[i] = degree_code(sf.indeg[i], t.max_degree(), vn);
    out[i] = directed ? degree_code(sf.outdeg[i], t.max_degree(), vn) : -1;
  }
  return centrality_encode(node_embed, std::move(in), out, t);
}

/// Spatial bias from per-graph padded SPD codes (layout.num_graphs blocks of
/// N x N codes, -1 for padded pairs).
template <typename Scalar>
ad::Var<Scalar> spatial_bias(ad::Var<Scalar> b_spatial, std::span<const int> codes, const BiasLayout& layout) {
  const int N = layout.num_nodes, H = layout.num_heads;
  if (b_spatial.rows() != H) throw Error("spatial_bias: table has " + std::to_string(b_spatial.rows()) + " heads");
  const int C = static_cast<int>(b_spatial.cols());
  std::vector<int> index(static_cast<std::size_t>(layout.rows()) * N);
  for (int g = 0; g < layout.num_graphs; ++g) {
    for (int h = 0; h < H; ++h) {
      for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
          const int code = codes[(static_cast<std::size_t>(g) * N + i) * N + j];
          if (code >= C) throw Error("spatial_bias: code outside table");
          index[static_cast<std::size_t>(layout.row(g, h, i)) * N + j] = code < 0 ? -1 : h * C + code;
        }
      }
    }
  }
  return ad::index_gather(b_spatial, std::move(index), layout.rows(), N);
}

template <typename Scalar>
ad::Var<Scalar> spatial_bias(const StructuralFeatures& sf, const EncodingVars<Scalar>& t) {
  const int n = sf.num_nodes;
  std::vector<int> codes(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) codes[static_cast<std::size_t>(i) * n + j] = spd_code(sf.spd(i, j), t.max_spd());
  }
  return spatial_bias(t.b_spatial, codes, BiasLayout{1, n, t.num_heads()});
}

/// c[g,h,i,j] = mean over the recorded path e_1..e_N of <x_{e_n}, w_edge[h][n]>,
/// and 0 for an empty path.
template <typename Scalar>
ad::Var<Scalar> edge_bias(ad::Var<Scalar> edge_features, ad::Var<Scalar> w_edge, const PathTable& paths,
                          const BiasLayout& layout) {
  using Mat = ad::Matrix<Scalar>;
  const int N = layout.num_nodes, H = layout.num_heads;
  if (w_edge.rows() % H != 0) throw Error("edge_bias: weight rows not divisible by head count");
  if (edge_features.cols() != w_edge.cols()) throw Error("edge_bias: edge feature width differs from weights");
  const int L = static_cast<int>(w_edge.rows()) / H;
  const std::size_t pairs = static_cast<std::size_t>(layout.num_graphs) * N * N;
  if (paths.offsets.size() != pairs + 1) throw Error("edge_bias: path table does not match layout");
  for (int e : paths.edges) {
    if (e < 0 || e >= edge_features.rows()) throw Error("edge_bias: path references a missing edge");
  }

  const Mat dots = edge_features.value() * w_edge.value().transpose();  // [M x (H * L)]
  Mat out = Mat::Zero(layout.rows(), N);
  for (int g = 0; g < layout.num_graphs; ++g) {
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        const auto p = paths.path((static_cast<std::size_t>(g) * N + i) * N + j);
        if (p.empty()) continue;
        const int len = std::min<int>(static_cast<int>(p.size()), L);
        for (int h = 0; h < H; ++h) {
          Scalar acc = 0;
          for (int n = 0; n < len; ++n) acc += dots(p[n], h * L + n);
          out(layout.row(g, h, i), j) = acc / Scalar(len);
        }
      }
    }
  }
  return edge_features.tape->record(
      std::move(out), {edge_features, w_edge}, [edge_features, w_edge, paths, layout, L](ad::Tape<Scalar>& t, int self) {
        const int N = layout.num_nodes, H = layout.num_heads;
        const auto& g = t.grad(self);
        Mat ddots = Mat::Zero(edge_features.rows(), w_edge.rows());
        for (int gi = 0; gi < layout.num_graphs; ++gi) {
          for (int i = 0; i < N; ++i) {
            for (int j = 0; j < N; ++j) {
              const auto p = paths.path((static_cast<std::size_t>(gi) * N + i) * N + j);
              if (p.empty()) continue;
              const int len = std::min<int>(static_cast<int>(p.size()), L);
              for (int h = 0; h < H; ++h) {
                const Scalar share = g(layout.row(gi, h, i), j) / Scalar(len);
                for (int n = 0; n < len; ++n) ddots(p[n], h * L + n) += share;
              }
            }
          }
        }
        if (t.requires_grad(edge_features)) t.grad_mut(edge_features.id).noalias() += ddots * t.value(w_edge);
        if (t.requires_grad(w_edge)) t.grad_mut(w_edge.id).noalias() += ddots.transpose() * t.value(edge_features);
      });
}

/// Edge feature vectors: sum of per-slot embedding rows.
template <typename Scalar>
ad::Var<Scalar> embed_edges(const std::vector<std::vector<int>>& edge_feats, const EncodingVars<Scalar>& t) {
  std::vector<std::vector<int>> bags(edge_feats.size());
  for (std::size_t e = 0; e < edge_feats.size(); ++e) {
    for (std::size_t s = 0; s < edge_feats[e].size(); ++s) bags[e].push_back(t.edge_vocab_offsets.at(s) + edge_feats[e][s]);
  }
  return ad::embedding_bag(t.edge_embed, std::move(bags));
}

/// Single-graph path table from precomputed features.
inline PathTable path_table(const StructuralFeatures& sf) {
  return PathTable{sf.path_offsets, sf.path_data};
}

template <typename Scalar>
ad::Var<Scalar> edge_bias(const StructuralFeatures& sf, ad::Var<Scalar> edge_feature_vectors,
                          const EncodingVars<Scalar>& t) {
  return edge_bias(edge_feature_vectors, t.w_edge, path_table(sf), BiasLayout{1, sf.num_nodes, t.num_heads()});
}

/// Elementwise sum of the enabled bias terms; every column j with
/// key_valid[g * N + j] == 0 is forced to kNegInfBias in every head.
template <typename Scalar>
ad::Var<Scalar> assemble_attention_bias(ad::Tape<Scalar>& tape, std::optional<ad::Var<Scalar>> spatial,
                                        std::optional<ad::Var<Scalar>> edge, std::span<const std::uint8_t> key_valid,
                                        const BiasLayout& layout) {
  using Mat = ad::Matrix<Scalar>;
  const int N = layout.num_nodes;
  if (key_valid.size() != static_cast<std::size_t>(layout.num_graphs) * N) throw Error("assemble: mask size");
  Mat out = Mat::Zero(layout.rows(), N);
  std::vector<ad::Var<Scalar>> inputs;
  for (const auto& v : {spatial, edge}) {
    if (!v) continue;
    if (v->rows() != out.rows() || v->cols() != out.cols()) throw Error("assemble_attention_bias: shape mismatch");
    out += v->value();
    inputs.push_back(*v);
  }
  Mat keep = Mat::Ones(layout.rows(), N);
  for (int g = 0; g < layout.num_graphs; ++g) {
    for (int j = 0; j < N; ++j) {
      if (key_valid[static_cast<std::size_t>(g) * N + j]) continue;
      for (int h = 0; h < layout.num_heads; ++h) {
        for (int i = 0; i < N; ++i) {
          out(layout.row(g, h, i), j) = Scalar(kNegInfBias);
          keep(layout.row(g, h, i), j) = 0;
        }
      }
    }
  }
  if (inputs.empty()) return tape.constant(std::move(out));
  return tape.record(std::move(out), std::span<const ad::Var<Scalar>>(inputs),
                     [inputs, keep = std::move(keep)](ad::Tape<Scalar>& t, int self) {
                       for (const auto& v : inputs) {
                         if (t.requires_grad(v)) t.grad_mut(v.id) += t.grad(self).cwiseProduct(keep);
                       }
                     });
}

}  // namespace graphormer
