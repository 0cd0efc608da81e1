// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "graphormer/attention.hpp"
#include "graphormer/autodiff.hpp"
#include "graphormer/encoding.hpp"
#include "graphormer/graph.hpp"

namespace graphormer {

enum class Task { kRegression, kBinaryClassification };

struct ModelConfig {
  int num_layers = 4;
  int hidden_dim = 64;
  int num_heads = 8;
  int edge_dim = 16;
  int max_degree = 64;
  int max_spd = 20;
  int max_path_len = 20;
  double dropout = 0.0;
  double attention_dropout = 0.0;
  double embedding_dropout = 0.0;
  Task task = Task::kRegression;
  Activation activation = Activation::kGelu;
  bool use_spatial = true;
  bool use_centrality = true;
  bool use_edge = true;
  bool final_layer_norm = true;
  std::vector<int> node_vocab{1};
  std::vector<int> edge_vocab{1};

  void validate() const {
    if (num_layers < 0) throw Error("num_layers must be >= 0");
    if (hidden_dim <= 0 || num_heads <= 0 || hidden_dim % num_heads != 0) {
      throw Error("hidden_dim must be a positive multiple of num_heads");
    }
    if (edge_dim <= 0 || max_degree < 0 || max_spd < 1 || max_path_len < 1) throw Error("invalid encoding sizes");
    for (double p : {dropout, attention_dropout, embedding_dropout}) {
      if (p < 0.0 || p >= 1.0) throw Error("dropout rates must be in [0, 1)");
    }
    if (node_vocab.empty() || edge_vocab.empty()) throw Error("vocabularies must have at least one slot");
    for (int v : node_vocab) {
      if (v <= 0) throw Error("vocabulary cardinalities must be positive");
    }
    for (int v : edge_vocab) {
      if (v <= 0) throw Error("vocabulary cardinalities must be positive");
    }
  }

  LayerOptions layer_options(bool training) const {
    return LayerOptions{dropout, attention_dropout, training, activation};
  }
};

template <typename Scalar>
struct ModelParams {
  using Mat = ad::Matrix<Scalar>;
  Mat node_embed;  // [(sum(node vocab) + 1) x d], last row is the virtual node token
  std::vector<int> node_vocab_offsets;
  EncodingTables<Scalar> enc;
  std::vector<LayerParams<Scalar>> layers;
  Mat final_gamma, final_beta;  // [1 x d]
  Mat head_w;                   // [d x 1]
  Mat head_b;                   // [1 x 1]

  static ModelParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const int d = cfg.hidden_dim;
    ModelParams p;
    int total = 0;
    for (int v : cfg.node_vocab) {
      p.node_vocab_offsets.push_back(total);
      total += v;
    }
    auto normal = [&](Eigen::Index r, Eigen::Index c) {
      Mat m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = Scalar(rng.truncated_normal(0.02));
      return m;
    };
    p.node_embed = normal(total + 1, d);
    p.enc = EncodingTables<Scalar>::zeros(d, cfg.num_heads, cfg.edge_dim, cfg.max_degree, cfg.max_spd,
                                          cfg.max_path_len, cfg.edge_vocab);
    p.enc.z_in = normal(cfg.max_degree + 2, d);
    p.enc.z_out = normal(cfg.max_degree + 2, d);
    p.enc.b_spatial = normal(cfg.num_heads, cfg.max_spd + 3);
    p.enc.w_edge = normal(static_cast<Eigen::Index>(cfg.num_heads) * cfg.max_path_len, cfg.edge_dim);
    p.enc.edge_embed = normal(p.enc.edge_embed.rows(), cfg.edge_dim);
    for (int l = 0; l < cfg.num_layers; ++l) p.layers.push_back(LayerParams<Scalar>::init(d, cfg.num_heads, rng));
    p.final_gamma = Mat::Ones(1, d);
    p.final_beta = Mat::Zero(1, d);
    p.head_w = normal(d, 1);
    p.head_b = Mat::Zero(1, 1);
    return p;
  }

  /// Every learnable tensor with a stable name, in a fixed order shared by the
  /// optimizer, checkpoints and gradient lists.
  std::vector<std::pair<std::string, Mat*>> named() {
    std::vector<std::pair<std::string, Mat*>> out{{"node_embed", &node_embed},
                                                  {"enc.z_in", &enc.z_in},
                                                  {"enc.z_out", &enc.z_out},
                                                  {"enc.b_spatial", &enc.b_spatial},
                                                  {"enc.w_edge", &enc.w_edge},
                                                  {"enc.edge_embed", &enc.edge_embed}};
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& L = layers[l];
      const std::string pre = "layer" + std::to_string(l) + ".";
      for (auto [name, m] : std::initializer_list<std::pair<const char*, Mat*>>{
               {"w_q", &L.w_q},       {"w_k", &L.w_k},           {"w_v", &L.w_v},          {"w_o", &L.w_o},
               {"ffn_w1", &L.ffn_w1}, {"ffn_b1", &L.ffn_b1},     {"ffn_w2", &L.ffn_w2},    {"ffn_b2", &L.ffn_b2},
               {"ln1_gamma", &L.ln1_gamma}, {"ln1_beta", &L.ln1_beta}, {"ln2_gamma", &L.ln2_gamma},
               {"ln2_beta", &L.ln2_beta}}) {
        out.emplace_back(pre + name, m);
      }
      if (L.q_bias) out.emplace_back(pre + "q_bias", &*L.q_bias);
      if (L.k_bias) out.emplace_back(pre + "k_bias", &*L.k_bias);
    }
    out.emplace_back("final_gamma", &final_gamma);
    out.emplace_back("final_beta", &final_beta);
    out.emplace_back("head_w", &head_w);
    out.emplace_back("head_b", &head_b);
    return out;
  }

  std::vector<Mat> values() const {
    std::vector<Mat> out;
    for (auto& [name, m] : const_cast<ModelParams*>(this)->named()) out.push_back(*m);
    return out;
  }

  void assign(const std::vector<Mat>& values) {
    auto slots = named();
    if (slots.size() != values.size()) throw Error("parameter count mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].second->rows() != values[i].rows() || slots[i].second->cols() != values[i].cols()) {
        throw Error("parameter shape mismatch for " + slots[i].first);
      }
      *slots[i].second = values[i];
    }
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    auto c = [](const Mat& m) { return m.template cast<Other>().eval(); };
    out.node_embed = c(node_embed);
    out.node_vocab_offsets = node_vocab_offsets;
    out.enc.z_in = c(enc.z_in);
    out.enc.z_out = c(enc.z_out);
    out.enc.b_spatial = c(enc.b_spatial);
    out.enc.w_edge = c(enc.w_edge);
    out.enc.edge_embed = c(enc.edge_embed);
    out.enc.edge_vocab_offsets = enc.edge_vocab_offsets;
    for (const auto& L : layers) {
      LayerParams<Other> o;
      o.num_heads = L.num_heads;
      o.w_q = c(L.w_q);
      o.w_k = c(L.w_k);
      o.w_v = c(L.w_v);
      o.w_o = c(L.w_o);
      if (L.q_bias) o.q_bias = c(*L.q_bias);
      if (L.k_bias) o.k_bias = c(*L.k_bias);
      o.ffn_w1 = c(L.ffn_w1);
      o.ffn_b1 = c(L.ffn_b1);
      o.ffn_w2 = c(L.ffn_w2);
      o.ffn_b2 = c(L.ffn_b2);
      o.ln1_gamma = c(L.ln1_gamma);
      o.ln1_beta = c(L.ln1_beta);
      o.ln2_gamma = c(L.ln2_gamma);
      o.ln2_beta = c(L.ln2_beta);
      out.layers.push_back(std::move(o));
    }
    out.final_gamma = c(final_gamma);
    out.final_beta = c(final_beta);
    out.head_w = c(head_w);
    out.head_b = c(head_b);
    return out;
  }
};

/// A graph with its virtual node attached and structure precomputed.
struct PreparedGraph {
  Graph graph;
  StructuralFeatures features;
};

inline PreparedGraph prepare_graph(const Graph& g, int max_path_len) {
  auto sf = compute_structural_features(g, max_path_len);
  auto [gv, sv] = attach_virtual_node(g, sf);
  return PreparedGraph{std::move(gv), std::move(sv)};
}

/// Graphs padded to a common node count, with every index table the forward
/// pass needs.
struct Batch {
  int num_graphs = 0;
  int num_nodes = 0;
  std::vector<std::vector<int>> node_tokens;  // [B * N], rows of node_embed; empty for padding
  std::vector<int> in_codes, out_codes;       // [B * N]; out -1 for undirected graphs
  std::vector<int> spd_codes;                 // [B * N * N], -1 where padded
  std::vector<std::uint8_t> key_valid;        // [B * N]
  std::vector<std::vector<int>> edge_feats;   // batch-global edge list
  PathTable paths;                            // [B * N * N] pairs, batch-global edge ids
  std::vector<int> readout_rows;              // [B], virtual node row per graph
  Eigen::VectorXd targets;                    // [B]
};

/// Pads to the largest graph, or to `pad_to` when larger.
inline Batch make_batch(std::span<const PreparedGraph* const> graphs, const ModelConfig& cfg, int pad_to = 0) {
  Batch b;
  b.num_graphs = static_cast<int>(graphs.size());
  int N = pad_to;
  for (const auto* g : graphs) {
    if (!g->features.has_vnode) throw Error("make_batch: graphs must have the virtual node attached");
    N = std::max(N, g->graph.num_nodes);
  }
  b.num_nodes = N;
  const std::size_t B = graphs.size();
  b.node_tokens.assign(B * N, {});
  b.in_codes.assign(B * N, 0);
  b.out_codes.assign(B * N, 0);
  b.spd_codes.assign(B * N * N, -1);
  b.key_valid.assign(B * N, 0);
  b.paths.offsets.assign(B * N * N + 1, 0);
  b.targets = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(B));

  int offsets_total = 0;
  std::vector<int> node_offsets;
  for (int v : cfg.node_vocab) {
    node_offsets.push_back(offsets_total);
    offsets_total += v;
  }
  const int vnode_token = offsets_total;

  for (std::size_t gi = 0; gi < B; ++gi) {
    const auto& pg = *graphs[gi];
    const auto& sf = pg.features;
    const int n = pg.graph.num_nodes;
    const int edge_base = static_cast<int>(b.edge_feats.size());
    for (std::size_t e = 0; e < pg.graph.edges.size(); ++e) {
      b.edge_feats.push_back(pg.graph.edge_feats.empty() ? std::vector<int>(cfg.edge_vocab.size(), 0)
                                                         : pg.graph.edge_feats[e]);
    }
    for (int i = 0; i < n; ++i) {
      const std::size_t row = gi * N + i;
      const bool vn = i == sf.vnode_index();
      if (vn) {
        b.node_tokens[row] = {vnode_token};
      } else {
        const auto& f = pg.graph.node_feats.empty() ? std::vector<int>(cfg.node_vocab.size(), 0) : pg.graph.node_feats[i];
        if (f.size() != cfg.node_vocab.size()) throw Error("make_batch: node feature slots differ from vocabulary");
        for (std::size_t s = 0; s < f.size(); ++s) {
          if (f[s] < 0 || f[s] >= cfg.node_vocab[s]) throw Error("make_batch: node feature out of vocabulary");
          b.node_tokens[row].push_back(node_offsets[s] + f[s]);
        }
      }
      b.in_codes[row] = degree_code(sf.indeg[i], cfg.max_degree, vn);
      b.out_codes[row] = pg.graph.directed ? degree_code(sf.outdeg[i], cfg.max_degree, vn) : -1;
      b.key_valid[row] = 1;
      for (int j = 0; j < n; ++j) b.spd_codes[(gi * N + i) * N + j] = spd_code(sf.spd(i, j), cfg.max_spd);
    }
    if (pg.graph.target) b.targets(static_cast<Eigen::Index>(gi)) = *pg.graph.target;
    b.readout_rows.push_back(static_cast<int>(gi * N) + sf.vnode_index());
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        const std::size_t pair = (gi * N + i) * N + j;
        if (i < n && j < n) {
          for (int e : sf.path(i, j)) b.paths.edges.push_back(edge_base + e);
        }
        b.paths.offsets[pair + 1] = static_cast<int>(b.paths.edges.size());
      }
    }
  }
  return b;
}

inline Batch make_batch(std::span<const PreparedGraph> graphs, const ModelConfig& cfg, int pad_to = 0) {
  std::vector<const PreparedGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_batch(std::span<const PreparedGraph* const>(ptrs), cfg, pad_to);
}

template <typename Scalar>
struct ModelVars {
  ad::Var<Scalar> node_embed;
  EncodingVars<Scalar> enc;
  std::vector<LayerVars<Scalar>> layers;
  ad::Var<Scalar> final_gamma, final_beta, head_w, head_b;

  static ModelVars on(ad::Tape<Scalar>& tape, const ModelParams<Scalar>& p, bool requires_grad = true) {
    ModelVars v;
    v.node_embed = tape.leaf(p.node_embed, requires_grad);
    v.enc = EncodingVars<Scalar>::on(tape, p.enc, requires_grad);
    for (const auto& L : p.layers) v.layers.push_back(LayerVars<Scalar>::on(tape, L, requires_grad));
    v.final_gamma = tape.leaf(p.final_gamma, requires_grad);
    v.final_beta = tape.leaf(p.final_beta, requires_grad);
    v.head_w = tape.leaf(p.head_w, requires_grad);
    v.head_b = tape.leaf(p.head_b, requires_grad);
    return v;
  }

  /// Pointers to every variable, in ModelParams::named() order.
  std::vector<ad::Var<Scalar>*> slots() {
    std::vector<ad::Var<Scalar>*> out{&node_embed, &enc.z_in, &enc.z_out, &enc.b_spatial, &enc.w_edge, &enc.edge_embed};
    for (auto& L : layers) {
      for (auto* v : {&L.w_q, &L.w_k, &L.w_v, &L.w_o, &L.ffn_w1, &L.ffn_b1, &L.ffn_w2, &L.ffn_b2, &L.ln1_gamma,
                      &L.ln1_beta, &L.ln2_gamma, &L.ln2_beta}) {
        out.push_back(v);
      }
      if (L.q_bias) out.push_back(&*L.q_bias);
      if (L.k_bias) out.push_back(&*L.k_bias);
    }
    for (auto* v : {&final_gamma, &final_beta, &head_w, &head_b}) out.push_back(v);
    return out;
  }

  std::vector<ad::Var<Scalar>> all() const {
    std::vector<ad::Var<Scalar>> out;
    for (auto* v : const_cast<ModelVars*>(this)->slots()) out.push_back(*v);
    return out;
  }

  /// Rebinds externally created variables (e.g. from a gradient check) laid
  /// out like `shape`.
  static ModelVars bind(std::span<const ad::Var<Scalar>> vars, const ModelParams<Scalar>& shape) {
    ModelVars v;
    v.enc.edge_vocab_offsets = shape.enc.edge_vocab_offsets;
    for (const auto& L : shape.layers) {
      LayerVars<Scalar> lv;
      lv.num_heads = L.num_heads;
      if (L.q_bias) lv.q_bias = ad::Var<Scalar>{};
      if (L.k_bias) lv.k_bias = ad::Var<Scalar>{};
      v.layers.push_back(lv);
    }
    auto s = v.slots();
    if (s.size() != vars.size()) throw Error("ModelVars::bind: variable count mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) *s[i] = vars[i];
    return v;
  }
};

/// Optional hooks into a forward pass.
template <typename Scalar>
struct ForwardExtras {
  /// Added to the centrality-encoded inputs h0, [(B * N) x d].
  std::optional<ad::Var<Scalar>> perturbation;
  /// Receives h0 (after the perturbation, before embedding dropout).
  std::optional<ad::Var<Scalar>>* inputs_out = nullptr;
  /// One probe per layer when set.
  std::vector<AttentionProbe<Scalar>>* probes = nullptr;
};

/// Node embeddings + centrality encoding, L layers, virtual-node readout,
/// optional final LN, linear head. Returns [B x 1] predictions.
template <typename Scalar>
ad::Var<Scalar> forward(ad::Tape<Scalar>& tape, const ModelVars<Scalar>& p, const Batch& batch,
                        const ModelConfig& cfg, bool training, Rng& rng, const ForwardExtras<Scalar>& extras = {}) {
  if (static_cast<int>(p.layers.size()) != cfg.num_layers) throw Error("forward: layer count differs from config");
  if (p.node_embed.cols() != cfg.hidden_dim) throw Error("forward: hidden size differs from config");
  const BiasLayout layout{batch.num_graphs, batch.num_nodes, cfg.num_heads};

  auto x = ad::embedding_bag(p.node_embed, batch.node_tokens);
  if (cfg.use_centrality) x = centrality_encode(x, batch.in_codes, batch.out_codes, p.enc);
  if (extras.perturbation) x = ad::add(x, *extras.perturbation);
  if (extras.inputs_out) *extras.inputs_out = x;
  x = ad::dropout(x, cfg.embedding_dropout, training, rng);

  std::optional<ad::Var<Scalar>> spatial, edge;
  if (cfg.use_spatial) spatial = spatial_bias(p.enc.b_spatial, batch.spd_codes, layout);
  if (cfg.use_edge) {
    auto feats = embed_edges(batch.edge_feats, p.enc);
    edge = edge_bias(feats, p.enc.w_edge, batch.paths, layout);
  }
  auto bias = assemble_attention_bias(tape, spatial, edge, batch.key_valid, layout);

  const auto opt = cfg.layer_options(training);
  if (extras.probes) extras.probes->assign(p.layers.size(), {});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    x = graphormer_layer(x, bias, p.layers[l], layout, opt, rng, extras.probes ? &(*extras.probes)[l] : nullptr);
  }
  auto readout = ad::gather_rows(x, batch.readout_rows);
  if (cfg.final_layer_norm) readout = ad::layer_norm(readout, p.final_gamma, p.final_beta);
  return ad::add_row(ad::matmul(readout, p.head_w), p.head_b);
}

/// MAE for regression, mean BCE-with-logits for binary classification.
template <typename Scalar>
ad::Var<Scalar> loss(ad::Var<Scalar> pred, const Eigen::VectorXd& target, Task task) {
  if (pred.rows() != target.size() || pred.cols() != 1) throw Error("loss: prediction/target shape mismatch");
  const ad::Matrix<Scalar> t = target.cast<Scalar>();
  return task == Task::kRegression ? ad::l1_loss(pred, t) : ad::bce_with_logits(pred, t);
}

/// Inference-only convenience: predictions for a batch.
template <typename Scalar>
Eigen::VectorXd predict(const ModelParams<Scalar>& params, const Batch& batch, const ModelConfig& cfg) {
  ad::Tape<Scalar> tape;
  auto vars = ModelVars<Scalar>::on(tape, params, false);
  Rng rng(0);
  auto pred = forward(tape, vars, batch, cfg, false, rng);
  return pred.value().col(0).template cast<double>();
}

}  // namespace graphormer
