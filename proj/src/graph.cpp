// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/graph.hpp"

#include <algorithm>
#include <deque>
#include <string>

namespace graphormer {

namespace {

std::string where(const char* what, std::size_t idx) { return std::string(what) + " " + std::to_string(idx); }

void check_feats(const std::vector<std::vector<int>>& feats, std::span<const int> vocab, const char* what) {
  if (vocab.empty()) return;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].size() != vocab.size()) {
      throw Error(where(what, i) + ": expected " + std::to_string(vocab.size()) + " feature slots, got " +
                  std::to_string(feats[i].size()));
    }
    for (std::size_t s = 0; s < vocab.size(); ++s) {
      const int f = feats[i][s];
      if (f == kVNodeFeature) continue;
      if (f < 0 || f >= vocab[s]) {
        throw Error(where(what, i) + ": feature " + std::to_string(f) + " out of vocabulary [0, " +
                    std::to_string(vocab[s]) + ") in slot " + std::to_string(s));
      }
    }
  }
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return fnv1a(&v, sizeof v, h); }

}  // namespace

std::vector<std::uint64_t> WLColoring::histogram() const {
  auto h = colors;
  std::sort(h.begin(), h.end());
  return h;
}

void validate(const Graph& g, std::span<const int> node_vocab, std::span<const int> edge_vocab) {
  if (g.num_nodes < 0) throw Error("negative node count");
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& [s, d] = g.edges[e];
    if (s < 0 || s >= g.num_nodes || d < 0 || d >= g.num_nodes) {
      throw Error(where("edge", e) + " references a node outside [0, " + std::to_string(g.num_nodes) + ")");
    }
  }
  if (!g.node_feats.empty() && static_cast<int>(g.node_feats.size()) != g.num_nodes) {
    throw Error("node feature rows do not match node count");
  }
  if (!g.edge_feats.empty() && g.edge_feats.size() != g.edges.size()) {
    throw Error("edge feature rows do not match edge count");
  }
  check_feats(g.node_feats, node_vocab, "node");
  check_feats(g.edge_feats, edge_vocab, "edge");
}

std::vector<std::vector<std::pair<int, int>>> adjacency(const Graph& g) {
  std::vector<std::vector<std::pair<int, int>>> adj(g.num_nodes);
  for (int e = 0; e < static_cast<int>(g.edges.size()); ++e) {
    const auto [s, d] = g.edges[e];
    adj[s].emplace_back(d, e);
    if (!g.directed && s != d) adj[d].emplace_back(s, e);
  }
  for (auto& nb : adj) std::sort(nb.begin(), nb.end());
  return adj;
}

Degrees compute_degrees(const Graph& g) {
  Degrees deg{std::vector<int>(g.num_nodes, 0), std::vector<int>(g.num_nodes, 0)};
  for (const auto& [s, d] : g.edges) {
    ++deg.out[s];
    ++deg.in[d];
    if (!g.directed) {
      ++deg.out[d];
      ++deg.in[s];
    }
  }
  return deg;
}

namespace {

void bfs(const std::vector<std::vector<std::pair<int, int>>>& adj, int source, std::span<int> dist) {
  std::fill(dist.begin(), dist.end(), kUnreachable);
  std::deque<int> queue{source};
  dist[source] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (const auto& [v, e] : adj[u]) {
      if (dist[v] == kUnreachable) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
}

}  // namespace

SpdMatrix shortest_path_distances(const Graph& g) {
  const int n = g.num_nodes;
  SpdMatrix spd(n, n);
  const auto adj = adjacency(g);
  for (int i = 0; i < n; ++i) bfs(adj, i, std::span<int>(spd.row(i).data(), n));
  return spd;
}

StructuralFeatures shortest_path_edges(const Graph& g, int max_len) {
  if (max_len < 1) throw Error("max_len must be at least 1");
  const int n = g.num_nodes;
  StructuralFeatures sf;
  sf.num_nodes = n;
  sf.spd = shortest_path_distances(g);
  sf.path_offsets.assign(static_cast<std::size_t>(n) * n + 1, 0);

  // Incoming lists: for a target v, candidates u with an edge u -> v.
  std::vector<std::vector<std::pair<int, int>>> incoming(n);
  for (int e = 0; e < static_cast<int>(g.edges.size()); ++e) {
    const auto [s, d] = g.edges[e];
    incoming[d].emplace_back(s, e);
    if (!g.directed && s != d) incoming[s].emplace_back(d, e);
  }
  for (auto& in : incoming) std::sort(in.begin(), in.end());

  std::vector<int> parent_edge(n), parent(n), walk;
  for (int i = 0; i < n; ++i) {
    const auto dist = sf.spd.row(i);
    for (int v = 0; v < n; ++v) {
      parent[v] = -1;
      if (v == i || dist(v) <= 0) continue;
      for (const auto& [u, e] : incoming[v]) {
        if (dist(u) == dist(v) - 1) {
          parent[v] = u;
          parent_edge[v] = e;
          break;
        }
      }
    }
    for (int j = 0; j < n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * n + j;
      walk.clear();
      if (j != i && dist(j) > 0) {
        for (int v = j; v != i; v = parent[v]) walk.push_back(parent_edge[v]);
        std::reverse(walk.begin(), walk.end());
        if (static_cast<int>(walk.size()) > max_len) walk.resize(max_len);
      }
      sf.path_data.insert(sf.path_data.end(), walk.begin(), walk.end());
      sf.path_offsets[k + 1] = static_cast<int>(sf.path_data.size());
    }
  }
  return sf;
}

StructuralFeatures compute_structural_features(const Graph& g, int max_path_len) {
  auto sf = shortest_path_edges(g, max_path_len);
  auto deg = compute_degrees(g);
  sf.indeg = std::move(deg.in);
  sf.outdeg = std::move(deg.out);
  return sf;
}

Graph with_virtual_node_token(const Graph& g) {
  Graph out = g;
  out.num_nodes = g.num_nodes + 1;
  const std::size_t slots = g.node_feats.empty() ? 1 : g.node_feats.front().size();
  out.node_feats.resize(g.num_nodes);
  out.node_feats.emplace_back(slots, kVNodeFeature);
  return out;
}

std::pair<Graph, StructuralFeatures> attach_virtual_node(const Graph& g, const StructuralFeatures& sf) {
  if (sf.has_vnode) throw Error("virtual node already attached");
  const int n = g.num_nodes;
  Graph out = with_virtual_node_token(g);

  StructuralFeatures res;
  res.num_nodes = n + 1;
  res.has_vnode = true;
  res.spd = SpdMatrix::Constant(n + 1, n + 1, kVNodeDistance);
  res.spd.topLeftCorner(n, n) = sf.spd;
  res.spd(n, n) = 0;
  res.path_offsets.assign(static_cast<std::size_t>(n + 1) * (n + 1) + 1, 0);
  res.path_data.reserve(sf.path_data.size());
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      if (i < n && j < n) {
        const auto p = sf.path(i, j);
        res.path_data.insert(res.path_data.end(), p.begin(), p.end());
      }
      res.path_offsets[static_cast<std::size_t>(i) * (n + 1) + j + 1] = static_cast<int>(res.path_data.size());
    }
  }
  res.indeg = sf.indeg;
  res.outdeg = sf.outdeg;
  res.indeg.push_back(0);
  res.outdeg.push_back(0);
  return {std::move(out), std::move(res)};
}

WLColoring wl1_refinement(const Graph& g, int max_rounds) {
  const int n = g.num_nodes;
  const auto adj = adjacency(g);
  WLColoring wl;
  wl.colors.resize(n);
  for (int i = 0; i < n; ++i) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    if (static_cast<std::size_t>(i) < g.node_feats.size()) {
      for (int f : g.node_feats[i]) h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(f)));
    }
    wl.colors[i] = h;
  }
  auto num_classes = [](std::vector<std::uint64_t> c) {
    std::sort(c.begin(), c.end());
    return std::unique(c.begin(), c.end()) - c.begin();
  };
  auto classes = num_classes(wl.colors);
  std::vector<std::uint64_t> next(n), nb;
  for (int round = 0; round < max_rounds; ++round) {
    for (int i = 0; i < n; ++i) {
      nb.clear();
      for (const auto& [v, e] : adj[i]) nb.push_back(wl.colors[v]);
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = mix(0xcbf29ce484222325ULL, wl.colors[i]);
      h = mix(h, nb.size());
      for (auto c : nb) h = mix(h, c);
      next[i] = h;
    }
    const auto next_classes = num_classes(next);
    // Refinement never merges classes, so an unchanged count means a stable partition.
    if (next_classes == classes) break;
    wl.colors.swap(next);
    classes = next_classes;
    ++wl.rounds;
  }
  return wl;
}

bool wl1_indistinguishable(const Graph& a, const Graph& b, int max_rounds) {
  if (a.num_nodes != b.num_nodes) return false;
  const auto wl = wl1_refinement(disjoint_union(a, b), max_rounds);
  std::vector<std::uint64_t> ha(wl.colors.begin(), wl.colors.begin() + a.num_nodes);
  std::vector<std::uint64_t> hb(wl.colors.begin() + a.num_nodes, wl.colors.end());
  std::sort(ha.begin(), ha.end());
  std::sort(hb.begin(), hb.end());
  return ha == hb;
}

std::vector<std::vector<int>> spd_multiset_signature(const Graph& g) {
  const auto spd = shortest_path_distances(g);
  std::vector<std::vector<int>> sig(g.num_nodes);
  for (int i = 0; i < g.num_nodes; ++i) {
    sig[i].assign(spd.row(i).data(), spd.row(i).data() + g.num_nodes);
    std::sort(sig[i].begin(), sig[i].end());
  }
  std::sort(sig.begin(), sig.end());
  return sig;
}

Graph permute_graph(const Graph& g, std::span<const int> perm) {
  if (static_cast<int>(perm.size()) != g.num_nodes) throw Error("permutation size mismatch");
  Graph out = g;
  for (auto& e : out.edges) {
    e.src = perm[e.src];
    e.dst = perm[e.dst];
  }
  if (!g.node_feats.empty()) {
    for (int i = 0; i < g.num_nodes; ++i) out.node_feats[perm[i]] = g.node_feats[i];
  }
  return out;
}

Graph disjoint_union(const Graph& a, const Graph& b) {
  Graph u = a;
  u.num_nodes = a.num_nodes + b.num_nodes;
  u.target.reset();
  for (const auto& e : b.edges) u.edges.push_back({e.src + a.num_nodes, e.dst + a.num_nodes});
  if (u.node_feats.empty() && !b.node_feats.empty()) u.node_feats.resize(a.num_nodes);
  u.node_feats.insert(u.node_feats.end(), b.node_feats.begin(), b.node_feats.end());
  if (u.edge_feats.empty() && !b.edge_feats.empty()) u.edge_feats.resize(a.edges.size());
  u.edge_feats.insert(u.edge_feats.end(), b.edge_feats.begin(), b.edge_feats.end());
  return u;
}

Graph cycle_graph(int n) {
  Graph g;
  g.num_nodes = n;
  for (int i = 0; i < n; ++i) g.edges.push_back({i, (i + 1) % n});
  g.node_feats.assign(n, {0});
  g.edge_feats.assign(g.edges.size(), {0});
  return g;
}

Graph path_graph(int n) {
  Graph g;
  g.num_nodes = n;
  for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  g.node_feats.assign(n, {0});
  g.edge_feats.assign(g.edges.size(), {0});
  return g;
}

}  // namespace graphormer
