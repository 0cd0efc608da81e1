// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "graphormer/common.hpp"

namespace graphormer {

/// Node feature value carried by the virtual node in every vocabulary slot.
/// The embedding layer routes it to a reserved row.
inline constexpr int kVNodeFeature = -1;

struct Edge {
  int src = 0;
  int dst = 0;
};

/// A graph with categorical node and edge features. Undirected graphs store
/// each edge once.
struct Graph {
  int num_nodes = 0;
  bool directed = false;
  std::vector<Edge> edges;
  std::vector<std::vector<int>> node_feats;
  std::vector<std::vector<int>> edge_feats;
  std::optional<double> target;
};

using SpdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-graph structure precomputed once and reused by every forward pass.
struct StructuralFeatures {
  int num_nodes = 0;
  SpdMatrix spd;
  /// CSR layout over ordered pairs (i, j), pair index i * num_nodes + j.
  std::vector<int> path_offsets;
  std::vector<int> path_data;
  std::vector<int> indeg;
  std::vector<int> outdeg;
  bool has_vnode = false;

  std::span<const int> path(int i, int j) const {
    const auto k = static_cast<std::size_t>(i) * num_nodes + j;
    return {path_data.data() + path_offsets[k], path_data.data() + path_offsets[k + 1]};
  }
  int vnode_index() const { return has_vnode ? num_nodes - 1 : -1; }
};

struct Degrees {
  std::vector<int> in;
  std::vector<int> out;
};

struct WLColoring {
  std::vector<std::uint64_t> colors;
  int rounds = 0;

  /// Sorted color multiset; comparable across graphs refined for the same
  /// number of rounds.
  std::vector<std::uint64_t> histogram() const;
};

/// Throws Error when an edge endpoint or a feature index is out of range.
/// Empty vocabulary spans skip the feature checks.
void validate(const Graph& g, std::span<const int> node_vocab = {}, std::span<const int> edge_vocab = {});

/// Neighbor lists of (node, edge id), sorted by node then edge id. Undirected
/// graphs are symmetrized; directed graphs keep forward edges only.
std::vector<std::vector<std::pair<int, int>>> adjacency(const Graph& g);

Degrees compute_degrees(const Graph& g);

/// BFS from every node. Unreachable pairs hold kUnreachable, the diagonal 0.
SpdMatrix shortest_path_distances(const Graph& g);

/// One shortest path per ordered pair. The predecessor of each node is its
/// lowest-index neighbor one level closer to the source (lowest edge id among
/// parallel edges). Paths longer than max_len keep their first max_len edges.
StructuralFeatures shortest_path_edges(const Graph& g, int max_len);

/// spd, paths and degrees in one call.
StructuralFeatures compute_structural_features(const Graph& g, int max_path_len);

/// Appends the virtual node as index n. Its distances use kVNodeDistance, its
/// paths are empty and its degrees are 0 (routed to a reserved embedding row
/// by the encoder). Throws Error if already attached.
std::pair<Graph, StructuralFeatures> attach_virtual_node(const Graph& g, const StructuralFeatures& sf);

/// The graph half of attach_virtual_node: one extra node carrying the
/// reserved feature token, no edges.
Graph with_virtual_node_token(const Graph& g);

/// Color refinement until the partition is stable or max_rounds is reached.
WLColoring wl1_refinement(const Graph& g, int max_rounds);

/// True when 1-WL refinement of the disjoint union leaves both graphs with the
/// same color histogram.
bool wl1_indistinguishable(const Graph& a, const Graph& b, int max_rounds);

/// Per-node sorted SPD rows, the collection sorted lexicographically.
std::vector<std::vector<int>> spd_multiset_signature(const Graph& g);

/// Relabels nodes: node i becomes perm[i]. Edge order and features are kept.
Graph permute_graph(const Graph& g, std::span<const int> perm);

Graph disjoint_union(const Graph& a, const Graph& b);

/// Common fixtures.
Graph cycle_graph(int n);
Graph path_graph(int n);

}  // namespace graphormer
