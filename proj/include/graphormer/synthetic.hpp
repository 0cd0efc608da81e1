// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>

#include "graphormer/graph.hpp"
#include "graphormer/io.hpp"

namespace graphormer {

enum class SyntheticTask { kDiameter, kAvgSpd, kTriangleCount };

SyntheticTask parse_synthetic_task(const std::string& name);
std::string synthetic_task_name(SyntheticTask t);

struct SyntheticOptions {
  int min_nodes = 6;
  int max_nodes = 14;
  double min_edge_prob = 0.15;  // each graph draws p uniformly from this range
  double max_edge_prob = 0.45;
  int node_types = 4;  // random node label, independent of the target
};

/// Exact target of a connected undirected graph.
double synthetic_target(SyntheticTask task, const Graph& g);

/// Marks each edge whose removal disconnects its endpoints.
std::vector<bool> bridge_edges(const Graph& g);

/// Connected Erdos-Renyi graphs (resampled until connected) with a random
/// node label, a bridge flag as the single edge feature (vocab {2}) and an
/// exact regression target. Deterministic in `seed`.
Dataset generate_synthetic(SyntheticTask task, int num_graphs, std::uint64_t seed, const SyntheticOptions& opt = {});

}  // namespace graphormer
