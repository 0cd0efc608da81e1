// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/synthetic.hpp"

#include <Eigen/Core>

namespace graphormer {

SyntheticTask parse_synthetic_task(const std::string& name) {
  if (name == "diameter") return SyntheticTask::kDiameter;
  if (name == "avg_spd") return SyntheticTask::kAvgSpd;
  if (name == "triangle_count") return SyntheticTask::kTriangleCount;
  throw Error("unknown synthetic task '" + name + "' (expected diameter, avg_spd or triangle_count)");
}

std::string synthetic_task_name(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::kDiameter:
      return "diameter";
    case SyntheticTask::kAvgSpd:
      return "avg_spd";
    case SyntheticTask::kTriangleCount:
      return "triangle_count";
  }
  return "?";
}

double synthetic_target(SyntheticTask task, const Graph& g) {
  const int n = g.num_nodes;
  if (task == SyntheticTask::kTriangleCount) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (const auto& e : g.edges) {
      if (e.src != e.dst) a(e.src, e.dst) = a(e.dst, e.src) = 1.0;
    }
    return std::round((a * a * a).trace() / 6.0);
  }
  const auto spd = shortest_path_distances(g);
  if ((spd.array() < 0).any()) throw Error("synthetic_target: graph is disconnected");
  if (task == SyntheticTask::kDiameter) return spd.maxCoeff();
  if (n < 2) return 0.0;
  return static_cast<double>(spd.sum()) / (static_cast<double>(n) * (n - 1));
}

std::vector<bool> bridge_edges(const Graph& g) {
  std::vector<bool> out(g.edges.size(), false);
  const auto base = shortest_path_distances(g);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    Graph h = g;
    h.edges.erase(h.edges.begin() + static_cast<std::ptrdiff_t>(e));
    const auto [s, d] = g.edges[e];
    out[e] = base(s, d) >= 0 && shortest_path_distances(h)(s, d) < 0;
  }
  return out;
}

Dataset generate_synthetic(SyntheticTask task, int num_graphs, std::uint64_t seed, const SyntheticOptions& opt) {
  if (num_graphs < 0) throw Error("graph count must be >= 0");
  if (opt.min_nodes < 1 || opt.max_nodes < opt.min_nodes) throw Error("invalid node-count range");
  if (!(opt.min_edge_prob > 0.0 && opt.min_edge_prob <= opt.max_edge_prob && opt.max_edge_prob <= 1.0)) {
    throw Error("invalid edge-probability range");
  }
  Dataset ds;
  ds.task = Task::kRegression;
  if (opt.node_types < 1) throw Error("node_types must be >= 1");
  ds.node_vocab = {opt.node_types};
  ds.edge_vocab = {2};
  Rng rng(Rng::derive(seed, 0x51));
  for (int k = 0; k < num_graphs; ++k) {
    const int n = opt.min_nodes + static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.max_nodes - opt.min_nodes + 1)));
    const double p = rng.uniform(opt.min_edge_prob, opt.max_edge_prob);
    Graph g;
    for (;;) {
      g = Graph{};
      g.num_nodes = n;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          if (rng.uniform() < p) g.edges.push_back({i, j});
        }
      }
      if ((shortest_path_distances(g).array() >= 0).all()) break;
    }
    g.node_feats.clear();
    for (int i = 0; i < n; ++i) g.node_feats.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(opt.node_types)))});
    for (bool b : bridge_edges(g)) g.edge_feats.push_back({b ? 1 : 0});
    g.target = synthetic_target(task, g);
    ds.graphs.push_back(std::move(g));
  }
  return ds;
}

}  // namespace graphormer
