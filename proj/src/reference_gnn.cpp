// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/reference_gnn.hpp"

#include <algorithm>
#include <vector>

namespace graphormer {

Eigen::MatrixXd reference_gnn_step(const Graph& g, const Eigen::MatrixXd& h, Aggregation kind,
                                   const Combine& combine) {
  if (h.rows() != g.num_nodes) throw Error("reference_gnn_step: feature rows differ from node count");
  std::vector<std::vector<int>> nbrs(g.num_nodes);
  for (const auto& [s, d] : g.edges) {
    if (s == d) continue;
    nbrs[s].push_back(d);
    if (!g.directed) nbrs[d].push_back(s);
  }
  Eigen::MatrixXd out(h.rows(), h.cols());
  for (int i = 0; i < g.num_nodes; ++i) {
    auto& nb = nbrs[i];
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(h.cols());
    if (!nb.empty()) {
      if (kind == Aggregation::kMax) a = h.row(nb.front());
      for (int j : nb) {
        if (kind == Aggregation::kMax) {
          a = a.cwiseMax(h.row(j));
        } else {
          a += h.row(j);
        }
      }
      if (kind == Aggregation::kMean) a /= static_cast<double>(nb.size());
    }
    out.row(i) = combine ? combine(h.row(i), a) : a;
  }
  return out;
}

Eigen::RowVectorXd reference_readout(const Eigen::MatrixXd& h, Readout kind, std::span<const std::uint8_t> valid) {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(h.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    if (!valid.empty() && !valid[static_cast<std::size_t>(i)]) continue;
    acc += h.row(i);
    ++count;
  }
  if (kind == Readout::kMean && count > 0) acc /= static_cast<double>(count);
  return acc;
}

}  // namespace graphormer
