// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-set attention/FFN weights that make one Graphormer layer reproduce
// message-passing AGGREGATE, COMBINE and READOUT steps, plus the 1-WL versus
// SPD discrimination experiment.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "graphormer/attention.hpp"
#include "graphormer/encoding.hpp"
#include "graphormer/graph.hpp"

namespace graphormer {

enum class ConstructionKind { kMeanAggregate, kSumAggregate, kMaxAggregate, kCombine, kMeanReadout };

/// Weights for one layer's attention (and, when `use_ffn`, its FFN) plus the
/// structural tables they rely on. The first `input_dim` columns of the model
/// width carry H; the rest start at zero.
struct Construction {
  ConstructionKind kind = ConstructionKind::kMeanAggregate;
  std::string name;
  double temperature = 0.0;
  int input_dim = 0;
  int model_dim = 0;
  LayerParams<double> layer;
  EncodingTables<double> tables;
  bool use_centrality = false;
  bool use_spatial = false;
  bool use_ffn = false;
  double fit_residual = 0.0;  // max abs error of the fitted FFN on its training set
};

/// Largest node degree the SUM construction is fitted for.
inline constexpr int kConstructionMaxDegree = 16;

Construction build_mean_aggregate(int d);
Construction build_sum_aggregate(int d, std::uint64_t seed = 0);
Construction build_max_aggregate(int d, double temperature);
Construction build_combine(int d, std::uint64_t seed = 0);
Construction build_mean_readout(int d, double temperature);

/// Runs the constructed attention (then FFN) on H [n x d] over g and returns
/// the first d output columns. Layer norm and residual paths are bypassed.
Eigen::MatrixXd apply_construction(const Construction& c, const Graph& g, const Eigen::MatrixXd& h);

/// Undirected random graph with 2..max_nodes nodes and no isolated node.
Graph sample_construction_graph(Rng& rng, int max_nodes = 12);

struct WlSpdReport {
  bool wl_equal = false;          // C6 vs 2 x C3
  bool spd_differ = false;        // C6 vs 2 x C3
  bool c6_multiset = false;       // every C6 row is {0,1,1,2,2,3}
  bool isomorphic_control = false;  // C6 vs relabeled C6: WL and SPD equal
  bool negative_control = false;    // C6 vs P6: WL differs
  bool passed() const { return wl_equal && spd_differ && c6_multiset && isomorphic_control && negative_control; }
};

WlSpdReport run_wl_vs_spd_experiment(std::uint64_t seed = 0);

struct ExpressRow {
  std::string name;
  double metric = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

/// All five constructions against the reference oracles plus the WL/SPD
/// experiment, one row each.
std::vector<ExpressRow> express_check(std::uint64_t seed);

}  // namespace graphormer
