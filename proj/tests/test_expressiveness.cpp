// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "graphormer/expressiveness.hpp"
#include "graphormer/reference_gnn.hpp"

namespace graphormer {
namespace {

Eigen::MatrixXd uniform(Rng& rng, int r, int c, double lo, double hi) {
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

TEST(MeanAggregate, PathMatchesOracle) {
  Rng rng(1);
  const auto h = uniform(rng, 3, 4, -1, 1);
  const auto g = path_graph(3);
  EXPECT_LT(max_abs(apply_construction(build_mean_aggregate(4), g, h) - reference_gnn_step(g, h, Aggregation::kMean)),
            1e-6);
}

TEST(MeanAggregate, ConstantInputOnCycle) {
  const Eigen::MatrixXd h = Eigen::RowVectorXd::LinSpaced(3, -1, 1).replicate(6, 1);
  EXPECT_LT(max_abs(apply_construction(build_mean_aggregate(3), cycle_graph(6), h) - h), 1e-15);
}

// An isolated node has no SPD-1 key, so every logit of its row carries the
// same -1e9 bias and the row degrades to uniform attention. Aggregate
// constructions are therefore evaluated on graphs without isolated nodes.
TEST(MeanAggregate, IsolatedNodeRowIsUniformFallback) {
  Rng rng(2);
  Graph g = path_graph(3);
  g.num_nodes = 4;
  const auto h = uniform(rng, 4, 2, -1, 1);
  const auto out = apply_construction(build_mean_aggregate(2), g, h);
  EXPECT_TRUE(out.allFinite());
  EXPECT_LT(max_abs(out.row(3) - h.colwise().mean()), 1e-12);
  EXPECT_LT(max_abs(out.topRows(3) - reference_gnn_step(g, h, Aggregation::kMean).topRows(3)), 1e-12);
}

TEST(SumAggregate, PathMatchesOracle) {
  Rng rng(3);
  const auto c = build_sum_aggregate(4);
  EXPECT_LT(c.fit_residual, 5e-3);
  const auto h = uniform(rng, 3, 4, -1, 1);
  const auto g = path_graph(3);
  EXPECT_LT(max_abs(apply_construction(c, g, h) - reference_gnn_step(g, h, Aggregation::kSum)), 1e-2);
}

TEST(SumAggregate, RegularGraphAndZeroInput) {
  Rng rng(4);
  const auto c = build_sum_aggregate(3);
  const auto g = cycle_graph(6);
  const auto h = uniform(rng, 6, 3, -1, 1);
  EXPECT_LT(max_abs(apply_construction(c, g, h) - 2.0 * reference_gnn_step(g, h, Aggregation::kMean)), 1e-2);
  EXPECT_LT(max_abs(apply_construction(c, g, Eigen::MatrixXd::Zero(6, 3))), 1e-2);
}

TEST(MaxAggregate, TwoValuesAtT50) {
  // Node 0 has neighbors 1 and 2 holding 0.0 and 1.0.
  Graph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {0, 2}};
  Eigen::MatrixXd h(3, 1);
  h << 0.5, 0.0, 1.0;
  const auto out = apply_construction(build_max_aggregate(1, 50.0), g, h);
  EXPECT_NEAR(out(0, 0), 1.0, 1e-2);
}

TEST(MaxAggregate, EqualNeighborValuesAreExact) {
  const Eigen::MatrixXd h = Eigen::MatrixXd::Constant(5, 2, 0.3);
  EXPECT_LT(max_abs(apply_construction(build_max_aggregate(2, 20.0), cycle_graph(5), h) - h), 1e-15);
}

TEST(MaxAggregate, ErrorShrinksWithTemperature) {
  Rng rng(5);
  std::vector<double> e20, e100;
  for (int i = 0; i < 50; ++i) {
    const int d = 1 + i % 8;
    const auto g = sample_construction_graph(rng);
    const auto h = uniform(rng, g.num_nodes, d, 0, 1);
    const auto ref = reference_gnn_step(g, h, Aggregation::kMax);
    e20.push_back(max_abs(apply_construction(build_max_aggregate(d, 20.0), g, h) - ref));
    e100.push_back(max_abs(apply_construction(build_max_aggregate(d, 100.0), g, h) - ref));
  }
  std::sort(e20.begin(), e20.end());
  std::sort(e100.begin(), e100.end());
  EXPECT_LE(e100[25], e20[25]);
}

TEST(Combine, SelfHeadCopiesInput) {
  Rng rng(6);
  auto c = build_combine(3);
  c.use_ffn = false;
  const auto g = cycle_graph(5);
  const auto h = uniform(rng, 5, 3, -1, 1);
  EXPECT_EQ(apply_construction(c, g, h), h);
}

TEST(Combine, MatchesOracleAndZeroAggregate) {
  Rng rng(7);
  const auto c = build_combine(4);
  EXPECT_LT(c.fit_residual, 5e-3);
  const auto g = sample_construction_graph(rng);
  const auto h = uniform(rng, g.num_nodes, 4, -1, 1);
  Combine f = [](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& a) -> Eigen::RowVectorXd { return x + 2 * a; };
  EXPECT_LT(max_abs(apply_construction(c, g, h) - reference_gnn_step(g, h, Aggregation::kMean, f)), 1e-2);
  // Star center whose leaves are all zero: the aggregate vanishes.
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(4, 4);
  z.row(0) = uniform(rng, 1, 4, -1, 1);
  Graph star;
  star.num_nodes = 4;
  star.edges = {{0, 1}, {0, 2}, {0, 3}};
  EXPECT_LT(max_abs(apply_construction(c, star, z).row(0) - z.row(0)), 1e-2);
}

TEST(MeanReadout, RowsEqualColumnMean) {
  Rng rng(8);
  const auto h = uniform(rng, 7, 5, -1, 1);
  const auto g = sample_construction_graph(rng, 7);
  Graph g7 = g;
  g7.num_nodes = 7;
  const auto out = apply_construction(build_mean_readout(5, 3.0), g7, h);
  const Eigen::RowVectorXd mean = reference_readout(h, Readout::kMean);
  for (int r = 0; r < 7; ++r) {
    EXPECT_LT(max_abs(out.row(r) - h.colwise().mean()), 1e-10);
    EXPECT_LT(max_abs(out.row(r) - mean), 1e-10);
    EXPECT_LT(max_abs(out.row(r) - out.row(0)), 1e-12);
  }
}

TEST(MeanReadout, SingleNode) {
  Eigen::MatrixXd h(1, 3);
  h << 0.1, -0.2, 0.3;
  EXPECT_LT(max_abs(apply_construction(build_mean_readout(3, 10.0), path_graph(1), h) - h), 1e-15);
}

TEST(Constructions, ParametersAreFinite) {
  for (const auto& c : {build_mean_aggregate(3), build_sum_aggregate(3), build_max_aggregate(3, 100.0),
                        build_combine(3), build_mean_readout(3, 100.0)}) {
    const auto& p = c.layer;
    for (const auto* m : {&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.ffn_w1, &p.ffn_b1, &p.ffn_w2, &p.ffn_b2}) {
      EXPECT_TRUE(m->allFinite()) << c.name;
    }
    EXPECT_TRUE(c.tables.b_spatial.allFinite()) << c.name;
    EXPECT_TRUE(c.tables.z_in.allFinite() && c.tables.z_out.allFinite()) << c.name;
  }
  EXPECT_THROW(build_max_aggregate(2, 0.0), Error);
  EXPECT_THROW(build_mean_aggregate(0), Error);
}

TEST(WlVsSpd, Report) {
  const auto r = run_wl_vs_spd_experiment(3);
  EXPECT_TRUE(r.wl_equal);
  EXPECT_TRUE(r.spd_differ);
  EXPECT_TRUE(r.c6_multiset);
  EXPECT_TRUE(r.isomorphic_control);
  EXPECT_TRUE(r.negative_control);
}

TEST(ExpressCheck, AllRowsPass) {
  const auto rows = express_check(0);
  ASSERT_EQ(rows.size(), 6u);
  const char* names[] = {"MEAN_AGG", "SUM_AGG", "MAX_AGG", "COMBINE", "MEAN_READOUT", "WL_VS_SPD"};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].name, names[i]);
    EXPECT_TRUE(rows[i].pass) << rows[i].name << ": " << rows[i].detail;
  }
}

}  // namespace
}  // namespace graphormer
