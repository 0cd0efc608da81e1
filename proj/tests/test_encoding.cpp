// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "graphormer/attention.hpp"
#include "graphormer/encoding.hpp"
#include "graphormer/gradcheck.hpp"
#include "test_util.hpp"

namespace graphormer {
namespace {

using Mat = ad::Matrix<double>;
using Tables = EncodingTables<double>;
using Vars = EncodingVars<double>;

Mat random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return m;
}

Tables small_tables(int d = 4, int heads = 2, int edge_dim = 3) {
  return Tables::zeros(d, heads, edge_dim, 8, 6, 5, {3});
}

// Spatial bias of head h as an n x n matrix.
Mat head_block(const Mat& bias, int n, int h) { return bias.middleRows(static_cast<Eigen::Index>(h) * n, n); }

TEST(Centrality, ZeroTablesAreIdentity) {
  ad::Tape<double> t;
  Rng rng(1);
  const auto g = testing::random_connected_graph(rng, 5, 0.5);
  const auto sf = compute_structural_features(g, 5);
  const Mat x = random_matrix(rng, 5, 4);
  auto vars = Vars::on(t, small_tables());
  EXPECT_EQ(centrality_encode(t.constant(x), sf, false, vars).value(), x);
}

TEST(Centrality, DirectedEdgeUsesInAndOutRows) {
  Graph g;
  g.num_nodes = 2;
  g.directed = true;
  g.edges = {{0, 1}};
  const auto sf = compute_structural_features(g, 5);
  auto tables = Tables::zeros(20, 1, 1, 8, 6, 5);
  for (int k = 0; k < 10; ++k) {
    tables.z_in(k, k) = 1.0;
    tables.z_out(k, 10 + k) = 1.0;
  }
  ad::Tape<double> t;
  auto y = centrality_encode(t.constant(Mat::Zero(2, 20)), sf, true, Vars::on(t, tables)).value();
  // Node 0: indegree 0, outdegree 1.
  EXPECT_EQ(y.row(0), (tables.z_in.row(0) + tables.z_out.row(1)).eval());
  EXPECT_EQ(y.row(1), (tables.z_in.row(1) + tables.z_out.row(0)).eval());
}

TEST(Centrality, UndirectedUsesOneDegreeTable) {
  Graph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {1, 2}};
  const auto sf = compute_structural_features(g, 5);
  auto tables = Tables::zeros(4, 1, 1, 8, 6, 5);
  for (int k = 0; k < 10; ++k) {
    tables.z_in(k, 0) = k;
    tables.z_out(k, 1) = 100 + k;
  }
  ad::Tape<double> t;
  const Mat y = centrality_encode(t.constant(Mat::Zero(3, 4)), sf, false, Vars::on(t, tables)).value();
  EXPECT_EQ(y.col(0), Eigen::Vector3d(1, 2, 1));
  EXPECT_TRUE(y.col(1).isZero());
}

TEST(Centrality, DegreeClampsAndVirtualNodeRow) {
  EXPECT_EQ(degree_code(100, 64, false), 64);
  EXPECT_EQ(degree_code(3, 64, false), 3);
  EXPECT_EQ(degree_code(0, 64, true), 65);
  EXPECT_EQ(spd_code(25, 20), 20);
  EXPECT_EQ(spd_code(kUnreachable, 20), 21);
  EXPECT_EQ(spd_code(kVNodeDistance, 20), 22);
}

TEST(SpatialBias, ZeroTableGivesZero) {
  ad::Tape<double> t;
  const auto sf = compute_structural_features(cycle_graph(6), 5);
  EXPECT_TRUE(spatial_bias(sf, Vars::on(t, small_tables())).value().isZero(0.0));
}

TEST(SpatialBias, NeighborMaskTable) {
  auto tables = small_tables(4, 1);
  tables.b_spatial.setConstant(kNegInfBias);
  tables.b_spatial(0, 1) = 0.0;
  ad::Tape<double> t;
  const auto sf = compute_structural_features(path_graph(3), 5);
  const Mat b = spatial_bias(sf, Vars::on(t, tables)).value();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) EXPECT_EQ(b(i, j), std::abs(i - j) == 1 ? 0.0 : kNegInfBias);
  }
}

TEST(SpatialBias, SymmetricOnCycleAndVirtualNodeCode) {
  auto tables = small_tables();
  Rng rng(2);
  tables.b_spatial = random_matrix(rng, 2, tables.b_spatial.cols());
  ad::Tape<double> t;
  const auto g = cycle_graph(6);
  const auto sf = compute_structural_features(g, 5);
  const Mat b = spatial_bias(sf, Vars::on(t, tables)).value();
  for (int h = 0; h < 2; ++h) EXPECT_EQ(head_block(b, 6, h), head_block(b, 6, h).transpose());

  const auto [gv, sv] = attach_virtual_node(g, sf);
  const Mat bv = spatial_bias(sv, Vars::on(t, tables)).value();
  const int vcode = tables.max_spd() + 2;
  for (int h = 0; h < 2; ++h) {
    for (int j = 0; j < 6; ++j) {
      EXPECT_EQ(bv(h * 7 + 6, j), tables.b_spatial(h, vcode));
      EXPECT_EQ(bv(h * 7 + j, 6), tables.b_spatial(h, vcode));
    }
    EXPECT_EQ(bv(h * 7 + 6, 6), tables.b_spatial(h, 0));
  }
}

TEST(EdgeBias, ZeroWeightsGiveZero) {
  ad::Tape<double> t;
  Rng rng(3);
  const auto sf = compute_structural_features(cycle_graph(5), 5);
  auto vars = Vars::on(t, small_tables());
  EXPECT_TRUE(edge_bias(sf, t.constant(random_matrix(rng, 5, 3)), vars).value().isZero(0.0));
}

TEST(EdgeBias, UnitDotProduct) {
  auto tables = small_tables(4, 1);
  tables.w_edge(0, 0) = 1.0;
  ad::Tape<double> t;
  const auto sf = compute_structural_features(path_graph(2), 5);
  Mat x = Mat::Zero(1, 3);
  x(0, 0) = 1.0;
  const Mat c = edge_bias(sf, t.constant(x), Vars::on(t, tables)).value();
  EXPECT_EQ(c(0, 1), 1.0);
  EXPECT_EQ(c(1, 0), 1.0);
  EXPECT_EQ(c(0, 0), 0.0);
}

TEST(EdgeBias, AveragesAlongPath) {
  auto tables = small_tables(4, 1);
  tables.w_edge(0, 0) = 1.0;  // position 0
  tables.w_edge(1, 1) = 3.0;  // position 1
  ad::Tape<double> t;
  const auto sf = compute_structural_features(path_graph(3), 5);
  Mat x = Mat::Zero(2, 3);
  x(0, 0) = x(0, 1) = 1.0;
  x(1, 0) = x(1, 1) = 1.0;
  const Mat c = edge_bias(sf, t.constant(x), Vars::on(t, tables)).value();
  EXPECT_EQ(c(0, 2), 2.0);  // (1 + 3) / 2
  EXPECT_EQ(c(2, 0), 2.0);
}

TEST(EdgeBias, EmptyForVirtualNodeAndUnreachable) {
  Rng rng(4);
  auto tables = small_tables();
  tables.w_edge = random_matrix(rng, tables.w_edge.rows(), 3);
  auto g = disjoint_union(path_graph(2), path_graph(2));
  const auto sf = compute_structural_features(g, 5);
  const auto [gv, sv] = attach_virtual_node(g, sf);
  ad::Tape<double> t;
  const Mat c = edge_bias(sv, t.constant(random_matrix(rng, 2, 3)), Vars::on(t, tables)).value();
  for (int h = 0; h < 2; ++h) {
    for (int j = 0; j < 5; ++j) {
      EXPECT_EQ(c(h * 5 + 4, j), 0.0);
      EXPECT_EQ(c(h * 5 + j, 4), 0.0);
    }
    EXPECT_EQ(c(h * 5 + 0, 2), 0.0);
    EXPECT_NE(c(h * 5 + 0, 1), 0.0);
  }
}

TEST(EdgeBias, LinearInWeights) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = testing::random_connected_graph(rng, 7, 0.4);
    const auto sf = compute_structural_features(g, 5);
    auto tables = small_tables();
    tables.w_edge = random_matrix(rng, tables.w_edge.rows(), 3);
    const Mat x = random_matrix(rng, static_cast<Eigen::Index>(g.edges.size()), 3);
    ad::Tape<double> t;
    const Mat c1 = edge_bias(sf, t.constant(x), Vars::on(t, tables)).value();
    tables.w_edge *= 2.5;
    const Mat c2 = edge_bias(sf, t.constant(x), Vars::on(t, tables)).value();
    EXPECT_LT((c2 - 2.5 * c1).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(EdgeBias, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  const auto g = testing::random_connected_graph(rng, 6, 0.5);
  const auto sf = compute_structural_features(g, 3);
  const PathTable paths = path_table(sf);
  const BiasLayout layout{1, 6, 2};
  ad::MultiFunction<double> f = [&](ad::Tape<double>& t, std::span<const ad::Var<double>> v) {
    auto c = edge_bias(v[0], v[1], paths, layout);
    Rng w(9);
    return ad::sum(ad::hadamard(c, t.constant(random_matrix(w, c.rows(), c.cols()))));
  };
  const double err = ad::finite_difference_check<double>(
      f, {random_matrix(rng, static_cast<Eigen::Index>(g.edges.size()), 3), random_matrix(rng, 6, 3)});
  EXPECT_LT(err, 1e-8);
}

TEST(EdgeBias, EmbeddingSumsVocabularyRows) {
  auto tables = Tables::zeros(4, 1, 2, 4, 4, 4, {2, 3});
  tables.edge_embed << 1, 0, 2, 0, 0, 10, 0, 20, 0, 30;
  ad::Tape<double> t;
  const Mat x = embed_edges<double>({{1, 2}, {0, 0}}, Vars::on(t, tables)).value();
  EXPECT_EQ(x(0, 0), 2.0);
  EXPECT_EQ(x(0, 1), 30.0);
  EXPECT_EQ(x(1, 0), 1.0);
  EXPECT_EQ(x(1, 1), 10.0);
}

TEST(Assemble, ZeroWithoutPadding) {
  ad::Tape<double> t;
  const BiasLayout layout{1, 3, 2};
  std::vector<std::uint8_t> valid(3, 1);
  auto z = t.constant(Mat::Zero(6, 3));
  EXPECT_TRUE(assemble_attention_bias<double>(t, z, z, valid, layout).value().isZero(0.0));
}

TEST(Assemble, PaddingColumnsAndSum) {
  Rng rng(7);
  ad::Tape<double> t;
  const BiasLayout layout{2, 4, 3};
  std::vector<std::uint8_t> valid{1, 1, 1, 0, 1, 1, 0, 0};
  const Mat s = random_matrix(rng, layout.rows(), 4), e = random_matrix(rng, layout.rows(), 4);
  const Mat b = assemble_attention_bias<double>(t, t.constant(s), t.constant(e), valid, layout).value();
  for (int g = 0; g < 2; ++g) {
    for (int h = 0; h < 3; ++h) {
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          const auto r = layout.row(g, h, i);
          if (valid[g * 4 + j]) {
            EXPECT_EQ(b(r, j), s(r, j) + e(r, j));
          } else {
            EXPECT_LE(b(r, j), -1e9);
          }
        }
      }
    }
  }
  EXPECT_TRUE(b.allFinite());
  EXPECT_THROW(assemble_attention_bias<double>(t, t.constant(Mat::Zero(2, 2)), std::nullopt, valid, layout), Error);
}

// Trees have unique shortest paths, so biases are exactly equivariant.
TEST(Encoding, PermutationEquivariantOnTrees) {
  Rng rng(8);
  auto tables = small_tables();
  tables.b_spatial = random_matrix(rng, 2, tables.b_spatial.cols());
  tables.w_edge = random_matrix(rng, tables.w_edge.rows(), 3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    const auto g = testing::random_tree(rng, n);
    const auto perm = testing::random_permutation(rng, n);
    const auto gp = permute_graph(g, perm);
    const Mat x = random_matrix(rng, n - 1, 3);
    ad::Tape<double> t;
    auto vars = Vars::on(t, tables);
    const auto sf = compute_structural_features(g, 5), sfp = compute_structural_features(gp, 5);
    const Mat s = spatial_bias(sf, vars).value(), sp = spatial_bias(sfp, vars).value();
    const Mat c = edge_bias(sf, t.constant(x), vars).value(), cp = edge_bias(sfp, t.constant(x), vars).value();
    for (int h = 0; h < 2; ++h) {
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          EXPECT_EQ(sp(h * n + perm[i], perm[j]), s(h * n + i, j));
          EXPECT_EQ(cp(h * n + perm[i], perm[j]), c(h * n + i, j));
        }
      }
    }
  }
}

// ---- attention ----

TEST(Attention, UniformAttentionGivesColumnMean) {
  Rng rng(10);
  auto p = LayerParams<double>::zeros(4, 1);
  p.w_v = p.w_o = Mat::Identity(4, 4);
  ad::Tape<double> t;
  const Mat h = random_matrix(rng, 3, 4);
  auto out = multi_head_attention(t.constant(h), t.constant(Mat::Zero(3, 3)), LayerVars<double>::on(t, p),
                                  BiasLayout{1, 3, 1}, LayerOptions{}, rng);
  for (int i = 0; i < 3; ++i) EXPECT_LT((out.value().row(i) - h.colwise().mean()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, NeighborMaskOnPath) {
  Rng rng(11);
  auto p = LayerParams<double>::zeros(4, 1);
  p.w_v = p.w_o = Mat::Identity(4, 4);
  auto tables = small_tables(4, 1);
  tables.b_spatial.setConstant(kNegInfBias);
  tables.b_spatial(0, 1) = 0.0;
  ad::Tape<double> t;
  const auto sf = compute_structural_features(path_graph(3), 5);
  const Mat h = random_matrix(rng, 3, 4);
  auto out = multi_head_attention(t.constant(h), spatial_bias(sf, Vars::on(t, tables)), LayerVars<double>::on(t, p),
                                  BiasLayout{1, 3, 1}, LayerOptions{}, rng);
  EXPECT_LT((out.value().row(0) - h.row(1)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((out.value().row(1) - (h.row(0) + h.row(2)) / 2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Attention, RowsAreConvexCombinations) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 6, H = 2;
    auto p = LayerParams<double>::init(8, H, rng);
    for (auto* m : {&p.w_q, &p.w_k}) *m *= 20.0;
    p.w_o = Mat::Identity(8, 8);
    ad::Tape<double> t;
    const Mat h = random_matrix(rng, n, 8);
    const BiasLayout layout{1, n, H};
    AttentionProbe<double> probe;
    auto out = multi_head_attention(t.constant(h), t.constant(random_matrix(rng, layout.rows(), n)),
                                    LayerVars<double>::on(t, p), layout, LayerOptions{}, rng, &probe);
    const Mat v = h * p.w_v;
    EXPECT_GE(probe.weights.minCoeff(), 0.0);
    for (int hd = 0; hd < H; ++hd) {
      for (int i = 0; i < n; ++i) {
        EXPECT_NEAR(probe.weights.row(layout.row(0, hd, i)).sum(), 1.0, 1e-12);
        const Eigen::RowVectorXd expected = probe.weights.row(layout.row(0, hd, i)) * v.middleCols(hd * 4, 4);
        EXPECT_LT((out.value().row(i).segment(hd * 4, 4) - expected).cwiseAbs().maxCoeff(), 1e-10);
      }
    }
  }
}

TEST(Layer, ZeroBranchesAreIdentity) {
  Rng rng(13);
  auto p = LayerParams<double>::zeros(8, 2);
  p.ln1_gamma.setZero();
  p.ln2_gamma.setZero();
  ad::Tape<double> t;
  const Mat h = random_matrix(rng, 5, 8);
  auto out = graphormer_layer(t.constant(h), t.constant(Mat::Zero(10, 5)), LayerVars<double>::on(t, p),
                              BiasLayout{1, 5, 2}, LayerOptions{}, rng);
  EXPECT_EQ(out.value(), h);
  // Zero attention and FFN weights alone already give the identity.
  auto q = LayerParams<double>::zeros(8, 2);
  auto out2 = graphormer_layer(t.constant(h), t.constant(Mat::Zero(10, 5)), LayerVars<double>::on(t, q),
                               BiasLayout{1, 5, 2}, LayerOptions{}, rng);
  EXPECT_EQ(out2.value(), h);
}

TEST(Layer, GradientOnFiveNodeGraph) {
  Rng rng(14);
  const auto g = testing::random_connected_graph(rng, 5, 0.5);
  const auto sf = compute_structural_features(g, 4);
  auto tables = small_tables(8, 2);
  tables.b_spatial = random_matrix(rng, 2, tables.b_spatial.cols());
  auto p = LayerParams<double>::init(8, 2, rng);
  for (auto* m : {&p.w_q, &p.w_k, &p.w_v, &p.w_o, &p.ffn_w1, &p.ffn_w2}) *m *= 20.0;
  const Mat h = random_matrix(rng, 5, 8);
  // Inputs: H, then every layer weight.
  ad::MultiFunction<double> f = [&](ad::Tape<double>& t, std::span<const ad::Var<double>> v) {
    auto bias = spatial_bias(t.constant(tables.b_spatial), std::vector<int>([&] {
                               std::vector<int> codes;
                               for (int i = 0; i < 5; ++i) {
                                 for (int j = 0; j < 5; ++j) codes.push_back(spd_code(sf.spd(i, j), tables.max_spd()));
                               }
                               return codes;
                             }()),
                             BiasLayout{1, 5, 2});
    LayerVars<double> lv;
    lv.num_heads = 2;
    lv.w_q = v[1];
    lv.w_k = v[2];
    lv.w_v = v[3];
    lv.w_o = v[4];
    lv.ffn_w1 = v[5];
    lv.ffn_b1 = v[6];
    lv.ffn_w2 = v[7];
    lv.ffn_b2 = v[8];
    lv.ln1_gamma = v[9];
    lv.ln1_beta = v[10];
    lv.ln2_gamma = v[11];
    lv.ln2_beta = v[12];
    Rng r(0);
    auto out = graphormer_layer(v[0], bias, lv, BiasLayout{1, 5, 2}, LayerOptions{}, r);
    Rng w(3);
    return ad::sum(ad::hadamard(out, t.constant(random_matrix(w, 5, 8))));
  };
  std::vector<Mat> inputs{h,        p.w_q,    p.w_k,     p.w_v,     p.w_o,     p.ffn_w1,  p.ffn_b1,
                          p.ffn_w2, p.ffn_b2, p.ln1_gamma, p.ln1_beta, p.ln2_gamma, p.ln2_beta};
  EXPECT_LT(ad::finite_difference_check<double>(f, inputs), 1e-4);
}

TEST(Layer, TwelveLayersStayBounded) {
  Rng rng(15);
  const auto g = testing::random_connected_graph(rng, 10, 0.3);
  const auto sf = compute_structural_features(g, 5);
  auto tables = Tables::zeros(32, 4, 4, 8, 6, 5);
  for (Eigen::Index i = 0; i < tables.b_spatial.size(); ++i) tables.b_spatial.data()[i] = rng.truncated_normal(0.02);
  ad::Tape<double> t;
  auto bias = spatial_bias(sf, EncodingVars<double>::on(t, tables, false));
  const Mat h = random_matrix(rng, 10, 32);
  auto x = t.constant(h);
  for (int l = 0; l < 12; ++l) {
    x = graphormer_layer(x, bias, LayerVars<double>::on(t, LayerParams<double>::init(32, 4, rng), false),
                         BiasLayout{1, 10, 4}, LayerOptions{}, rng);
  }
  EXPECT_TRUE(x.value().allFinite());
  EXPECT_LT(x.value().norm(), 10.0 * h.norm());
}

TEST(Layer, PermutationEquivariant) {
  Rng rng(16);
  auto tables = small_tables(8, 2);
  tables.b_spatial = random_matrix(rng, 2, tables.b_spatial.cols());
  tables.w_edge = random_matrix(rng, tables.w_edge.rows(), 3);
  const auto p = LayerParams<double>::init(8, 2, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    const auto g = testing::random_tree(rng, n);
    const auto perm = testing::random_permutation(rng, n);
    const auto gp = permute_graph(g, perm);
    const Mat h = random_matrix(rng, n, 8), x = random_matrix(rng, n - 1, 3);
    Mat hp(n, 8);
    for (int i = 0; i < n; ++i) hp.row(perm[i]) = h.row(i);
    auto run = [&](const Graph& gr, const Mat& in) {
      ad::Tape<double> t;
      auto vars = Vars::on(t, tables, false);
      const auto sf = compute_structural_features(gr, 5);
      std::vector<std::uint8_t> valid(n, 1);
      const BiasLayout layout{1, n, 2};
      auto bias = assemble_attention_bias<double>(t, spatial_bias(sf, vars), edge_bias(sf, t.constant(x), vars), valid,
                                                  layout);
      Rng r(0);
      return Mat(graphormer_layer(t.constant(in), bias, LayerVars<double>::on(t, p, false), layout, LayerOptions{}, r)
                     .value());
    };
    const Mat out = run(g, h), outp = run(gp, hp);
    for (int i = 0; i < n; ++i) EXPECT_LT((outp.row(perm[i]) - out.row(i)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

}  // namespace
}  // namespace graphormer
