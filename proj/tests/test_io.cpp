// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "graphormer/io.hpp"
#include "graphormer/synthetic.hpp"
#include "test_util.hpp"

namespace graphormer {
namespace {

namespace fs = std::filesystem;

const char* kHeader = R"({"format": "graphormer-kit", "version": 1, "task": "regression", "node_vocab": [3], "edge_vocab": [2, 2]})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("graphormer_kit_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void expect_same(const Graph& a, const Graph& b) {
  EXPECT_EQ(a.num_nodes, b.num_nodes);
  EXPECT_EQ(a.directed, b.directed);
  ASSERT_EQ(a.edges.size(), b.edges.size());
  for (std::size_t e = 0; e < a.edges.size(); ++e) {
    EXPECT_EQ(a.edges[e].src, b.edges[e].src);
    EXPECT_EQ(a.edges[e].dst, b.edges[e].dst);
  }
  EXPECT_EQ(a.node_feats, b.node_feats);
  EXPECT_EQ(a.edge_feats, b.edge_feats);
  EXPECT_EQ(a.target, b.target);
}

TEST(Dataset, RoundTrip) {
  Rng rng(1);
  Dataset ds;
  ds.node_vocab = {4};
  ds.edge_vocab = {3};
  for (int i = 0; i < 100; ++i) {
    auto g = testing::random_graph(rng, 1 + static_cast<int>(rng.below(10)), 0.3, i % 3 == 0, 4, 3);
    if (i % 5) g.target = rng.uniform(-10, 10);
    ds.graphs.push_back(g);
  }
  std::stringstream ss;
  write_dataset(ss, ds);
  const auto back = parse_dataset(ss);
  EXPECT_EQ(back.node_vocab, ds.node_vocab);
  EXPECT_EQ(back.edge_vocab, ds.edge_vocab);
  ASSERT_EQ(back.graphs.size(), 100u);
  for (int i = 0; i < 100; ++i) expect_same(back.graphs[i], ds.graphs[i]);
}

TEST(Dataset, MalformedLineIsNamed) {
  std::stringstream ss;
  ss << kHeader << '\n';
  for (int i = 0; i < 5; ++i) ss << R"({"nodes": [[0], [1]], "edges": [[0, 1, [0, 1]]], "target": 1})" << '\n';
  ss << R"({"nodes": [[0], [1]], "edges": [[0, 1, [0, 1]], "target": 1})" << '\n';  // line 7
  try {
    parse_dataset(ss, "data.jsonl");
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("data.jsonl:7:"), std::string::npos) << e.what();
  }
}

TEST(Dataset, OutOfVocabularyIsLocated) {
  std::stringstream ss;
  ss << kHeader << '\n' << R"({"nodes": [[0], [3]], "edges": []})" << '\n';
  try {
    parse_dataset(ss, "d");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("d:2:"), std::string::npos) << e.what();
  }
  std::stringstream bad_edge;
  bad_edge << kHeader << '\n' << R"({"nodes": [[0]], "edges": [[0, 4, [0, 0]]]})" << '\n';
  EXPECT_THROW(parse_dataset(bad_edge), Error);
  std::stringstream unknown;
  unknown << kHeader << '\n' << R"({"nodes": [[0]], "colour": 1})" << '\n';
  EXPECT_THROW(parse_dataset(unknown), Error);
}

TEST(Dataset, EmptyAfterHeaderIsEmpty) {
  std::stringstream ss;
  ss << kHeader << '\n';
  EXPECT_TRUE(parse_dataset(ss).graphs.empty());
  std::stringstream none;
  EXPECT_THROW(parse_dataset(none), Error);
}

TEST(RunConfigTest, DefaultsUnknownKeysAndTypes) {
  const auto rc = parse_run_config("{}");
  EXPECT_EQ(rc.train.model.num_layers, 4);
  EXPECT_FALSE(rc.train.flag.has_value());
  EXPECT_THROW(parse_run_config(R"({"num_layer": 2})"), Error);
  EXPECT_THROW(parse_run_config(R"({"num_layers": "2"})"), Error);
  EXPECT_THROW(parse_run_config(R"({"num_layers": 2.5})"), Error);
  EXPECT_THROW(parse_run_config(R"({"hidden_dim": 30, "num_heads": 8})"), Error);
  EXPECT_THROW(parse_run_config(R"({"precision": "float16"})"), Error);
  EXPECT_THROW(parse_run_config("[1, 2]"), Error);
  const auto f = parse_run_config(R"({"flag": true, "flag_steps": 2, "seed": 9, "use_edge": false})");
  ASSERT_TRUE(f.train.flag.has_value());
  EXPECT_EQ(f.train.flag->steps, 2);
  EXPECT_EQ(f.train.seed, 9u);
  EXPECT_FALSE(f.train.model.use_edge);
}

TEST(RunConfigTest, JsonRoundTripKeepsHash) {
  auto rc = parse_run_config(R"({"num_layers": 3, "peak_lr": 0.001, "flag": true, "precision": "float64"})");
  const auto back = parse_run_config(run_config_to_json(rc));
  EXPECT_EQ(config_hash(back), config_hash(rc));
  auto other = rc;
  other.train.seed = 1;
  EXPECT_NE(config_hash(other), config_hash(rc));
  other = rc;
  other.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(other), config_hash(rc));
}

TEST(CheckpointTest, RoundTripAndMagic) {
  const auto dir = scratch("ckpt");
  Checkpoint ck;
  ck.config_hash = 0xabcdef;
  ck.step = 42;
  ck.best_step = 40;
  ck.best_valid = 0.125;
  ck.names = {"a", "b"};
  ck.params = {Eigen::MatrixXd::Random(2, 3), Eigen::MatrixXd::Random(1, 1)};
  ck.m = {Eigen::MatrixXd::Random(2, 3), Eigen::MatrixXd::Random(1, 1)};
  ck.v = {Eigen::MatrixXd::Random(2, 3), Eigen::MatrixXd::Random(1, 1)};
  const auto path = (dir / "x.ckpt").string();
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config_hash, ck.config_hash);
  EXPECT_EQ(back.step, 42);
  EXPECT_EQ(back.best_step, 40);
  EXPECT_EQ(back.best_valid, 0.125);
  EXPECT_EQ(back.names, ck.names);
  for (int i = 0; i < 2; ++i) {
    EXPECT_EQ(back.params[i], ck.params[i]);
    EXPECT_EQ(back.m[i], ck.m[i]);
    EXPECT_EQ(back.v[i], ck.v[i]);
  }
  std::ofstream((dir / "junk").string()) << "nope";
  EXPECT_THROW(load_checkpoint((dir / "junk").string()), Error);
}

bool same_features(const StructuralFeatures& a, const StructuralFeatures& b) {
  return a.num_nodes == b.num_nodes && a.spd == b.spd && a.path_offsets == b.path_offsets &&
         a.path_data == b.path_data && a.indeg == b.indeg && a.outdeg == b.outdeg && a.has_vnode == b.has_vnode;
}

std::vector<StructuralFeatures> features_of(const std::vector<PreparedGraph>& prepared) {
  std::vector<StructuralFeatures> out;
  for (const auto& p : prepared) out.push_back(p.features);
  return out;
}

TEST(FeatureCache, RoundTripAndBitIdentical) {
  const auto dir = scratch("cache");
  const auto ds = generate_synthetic(SyntheticTask::kAvgSpd, 20, 3);
  const auto feats = features_of(prepare_all(ds.graphs, 6));
  save_feature_cache((dir / "a.bin").string(), 77, 6, feats);
  save_feature_cache((dir / "b.bin").string(), 77, 6, features_of(prepare_all(ds.graphs, 6)));
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  const auto back = load_feature_cache((dir / "a.bin").string(), 77, 6);
  ASSERT_TRUE(back.has_value());
  ASSERT_EQ(back->size(), feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) EXPECT_TRUE(same_features((*back)[i], feats[i]));
  EXPECT_FALSE(load_feature_cache((dir / "a.bin").string(), 78, 6).has_value());
  EXPECT_FALSE(load_feature_cache((dir / "a.bin").string(), 77, 5).has_value());
  EXPECT_FALSE(load_feature_cache((dir / "missing.bin").string(), 77, 6).has_value());
}

TEST(Workers, ParallelMatchesSerial) {
  const auto ds = generate_synthetic(SyntheticTask::kDiameter, 40, 5);
  ::setenv("GRAPHORMER_KIT_THREADS", "4", 1);
  EXPECT_EQ(worker_threads(), 4);
  const auto par = prepare_all(ds.graphs, 4);
  ::setenv("GRAPHORMER_KIT_THREADS", "1", 1);
  EXPECT_EQ(worker_threads(), 1);
  const auto ser = prepare_all(ds.graphs, 4);
  ::unsetenv("GRAPHORMER_KIT_THREADS");
  ASSERT_EQ(par.size(), ser.size());
  for (std::size_t i = 0; i < par.size(); ++i) {
    EXPECT_TRUE(same_features(par[i].features, ser[i].features));
    EXPECT_TRUE(same_features(par[i].features, prepare_graph(ds.graphs[i], 4).features));
  }
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}

Graph undirected(int n, std::vector<std::pair<int, int>> edges) {
  Graph g;
  g.num_nodes = n;
  for (auto [a, b] : edges) g.edges.push_back({a, b});
  g.node_feats.assign(n, {0});
  g.edge_feats.assign(edges.size(), {0});
  return g;
}

TEST(Synthetic, Targets) {
  const auto c6 = undirected(6, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 0}});
  EXPECT_EQ(synthetic_target(SyntheticTask::kDiameter, c6), 3.0);
  EXPECT_EQ(synthetic_target(SyntheticTask::kTriangleCount, c6), 0.0);
  EXPECT_NEAR(synthetic_target(SyntheticTask::kAvgSpd, c6), (2 * 1 + 2 * 2 + 3) / 5.0, 1e-12);
  const auto two = undirected(6, {{0, 1}, {1, 2}, {2, 0}, {3, 4}, {4, 5}, {5, 3}, {2, 3}});
  EXPECT_EQ(synthetic_target(SyntheticTask::kTriangleCount, two), 2.0);
  EXPECT_EQ(bridge_edges(two), (std::vector<bool>{false, false, false, false, false, false, true}));
  const auto path = undirected(4, {{0, 1}, {1, 2}, {2, 3}});
  for (bool b : bridge_edges(path)) EXPECT_TRUE(b);
  for (bool b : bridge_edges(c6)) EXPECT_FALSE(b);
}

TEST(Synthetic, TrianglesMatchBruteForce) {
  Rng rng(11);
  for (int t = 0; t < 30; ++t) {
    const auto g = testing::random_graph(rng, 3 + static_cast<int>(rng.below(9)), 0.5);
    std::set<std::pair<int, int>> adj;
    for (const auto& e : g.edges) {
      adj.insert({e.src, e.dst});
      adj.insert({e.dst, e.src});
    }
    int count = 0;
    for (int a = 0; a < g.num_nodes; ++a) {
      for (int b = a + 1; b < g.num_nodes; ++b) {
        for (int c = b + 1; c < g.num_nodes; ++c) count += adj.count({a, b}) && adj.count({b, c}) && adj.count({a, c});
      }
    }
    EXPECT_EQ(synthetic_target(SyntheticTask::kTriangleCount, g), count);
  }
}

TEST(Synthetic, DeterministicFiles) {
  const auto dir = scratch("synth");
  save_dataset((dir / "a.jsonl").string(), generate_synthetic(SyntheticTask::kTriangleCount, 50, 4));
  save_dataset((dir / "b.jsonl").string(), generate_synthetic(SyntheticTask::kTriangleCount, 50, 4));
  save_dataset((dir / "c.jsonl").string(), generate_synthetic(SyntheticTask::kTriangleCount, 50, 5));
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
  const auto ds = load_dataset((dir / "a.jsonl").string());
  ASSERT_EQ(ds.graphs.size(), 50u);
  for (const auto& g : ds.graphs) {
    EXPECT_GE(g.num_nodes, 6);
    EXPECT_LE(g.num_nodes, 14);
    EXPECT_TRUE(testing::connected(g));
  }
}

}  // namespace
}  // namespace graphormer
