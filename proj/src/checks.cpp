// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "graphormer/attention.hpp"
#include "graphormer/gradcheck.hpp"
#include "graphormer/io.hpp"
#include "graphormer/synthetic.hpp"

namespace graphormer {
namespace {

using Mat = ad::Matrix<double>;

Mat random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() * scale;
  return m;
}

Graph random_graph(Rng& rng, int n, double p, int node_vocab, int edge_vocab) {
  for (;;) {
    Graph g;
    g.num_nodes = n;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (rng.uniform() < p) g.edges.push_back({i, j});
      }
    }
    if (n > 1 && !(shortest_path_distances(g).array() >= 0).all()) continue;
    for (int i = 0; i < n; ++i) g.node_feats.push_back({static_cast<int>(rng.below(node_vocab))});
    for (std::size_t e = 0; e < g.edges.size(); ++e) g.edge_feats.push_back({static_cast<int>(rng.below(edge_vocab))});
    return g;
  }
}

Graph random_tree(Rng& rng, int n, int node_vocab, int edge_vocab) {
  Graph g;
  g.num_nodes = n;
  for (int i = 1; i < n; ++i) g.edges.push_back({static_cast<int>(rng.below(i)), i});
  for (int i = 0; i < n; ++i) g.node_feats.push_back({static_cast<int>(rng.below(node_vocab))});
  for (std::size_t e = 0; e < g.edges.size(); ++e) g.edge_feats.push_back({static_cast<int>(rng.below(edge_vocab))});
  return g;
}

std::vector<int> random_permutation(Rng& rng, int n) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[rng.below(i + 1)]);
  return p;
}

// Projects a tensor onto fixed random weights so every output coordinate
// contributes to the scalar being differentiated.
ad::Var<double> probe_sum(ad::Var<double> x, const Mat& w) {
  return ad::sum(ad::hadamard(x, x.tape->constant(w)));
}

double op_check_layer_norm(Rng& rng) {
  const Mat w = random_matrix(rng, 5, 7);
  ad::MultiFunction<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) {
    return probe_sum(ad::layer_norm(v[0], v[1], v[2]), w);
  };
  return ad::finite_difference_check<double>(
      f, {random_matrix(rng, 5, 7), random_matrix(rng, 1, 7), random_matrix(rng, 1, 7)});
}

double op_check_gelu(Rng& rng) {
  const Mat w = random_matrix(rng, 4, 6);
  ad::Function<double> f = [&](ad::Tape<double>&, ad::Var<double> x) { return probe_sum(ad::gelu(x), w); };
  return ad::finite_difference_check<double>(f, random_matrix(rng, 4, 6, 2.0));
}

double op_check_attention(Rng& rng) {
  const BiasLayout layout{2, 4, 2};
  const Mat w = random_matrix(rng, 8, 6);
  ad::MultiFunction<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) {
    Rng unused(0);
    return probe_sum(attention_core(v[0], v[1], v[2], v[3], layout, 0.0, false, unused), w);
  };
  return ad::finite_difference_check<double>(f, {random_matrix(rng, 8, 6), random_matrix(rng, 8, 6),
                                                 random_matrix(rng, 8, 6), random_matrix(rng, layout.rows(), 4)});
}

double op_check_edge_bias(Rng& rng) {
  const Graph g = random_graph(rng, 6, 0.5, 1, 3);
  const auto sf = compute_structural_features(g, 4);
  const int heads = 2, edge_dim = 3;
  const Mat w = random_matrix(rng, heads * 6, 6);
  ad::MultiFunction<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) {
    return probe_sum(edge_bias(v[0], v[1], path_table(sf), BiasLayout{1, 6, heads}), w);
  };
  return ad::finite_difference_check<double>(
      f, {random_matrix(rng, static_cast<Eigen::Index>(g.edges.size()), edge_dim),
          random_matrix(rng, heads * 4, edge_dim)});
}

}  // namespace

ModelConfig check_model_config(int num_layers) {
  ModelConfig cfg;
  cfg.num_layers = num_layers;
  cfg.hidden_dim = 16;
  cfg.num_heads = 4;
  cfg.edge_dim = 4;
  cfg.max_degree = 8;
  cfg.max_spd = 6;
  cfg.max_path_len = 5;
  cfg.node_vocab = {3};
  cfg.edge_vocab = {3};
  return cfg;
}

ModelParams<double> widened_params(const ModelConfig& cfg, Rng& rng, double factor) {
  auto p = ModelParams<double>::init(cfg, rng);
  for (auto& [name, m] : p.named()) {
    if (name.find("gamma") == std::string::npos) *m *= factor;
  }
  return p;
}

double model_gradient_check(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x6c));
  const auto cfg = check_model_config(2);
  const auto p = widened_params(cfg, rng, 10.0);
  std::vector<PreparedGraph> pg{prepare_graph(random_graph(rng, 6, 0.5, 3, 3), cfg.max_path_len)};
  auto batch = make_batch(pg, cfg);
  // Keep the L1 loss away from its kink.
  batch.targets(0) = 100.0;
  ad::MultiFunction<double> f = [&](ad::Tape<double>&, std::span<const ad::Var<double>> v) {
    const auto vars = ModelVars<double>::bind(v, p);
    Rng r(0);
    return loss(forward(*v[0].tape, vars, batch, cfg, false, r), batch.targets, cfg.task);
  };
  return ad::finite_difference_check<double>(f, p.values());
}

std::vector<GradcheckRow> gradcheck_suite(std::uint64_t seed, int num_seeds) {
  Rng rng(Rng::derive(seed, 0x6d));
  std::vector<GradcheckRow> rows;
  rows.push_back({"layer_norm", op_check_layer_norm(rng)});
  rows.push_back({"gelu", op_check_gelu(rng)});
  rows.push_back({"attention", op_check_attention(rng)});
  rows.push_back({"edge_bias", op_check_edge_bias(rng)});
  double worst = 0.0;
  for (int k = 0; k < num_seeds; ++k) worst = std::max(worst, model_gradient_check(seed + static_cast<std::uint64_t>(k)));
  rows.push_back({"model(" + std::to_string(num_seeds) + " seeds)", worst});
  return rows;
}

double permutation_invariance_error(std::uint64_t seed, int num_graphs, int num_perms) {
  Rng rng(Rng::derive(seed, 0x70));
  const auto cfg = check_model_config(2);
  const auto p = widened_params(cfg, rng, 25.0);
  auto predict_one = [&](const Graph& g) {
    std::vector<PreparedGraph> pg{prepare_graph(g, cfg.max_path_len)};
    return predict(p, make_batch(pg, cfg), cfg)(0);
  };
  double worst = 0.0;
  for (int t = 0; t < num_graphs; ++t) {
    const int n = 2 + static_cast<int>(rng.below(10));
    // Trees have unique shortest paths; elsewhere the recorded path between
    // equidistant alternatives depends on node order, so edge features are
    // held constant.
    const Graph g = t % 2 ? random_tree(rng, n, 3, 3) : random_graph(rng, n, 0.4, 3, 1);
    const double base = predict_one(g);
    for (int k = 0; k < num_perms; ++k) {
      const auto perm = random_permutation(rng, n);
      worst = std::max(worst, std::abs(predict_one(permute_graph(g, perm)) - base));
    }
  }
  return worst;
}

AblationData ablation_data(std::uint64_t data_seed, int num_train, int num_valid) {
  const auto ds = generate_synthetic(SyntheticTask::kDiameter, num_train + num_valid, data_seed);
  auto all = prepare_all(ds.graphs, ablation_base_config().model.max_path_len);
  AblationData d;
  d.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + num_train));
  d.valid.assign(std::make_move_iterator(all.begin() + num_train), std::make_move_iterator(all.end()));
  return d;
}

TrainConfig ablation_base_config() {
  TrainConfig t;
  t.model.num_layers = 4;
  t.model.hidden_dim = 64;
  t.model.num_heads = 8;
  t.model.node_vocab = {SyntheticOptions{}.node_types};
  t.model.edge_vocab = {2};
  t.optim.peak_lr = 5e-4;
  t.optim.total_steps = 5000;
  t.optim.warmup_steps = 300;
  t.batch_size = 32;
  t.eval_every = 500;
  return t;
}

const std::vector<AblationVariant>& ablation_variants() {
  static const std::vector<AblationVariant> v{{"0-none", false, false, false},
                                              {"1-spatial", true, false, false},
                                              {"2-spatial+centrality", true, true, false},
                                              {"3-all", true, true, true}};
  return v;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw Error("median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

double median_abs_deviation(const std::vector<double>& xs) {
  const double m = median(xs);
  std::vector<double> dev;
  for (double x : xs) dev.push_back(std::abs(x - m));
  return median(dev);
}

std::vector<AblationRow> run_ablation(const std::vector<PreparedGraph>& train_set,
                                      const std::vector<PreparedGraph>& valid_set, const TrainConfig& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw Error("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants()) {
    AblationRow row;
    row.name = v.name;
    for (auto seed : seeds) {
      TrainConfig cfg = base;
      cfg.model.use_spatial = v.use_spatial;
      cfg.model.use_centrality = v.use_centrality;
      cfg.model.use_edge = v.use_edge;
      cfg.seed = seed;
      const auto r = train(train_set, valid_set, cfg);
      row.valid_mae.push_back(r.best_valid);
      if (progress) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s seed %llu: best valid MAE %.6f at step %ld", v.name.c_str(),
                      static_cast<unsigned long long>(seed), r.best_valid, r.best_step);
        progress(buf);
      }
    }
    row.median = median(row.valid_mae);
    row.mad = median_abs_deviation(row.valid_mae);
    rows.push_back(std::move(row));
  }
  return rows;
}

bool ablation_ordering_holds(const std::vector<AblationRow>& rows, std::string* why) {
  if (rows.size() != 4) {
    if (why) *why = "expected 4 ablation rows";
    return false;
  }
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& a = rows[i];
    const auto& b = rows[i + 1];
    const double gap = a.median - b.median;
    const double mad = std::max(a.mad, b.mad);
    if (!(gap > mad)) {
      if (why) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s (%.6f) vs %s (%.6f): gap %.6f not above MAD %.6f", a.name.c_str(), a.median,
                      b.name.c_str(), b.median, gap, mad);
        *why = buf;
      }
      return false;
    }
  }
  return true;
}

std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds) {
  std::ostringstream out;
  out << "config,valid_mae,mad";
  for (auto s : seeds) out << ",seed_" << s;
  out << '\n';
  char buf[32];
  auto num = [&](double x) {
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.name << ',' << num(r.median) << ',' << num(r.mad);
    for (double x : r.valid_mae) out << ',' << num(x);
    out << '\n';
  }
  return out.str();
}

}  // namespace graphormer
