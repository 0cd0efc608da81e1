// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/expressiveness.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "graphormer/reference_gnn.hpp"

namespace graphormer {
namespace {

using Mat = ad::Matrix<double>;

constexpr int kConstructionMaxSpd = 12;
// Input scale of the squaring units; small enough that the quartic term of
// z * erf(z / sqrt(2)) stays far below the fit tolerance.
constexpr double kSquareScale = 3e-4;

EncodingTables<double> construction_tables(int model_dim, int heads) {
  return EncodingTables<double>::zeros(model_dim, heads, 1, kConstructionMaxDegree, kConstructionMaxSpd, 1);
}

// Spatial-bias row letting only one SPD code through.
void only_code(EncodingTables<double>& t, int head, int code) {
  t.b_spatial.row(head).setConstant(kNegInfBias);
  t.b_spatial(head, code) = 0.0;
}

Mat hidden_activations(const LayerParams<double>& p, const Mat& inputs) {
  ad::Tape<double> t;
  auto x = t.constant(inputs);
  return ad::gelu(ad::add_row(ad::matmul(x, t.constant(p.ffn_w1)), t.constant(p.ffn_b1))).value();
}

// Least-squares fit of output column t of W2 (and b2) on the hidden units
// listed in `units`. Returns the max abs residual on the samples.
double fit_output(LayerParams<double>& p, const Mat& hidden, const Eigen::VectorXd& target, int t,
                  const std::vector<int>& units) {
  const Eigen::Index S = hidden.rows();
  Eigen::MatrixXd design(S, static_cast<Eigen::Index>(units.size()) + 1);
  for (std::size_t u = 0; u < units.size(); ++u) design.col(static_cast<Eigen::Index>(u)) = hidden.col(units[u]);
  design.col(design.cols() - 1).setOnes();
  const Eigen::VectorXd w = design.completeOrthogonalDecomposition().solve(target);
  for (std::size_t u = 0; u < units.size(); ++u) p.ffn_w2(units[u], t) = w(static_cast<Eigen::Index>(u));
  p.ffn_b2(0, t) = w(w.size() - 1);
  return (design * w - target).cwiseAbs().maxCoeff();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Eigen::MatrixXd uniform_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  }
  return m;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

Construction build_mean_aggregate(int d) {
  if (d <= 0) throw Error("construction width must be positive");
  Construction c;
  c.kind = ConstructionKind::kMeanAggregate;
  c.name = "MEAN_AGG";
  c.input_dim = c.model_dim = d;
  c.layer = LayerParams<double>::zeros(d, 1);
  c.layer.w_v = c.layer.w_o = Mat::Identity(d, d);
  c.tables = construction_tables(d, 1);
  only_code(c.tables, 0, 1);
  c.use_spatial = true;
  return c;
}

// Head 0 averages neighbors (SPD 1) into coords 0..d-1; head 1 attends only
// to the node itself (SPD 0) and copies the degree channel that the
// centrality table writes into coord d. The FFN multiplies the two.
Construction build_sum_aggregate(int d, std::uint64_t seed) {
  if (d <= 0) throw Error("construction width must be positive");
  const int D = 4 * d;
  Construction c;
  c.kind = ConstructionKind::kSumAggregate;
  c.name = "SUM_AGG";
  c.input_dim = d;
  c.model_dim = D;
  auto& p = c.layer = LayerParams<double>::zeros(D, 2);
  const int dh = D / 2;
  for (int t = 0; t < d; ++t) {
    p.w_v(t, t) = 1.0;
    p.w_o(t, t) = 1.0;
  }
  p.w_v(d, dh) = 1.0;
  p.w_o(dh, d) = 1.0;
  c.tables = construction_tables(D, 2);
  only_code(c.tables, 0, 1);
  only_code(c.tables, 1, 0);
  for (int k = 0; k <= kConstructionMaxDegree; ++k) c.tables.z_in(k, d) = k;
  c.use_spatial = c.use_centrality = c.use_ffn = true;

  // Units 4t..4t+3 see +-s(k + m_t) and +-s(k - m_t); the even part of GELU
  // is then proportional to the square, and the difference of squares to k m_t.
  const double s = kSquareScale;
  for (int t = 0; t < d; ++t) {
    const int u = 4 * t;
    const double sign[4][2] = {{s, s}, {-s, -s}, {s, -s}, {-s, s}};
    for (int q = 0; q < 4; ++q) {
      p.ffn_w1(d, u + q) = sign[q][0];
      p.ffn_w1(t, u + q) = sign[q][1];
    }
  }
  Rng rng(Rng::derive(seed, 0x5u));
  const int S = 4000;
  Mat inputs = Mat::Zero(S, D);
  for (int i = 0; i < S; ++i) {
    inputs(i, d) = 1 + static_cast<double>(rng.below(kConstructionMaxDegree));
    for (int t = 0; t < d; ++t) inputs(i, t) = rng.uniform(-1.0, 1.0);
  }
  const Mat hidden = hidden_activations(p, inputs);
  for (int t = 0; t < d; ++t) {
    const Eigen::VectorXd target = inputs.col(d).cwiseProduct(inputs.col(t));
    c.fit_residual = std::max(c.fit_residual, fit_output(p, hidden, target, t, {4 * t, 4 * t + 1, 4 * t + 2, 4 * t + 3}));
  }
  return c;
}

Construction build_max_aggregate(int d, double temperature) {
  if (d <= 0) throw Error("construction width must be positive");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  Construction c;
  c.kind = ConstructionKind::kMaxAggregate;
  c.name = "MAX_AGG";
  c.temperature = temperature;
  c.input_dim = c.model_dim = d;
  auto& p = c.layer = LayerParams<double>::zeros(d, d);
  p.q_bias = Mat::Constant(1, d, temperature);
  p.w_k = p.w_v = p.w_o = Mat::Identity(d, d);
  c.tables = construction_tables(d, d);
  for (int h = 0; h < d; ++h) only_code(c.tables, h, 1);
  c.use_spatial = true;
  return c;
}

// Head 0 attends to the node itself (SPD 0) and writes h to coords 0..d-1,
// head 1 averages neighbors into coords d..2d-1. The FFN is fitted to
// combine(h, a) = h + 2a on +-x units.
Construction build_combine(int d, std::uint64_t seed) {
  if (d <= 0) throw Error("construction width must be positive");
  const int D = 4 * d;
  Construction c;
  c.kind = ConstructionKind::kCombine;
  c.name = "COMBINE";
  c.input_dim = d;
  c.model_dim = D;
  auto& p = c.layer = LayerParams<double>::zeros(D, 2);
  const int dh = D / 2;
  for (int t = 0; t < d; ++t) {
    p.w_v(t, t) = 1.0;
    p.w_o(t, t) = 1.0;
    p.w_v(t, dh + t) = 1.0;
    p.w_o(dh + t, d + t) = 1.0;
  }
  c.tables = construction_tables(D, 2);
  only_code(c.tables, 0, 0);
  only_code(c.tables, 1, 1);
  c.use_spatial = c.use_ffn = true;
  for (int k = 0; k < 2 * d; ++k) {
    p.ffn_w1(k, 2 * k) = 1.0;
    p.ffn_w1(k, 2 * k + 1) = -1.0;
  }
  Rng rng(Rng::derive(seed, 0xcu));
  const int S = 2000;
  Mat inputs = Mat::Zero(S, D);
  for (int i = 0; i < S; ++i) {
    for (int k = 0; k < 2 * d; ++k) inputs(i, k) = rng.uniform(-1.0, 1.0);
  }
  const Mat hidden = hidden_activations(p, inputs);
  std::vector<int> units(4 * d);
  for (int u = 0; u < 4 * d; ++u) units[u] = u;
  for (int t = 0; t < d; ++t) {
    const Eigen::VectorXd target = inputs.col(t) + 2.0 * inputs.col(d + t);
    c.fit_residual = std::max(c.fit_residual, fit_output(p, hidden, target, t, units));
  }
  return c;
}

Construction build_mean_readout(int d, double temperature) {
  if (d <= 0) throw Error("construction width must be positive");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  Construction c;
  c.kind = ConstructionKind::kMeanReadout;
  c.name = "MEAN_READOUT";
  c.temperature = temperature;
  c.input_dim = c.model_dim = d;
  auto& p = c.layer = LayerParams<double>::zeros(d, 1);
  p.q_bias = Mat::Constant(1, d, temperature);
  p.k_bias = Mat::Constant(1, d, temperature);
  p.w_v = p.w_o = Mat::Identity(d, d);
  c.tables = construction_tables(d, 1);
  return c;
}

Eigen::MatrixXd apply_construction(const Construction& c, const Graph& g, const Eigen::MatrixXd& h) {
  if (h.rows() != g.num_nodes || h.cols() != c.input_dim) throw Error("apply_construction: input shape mismatch");
  const int n = g.num_nodes;
  const auto sf = compute_structural_features(g, 1);
  ad::Tape<double> t;
  const auto enc = EncodingVars<double>::on(t, c.tables, false);
  const auto lv = LayerVars<double>::on(t, c.layer, false);
  Mat x = Mat::Zero(n, c.model_dim);
  x.leftCols(c.input_dim) = h;
  auto xv = t.constant(std::move(x));
  if (c.use_centrality) xv = centrality_encode(xv, sf, g.directed, enc);
  const BiasLayout layout{1, n, c.layer.num_heads};
  auto bias = c.use_spatial ? spatial_bias(sf, enc) : t.constant(Mat::Zero(layout.rows(), n));
  Rng rng(0);
  auto out = multi_head_attention(xv, bias, lv, layout, LayerOptions{}, rng);
  if (c.use_ffn) out = feed_forward(out, lv, Activation::kGelu);
  return out.value().leftCols(c.input_dim);
}

Graph sample_construction_graph(Rng& rng, int max_nodes) {
  for (;;) {
    Graph g;
    g.num_nodes = 2 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::max(1, max_nodes - 1))));
    const double p = rng.uniform(0.15, 0.7);
    std::vector<int> deg(g.num_nodes, 0);
    for (int i = 0; i < g.num_nodes; ++i) {
      for (int j = i + 1; j < g.num_nodes; ++j) {
        if (rng.uniform() < p) {
          g.edges.push_back({i, j});
          ++deg[i];
          ++deg[j];
        }
      }
    }
    if (std::find(deg.begin(), deg.end(), 0) == deg.end()) return g;
  }
}

WlSpdReport run_wl_vs_spd_experiment(std::uint64_t seed) {
  WlSpdReport r;
  const Graph c6 = cycle_graph(6);
  const Graph two_c3 = disjoint_union(cycle_graph(3), cycle_graph(3));
  r.wl_equal = wl1_indistinguishable(c6, two_c3, 6);
  r.spd_differ = spd_multiset_signature(c6) != spd_multiset_signature(two_c3);
  const std::vector<int> expected{0, 1, 1, 2, 2, 3};
  const auto sig = spd_multiset_signature(c6);
  r.c6_multiset = sig.size() == 6 && std::all_of(sig.begin(), sig.end(), [&](const auto& row) { return row == expected; });

  Rng rng(seed);
  std::vector<int> perm(6);
  for (int i = 0; i < 6; ++i) perm[i] = i;
  for (int i = 5; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const Graph relabeled = permute_graph(c6, perm);
  r.isomorphic_control =
      wl1_indistinguishable(c6, relabeled, 6) && spd_multiset_signature(c6) == spd_multiset_signature(relabeled);
  r.negative_control = !wl1_indistinguishable(c6, path_graph(6), 6);
  return r;
}

std::vector<ExpressRow> express_check(std::uint64_t seed) {
  std::vector<ExpressRow> rows;
  Rng rng(seed);

  {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const int d = 1 + i % 8;
      const Graph g = sample_construction_graph(rng);
      const auto h = uniform_matrix(rng, g.num_nodes, d, -1.0, 1.0);
      const auto out = apply_construction(build_mean_aggregate(d), g, h);
      worst = std::max(worst, (out - reference_gnn_step(g, h, Aggregation::kMean)).cwiseAbs().maxCoeff());
    }
    rows.push_back({"MEAN_AGG", worst, 1e-6, worst < 1e-6, "max abs error, 100 graphs"});
  }

  std::map<int, Construction> sums, combines;
  for (int d = 1; d <= 8; ++d) {
    sums.emplace(d, build_sum_aggregate(d, seed));
    combines.emplace(d, build_combine(d, seed));
  }
  for (bool sum_kind : {true, false}) {
    auto& table = sum_kind ? sums : combines;
    double worst = 0.0, residual = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int d = 1 + i % 8;
      const auto& c = table.at(d);
      residual = std::max(residual, c.fit_residual);
      const Graph g = sample_construction_graph(rng);
      const auto h = uniform_matrix(rng, g.num_nodes, d, -1.0, 1.0);
      const auto expected =
          sum_kind ? reference_gnn_step(g, h, Aggregation::kSum)
                   : reference_gnn_step(g, h, Aggregation::kMean,
                                        [](const Eigen::RowVectorXd& x, const Eigen::RowVectorXd& a) -> Eigen::RowVectorXd {
                                          return x + 2.0 * a;
                                        });
      worst = std::max(worst, (apply_construction(c, g, h) - expected).cwiseAbs().maxCoeff());
    }
    rows.push_back({sum_kind ? "SUM_AGG" : "COMBINE", worst, 1e-2, worst < 1e-2 && residual < 5e-3,
                    "max abs error, 50 graphs; fit residual " + fmt(residual)});
  }
  {
    const std::vector<double> temps{10.0, 20.0, 50.0, 100.0};
    std::vector<std::vector<double>> errs(temps.size());
    for (int i = 0; i < 50; ++i) {
      const int d = 1 + i % 8;
      const Graph g = sample_construction_graph(rng);
      const auto h = uniform_matrix(rng, g.num_nodes, d, 0.0, 1.0);
      const auto expected = reference_gnn_step(g, h, Aggregation::kMax);
      for (std::size_t k = 0; k < temps.size(); ++k) {
        errs[k].push_back((apply_construction(build_max_aggregate(d, temps[k]), g, h) - expected).cwiseAbs().maxCoeff());
      }
    }
    std::vector<double> med;
    for (auto& e : errs) med.push_back(median(e));
    bool monotone = true;
    for (std::size_t k = 1; k < med.size(); ++k) monotone = monotone && med[k] <= med[k - 1];
    std::string detail = "median max-abs error at T=50, 50 graphs; T sweep";
    for (std::size_t k = 0; k < temps.size(); ++k) detail += " " + fmt(med[k]);
    rows.push_back({"MAX_AGG", med[2], 1e-2, med[2] < 1e-2 && monotone, detail});
  }
  // MEAN, SUM, MAX, COMBINE order.
  std::rotate(rows.begin() + 2, rows.begin() + 3, rows.end());

  {
    double worst = 0.0, spread = 0.0;
    for (int i = 0; i < 50; ++i) {
      const int d = 1 + i % 8;
      const int n = 1 + static_cast<int>(rng.below(12));
      Graph g = sample_construction_graph(rng, std::max(2, n));
      if (i % 10 == 0) g = path_graph(1);
      const auto h = uniform_matrix(rng, g.num_nodes, d, -1.0, 1.0);
      const auto out = apply_construction(build_mean_readout(d, 10.0), g, h);
      const Eigen::RowVectorXd mean = reference_readout(h, Readout::kMean);
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        worst = std::max(worst, (out.row(r) - mean).cwiseAbs().maxCoeff());
        spread = std::max(spread, (out.row(r) - out.row(0)).cwiseAbs().maxCoeff());
      }
    }
    rows.push_back({"MEAN_READOUT", worst, 1e-10, worst < 1e-10 && spread < 1e-12,
                    "max abs error vs column mean, 50 graphs; row spread " + fmt(spread)});
  }

  {
    const auto r = run_wl_vs_spd_experiment(seed);
    rows.push_back({"WL_VS_SPD", r.passed() ? 0.0 : 1.0, 0.5, r.passed(),
                    std::string("wl_equal=") + (r.wl_equal ? "1" : "0") + " spd_differ=" + (r.spd_differ ? "1" : "0") +
                        " c6_multiset=" + (r.c6_multiset ? "1" : "0") +
                        " iso_control=" + (r.isomorphic_control ? "1" : "0") +
                        " neg_control=" + (r.negative_control ? "1" : "0")});
  }
  return rows;
}

}  // namespace graphormer
