// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks shared by the CLI and the acceptance suite.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "graphormer/model.hpp"
#include "graphormer/training.hpp"

namespace graphormer {

/// Small float64 model used by the structural checks (2 layers, d = 16).
ModelConfig check_model_config(int num_layers = 2);

/// Default init scaled up (LN gains untouched) so that attention is far from
/// uniform and structure actually reaches the output.
ModelParams<double> widened_params(const ModelConfig& cfg, Rng& rng, double factor);

struct GradcheckRow {
  std::string name;
  double max_rel_err = 0.0;
};

/// Central-difference check of the full model loss on a random connected
/// 6-node graph. Returns max relative error.
double model_gradient_check(std::uint64_t seed);

/// Operator checks plus model_gradient_check for seeds seed .. seed + num_seeds - 1.
std::vector<GradcheckRow> gradcheck_suite(std::uint64_t seed, int num_seeds = 10);

/// Max |f(P G) - f(G)| over random graphs and node relabelings.
double permutation_invariance_error(std::uint64_t seed, int num_graphs = 100, int num_perms = 5);

/// Synthetic diameter task used by the ablation: 2000 train / 500 valid.
struct AblationData {
  std::vector<PreparedGraph> train, valid;
};
AblationData ablation_data(std::uint64_t data_seed = 7, int num_train = 2000, int num_valid = 500);

/// L = 4, d = 64, 8 heads, 5000 steps.
TrainConfig ablation_base_config();

/// The four encoding variants, in name order.
struct AblationVariant {
  std::string name;
  bool use_spatial, use_centrality, use_edge;
};
const std::vector<AblationVariant>& ablation_variants();

struct AblationRow {
  std::string name;
  std::vector<double> valid_mae;  // one per seed
  double median = 0.0;
  double mad = 0.0;  // median absolute deviation across seeds
};

double median(std::vector<double> xs);
double median_abs_deviation(const std::vector<double>& xs);

/// Trains every variant for every seed (base config otherwise unchanged) and
/// reports best validation MAE. `progress` receives one line per run.
std::vector<AblationRow> run_ablation(const std::vector<PreparedGraph>& train_set,
                                      const std::vector<PreparedGraph>& valid_set, const TrainConfig& base,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& progress = {});

/// none > spatial > spatial+centrality >= all by median, each adjacent gap
/// larger than the MAD of both rows. `why` names the first violation.
bool ablation_ordering_holds(const std::vector<AblationRow>& rows, std::string* why = nullptr);

/// Ablation CSV: config, valid_mae (median), mad, then one column per seed.
std::string ablation_csv(const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds);

}  // namespace graphormer
