// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dataset files (JSON lines), run configuration, checkpoints, the
// preprocessed-feature sidecar and the worker pool.

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "graphormer/graph.hpp"
#include "graphormer/model.hpp"
#include "graphormer/training.hpp"

namespace graphormer {

struct Dataset {
  Task task = Task::kRegression;
  std::vector<int> node_vocab{1};
  std::vector<int> edge_vocab{1};
  std::vector<Graph> graphs;
};

/// Line 1: {"format": "graphormer-kit", "version": 1, "task": ..., "node_vocab": [...], "edge_vocab": [...]}
/// Then one graph per line:
///   {"nodes": [[f, ...], ...], "edges": [[src, dst, [f, ...]], ...], "directed": false, "target": 1.5}
Dataset parse_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset load_dataset(const std::string& path);
void write_dataset(std::ostream& out, const Dataset& ds);
void save_dataset(const std::string& path, const Dataset& ds);

std::string task_name(Task t);

/// A flat JSON object of model, optimizer, FLAG and run keys. Unknown keys
/// and mistyped values are rejected.
struct RunConfig {
  TrainConfig train;
  double valid_fraction = 0.2;  // trailing share of the dataset used for validation
  std::string dataset;
  std::string out_dir;
};

RunConfig parse_run_config(const std::string& json_text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

/// Hash of everything that determines a training run's numbers (paths
/// excluded).
std::uint64_t config_hash(const RunConfig& cfg);

struct Checkpoint {
  std::uint64_t config_hash = 0;
  long step = 0;
  long best_step = 0;
  double best_valid = 0.0;
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> params, m, v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Loads the checkpoint's parameters at the run's precision and evaluates
/// them exactly as the trainer did at save time.
double evaluate_checkpoint(const Checkpoint& ck, const std::vector<PreparedGraph>& data, const TrainConfig& cfg);

/// FNV-1a over a file's bytes.
std::uint64_t file_hash(const std::string& path);

/// Binary sidecar of prepared structural features (virtual node attached),
/// keyed by the dataset file hash and max_path_len.
void save_feature_cache(const std::string& path, std::uint64_t dataset_hash, int max_path_len,
                        const std::vector<StructuralFeatures>& features);
std::optional<std::vector<StructuralFeatures>> load_feature_cache(const std::string& path,
                                                                  std::uint64_t dataset_hash, int max_path_len);

/// Worker count: GRAPHORMER_KIT_THREADS when set (>= 1), else hardware
/// concurrency.
int worker_threads();

/// Runs fn(i) for i in [0, n) on up to worker_threads() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// prepare_graph over a whole dataset, in parallel.
std::vector<PreparedGraph> prepare_all(const std::vector<Graph>& graphs, int max_path_len);

/// Sidecar path used by the CLI for a dataset file.
std::string feature_cache_path(const std::string& dataset_path);

/// Prepared graphs for a dataset file, read from its sidecar when the
/// sidecar matches (hash and max_path_len), computed otherwise.
std::vector<PreparedGraph> load_prepared(const Dataset& ds, const std::string& dataset_path, int max_path_len,
                                         bool* from_cache = nullptr);

}  // namespace graphormer
