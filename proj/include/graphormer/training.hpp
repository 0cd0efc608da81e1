// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphormer/model.hpp"

namespace graphormer {

struct OptimConfig {
  double peak_lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int warmup_steps = 0;
  int total_steps = 1000;
  double clip_norm = 5.0;  // <= 0 disables clipping

  void validate() const;
};

/// Linear warmup 0 -> peak over warmup_steps, then linear decay to 0 at
/// total_steps. Optimizer step k (1-based) uses lr_at(k).
double lr_at(long step, const OptimConfig& cfg);

template <typename Scalar>
struct OptimState {
  using Mat = ad::Matrix<Scalar>;
  OptimConfig config;
  std::vector<Mat> m, v;
  long step = 0;

  static OptimState zeros_like(const std::vector<Mat>& params, const OptimConfig& cfg);
};

/// Bias-corrected AdamW with decoupled weight decay. Throws on a non-finite
/// gradient, naming the offending tensor. Returns the learning rate used.
template <typename Scalar>
double adamw_step(std::vector<ad::Matrix<Scalar>*> params, const std::vector<ad::Matrix<Scalar>>& grads,
                  OptimState<Scalar>& state, const std::vector<std::string>& names = {});

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename Scalar>
double clip_gradients(std::vector<ad::Matrix<Scalar>>& grads, double max_norm);

struct FlagConfig {
  double alpha = 1e-3;   // ascent step size and initial perturbation range
  int steps = 3;         // m
  double epsilon = 0.0;  // infinity-norm radius; 0 disables projection

  void validate() const;
};

template <typename Scalar>
struct GradientResult {
  double loss = 0.0;  // mean over FLAG inner steps
  std::vector<ad::Matrix<Scalar>> grads;
  std::vector<double> delta_max_abs;  // max |delta| after each FLAG update
};

/// Plain training-mode loss and gradients in ModelParams::named() order.
template <typename Scalar>
GradientResult<Scalar> compute_gradients(const ModelParams<Scalar>& params, const Batch& batch,
                                         const ModelConfig& cfg, Rng& rng);

/// FLAG: m ascent steps on an additive perturbation of h0, averaging the
/// parameter gradients of every step.
template <typename Scalar>
GradientResult<Scalar> flag_augment(const ModelParams<Scalar>& params, const Batch& batch, const ModelConfig& cfg,
                                    const FlagConfig& flag, Rng& rng);

/// MAE for regression, mean BCE for classification, over batches of
/// `batch_size` in dataset order.
template <typename Scalar>
double evaluate(const ModelParams<Scalar>& params, const std::vector<PreparedGraph>& data, const ModelConfig& cfg,
                int batch_size);

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  std::optional<FlagConfig> flag;
  int batch_size = 16;
  int eval_every = 100;  // metrics row + checkpoint cadence, in steps
  std::uint64_t seed = 0;
  bool float32 = true;

  void validate() const;
};

struct MetricsRow {
  long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_metric = 0.0;
};

struct TrainOutputs {
  std::string dir;                // empty: keep everything in memory
  std::uint64_t config_hash = 0;  // stored in checkpoints, checked on resume
  bool resume = false;            // continue from dir/last.ckpt
  long stop_after = 0;            // > 0: return after this step (simulates an interruption)
};

struct TrainResult {
  std::vector<MetricsRow> history;
  ModelParams<double> final_params;
  ModelParams<double> best_params;
  double best_valid = 0.0;
  long best_step = 0;
};

/// Shuffled mini-batch epochs, optional FLAG, AdamW, schedule and clipping.
/// With an output directory: appends metrics.csv and writes last.ckpt and
/// best.ckpt at every eval point. A NaN loss aborts with the last
/// checkpoint left in place.
TrainResult train(const std::vector<PreparedGraph>& train_set, const std::vector<PreparedGraph>& valid_set,
                  const TrainConfig& cfg, const TrainOutputs& out = {});

}  // namespace graphormer
