// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "graphormer/io.hpp"

namespace graphormer {

void OptimConfig::validate() const {
  if (!(peak_lr >= 0.0)) throw Error("peak_lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw Error("Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw Error("adam_eps must be > 0");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be >= 0");
  if (total_steps < 1) throw Error("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) throw Error("warmup_steps must be in [0, total_steps]");
}

void FlagConfig::validate() const {
  if (!(alpha > 0.0)) throw Error("flag_alpha must be > 0");
  if (steps < 1) throw Error("flag_steps must be >= 1");
  if (!(epsilon >= 0.0)) throw Error("flag_epsilon must be >= 0");
}

void TrainConfig::validate() const {
  model.validate();
  optim.validate();
  if (flag) flag->validate();
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (eval_every < 1) throw Error("eval_every must be >= 1");
}

double lr_at(long step, const OptimConfig& cfg) {
  if (step < cfg.warmup_steps) return cfg.peak_lr * static_cast<double>(std::max(step, 0L)) / cfg.warmup_steps;
  if (step >= cfg.total_steps) return 0.0;
  return cfg.peak_lr * static_cast<double>(cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps);
}

template <typename Scalar>
OptimState<Scalar> OptimState<Scalar>::zeros_like(const std::vector<Mat>& params, const OptimConfig& cfg) {
  OptimState s;
  s.config = cfg;
  for (const auto& p : params) {
    s.m.push_back(Mat::Zero(p.rows(), p.cols()));
    s.v.push_back(Mat::Zero(p.rows(), p.cols()));
  }
  return s;
}

template <typename Scalar>
double adamw_step(std::vector<ad::Matrix<Scalar>*> params, const std::vector<ad::Matrix<Scalar>>& grads,
                  OptimState<Scalar>& state, const std::vector<std::string>& names) {
  if (params.size() != grads.size() || params.size() != state.m.size()) throw Error("adamw_step: tensor count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) {
      throw Error("non-finite gradient in " + (i < names.size() ? names[i] : "tensor " + std::to_string(i)) +
                  " at step " + std::to_string(state.step + 1));
    }
  }
  const auto& c = state.config;
  state.step += 1;
  const double lr = lr_at(state.step, c);
  const Scalar bc1 = Scalar(1.0 - std::pow(c.beta1, static_cast<double>(state.step)));
  const Scalar bc2 = Scalar(1.0 - std::pow(c.beta2, static_cast<double>(state.step)));
  const Scalar b1 = Scalar(c.beta1), b2 = Scalar(c.beta2), eps = Scalar(c.eps), slr = Scalar(lr);
  const Scalar decay = Scalar(1.0 - lr * c.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (p.rows() != g.rows() || p.cols() != g.cols()) throw Error("adamw_step: gradient shape mismatch");
    if (c.weight_decay != 0.0) p *= decay;
    m = b1 * m + (Scalar(1) - b1) * g;
    v.array() = b2 * v.array() + (Scalar(1) - b2) * g.array().square();
    p.array() -= slr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }
  return lr;
}

template <typename Scalar>
double clip_gradients(std::vector<ad::Matrix<Scalar>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const Scalar s = Scalar(max_norm / norm);
    for (auto& g : grads) g *= s;
  }
  return norm;
}

namespace {

template <typename Scalar>
std::vector<ad::Matrix<Scalar>> zero_grads(const ModelParams<Scalar>& params) {
  std::vector<ad::Matrix<Scalar>> out;
  for (const auto& p : params.values()) out.push_back(ad::Matrix<Scalar>::Zero(p.rows(), p.cols()));
  return out;
}

template <typename Scalar>
void mask_padding(ad::Matrix<Scalar>& delta, const Batch& batch) {
  for (std::size_t r = 0; r < batch.key_valid.size(); ++r) {
    if (!batch.key_valid[r]) delta.row(static_cast<Eigen::Index>(r)).setZero();
  }
}

}  // namespace

template <typename Scalar>
GradientResult<Scalar> compute_gradients(const ModelParams<Scalar>& params, const Batch& batch,
                                         const ModelConfig& cfg, Rng& rng) {
  ad::Tape<Scalar> tape;
  const auto vars = ModelVars<Scalar>::on(tape, params, true);
  auto l = loss(forward(tape, vars, batch, cfg, true, rng), batch.targets, cfg.task);
  tape.backward(l);
  GradientResult<Scalar> r;
  r.loss = static_cast<double>(l.value()(0, 0));
  for (const auto& v : vars.all()) r.grads.push_back(tape.grad(v));
  return r;
}

template <typename Scalar>
GradientResult<Scalar> flag_augment(const ModelParams<Scalar>& params, const Batch& batch, const ModelConfig& cfg,
                                    const FlagConfig& flag, Rng& rng) {
  using Mat = ad::Matrix<Scalar>;
  flag.validate();
  const Eigen::Index rows = static_cast<Eigen::Index>(batch.num_graphs) * batch.num_nodes;
  Mat delta(rows, cfg.hidden_dim);
  for (Eigen::Index i = 0; i < delta.size(); ++i) delta.data()[i] = Scalar(rng.uniform(-flag.alpha, flag.alpha));
  auto project = [&] {
    mask_padding(delta, batch);
    if (flag.epsilon > 0.0) delta = delta.cwiseMax(Scalar(-flag.epsilon)).cwiseMin(Scalar(flag.epsilon));
  };
  project();

  GradientResult<Scalar> r;
  r.grads = zero_grads(params);
  const Scalar inv_m = Scalar(1.0 / flag.steps);
  for (int t = 0; t < flag.steps; ++t) {
    ad::Tape<Scalar> tape;
    const auto vars = ModelVars<Scalar>::on(tape, params, true);
    ForwardExtras<Scalar> extras;
    auto dv = tape.leaf(delta, true);
    extras.perturbation = dv;
    auto l = loss(forward(tape, vars, batch, cfg, true, rng, extras), batch.targets, cfg.task);
    tape.backward(l);
    r.loss += static_cast<double>(l.value()(0, 0)) / flag.steps;
    const auto all = vars.all();
    for (std::size_t i = 0; i < all.size(); ++i) r.grads[i] += tape.grad(all[i]) * inv_m;
    const Mat& g = tape.grad(dv);
    const double norm = static_cast<double>(g.norm());
    if (norm > 0.0) delta += g * Scalar(flag.alpha / norm);
    project();
    r.delta_max_abs.push_back(static_cast<double>(delta.cwiseAbs().maxCoeff()));
  }
  return r;
}

template <typename Scalar>
double evaluate(const ModelParams<Scalar>& params, const std::vector<PreparedGraph>& data, const ModelConfig& cfg,
                int batch_size) {
  if (data.empty()) throw Error("evaluate: empty dataset");
  double total = 0.0;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    const auto batch = make_batch(std::span<const PreparedGraph>(data.data() + start, end - start), cfg);
    const Eigen::VectorXd pred = predict(params, batch, cfg);
    for (Eigen::Index i = 0; i < pred.size(); ++i) {
      const double x = pred(i), y = batch.targets(i);
      total += cfg.task == Task::kRegression ? std::abs(x - y)
                                              : std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
  }
  return total / static_cast<double>(data.size());
}

namespace {

namespace fs = std::filesystem;

constexpr const char* kMetricsHeader = "step,lr,train_loss,valid_metric";

std::string metrics_line(const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g", r.step, r.lr, r.train_loss, r.valid_metric);
  return buf;
}

template <typename Scalar>
Checkpoint make_checkpoint(ModelParams<Scalar>& params, const OptimState<Scalar>& state, std::uint64_t hash,
                           double best_valid, long best_step) {
  Checkpoint ck;
  ck.config_hash = hash;
  ck.step = state.step;
  ck.best_valid = best_valid;
  ck.best_step = best_step;
  for (auto& [name, m] : params.named()) {
    ck.names.push_back(name);
    ck.params.push_back(m->template cast<double>());
  }
  for (const auto& m : state.m) ck.m.push_back(m.template cast<double>());
  for (const auto& v : state.v) ck.v.push_back(v.template cast<double>());
  return ck;
}

template <typename Scalar>
void restore(const Checkpoint& ck, ModelParams<Scalar>& params, OptimState<Scalar>* state) {
  auto slots = params.named();
  if (ck.names.size() != slots.size()) throw Error("checkpoint has a different parameter count");
  std::vector<ad::Matrix<Scalar>> values;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (ck.names[i] != slots[i].first) throw Error("checkpoint parameter " + ck.names[i] + " does not match model");
    values.push_back(ck.params[i].cast<Scalar>());
  }
  params.assign(values);
  if (state) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      state->m[i] = ck.m[i].cast<Scalar>();
      state->v[i] = ck.v[i].cast<Scalar>();
    }
    state->step = ck.step;
  }
}

// Keeps the header and rows at or before `step`.
void truncate_metrics(const fs::path& path, long step) {
  std::vector<std::string> keep;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (keep.empty() || std::stol(line.substr(0, line.find(','))) <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

template <typename Scalar>
TrainResult train_impl(const std::vector<PreparedGraph>& train_set, const std::vector<PreparedGraph>& valid_set,
                       const TrainConfig& cfg, const TrainOutputs& out) {
  const auto& mc = cfg.model;
  Rng init_rng(Rng::derive(cfg.seed, 1));
  auto params = ModelParams<Scalar>::init(mc, init_rng);
  // Regression heads start at the training-target mean.
  if (mc.task == Task::kRegression && !train_set.empty()) {
    double sum = 0.0;
    for (const auto& g : train_set) sum += g.graph.target.value_or(0.0);
    params.head_b(0, 0) = Scalar(sum / static_cast<double>(train_set.size()));
  }
  std::vector<std::string> names;
  for (auto& [name, m] : params.named()) names.push_back(name);
  auto state = OptimState<Scalar>::zeros_like(params.values(), cfg.optim);
  auto best_params = params;
  double best_valid = std::numeric_limits<double>::infinity();
  long best_step = 0;

  const bool persist = !out.dir.empty();
  const fs::path dir(out.dir);
  const fs::path metrics_path = dir / "metrics.csv", last_path = dir / "last.ckpt", best_path = dir / "best.ckpt";
  if (persist) fs::create_directories(dir);
  if (out.resume) {
    if (!persist) throw Error("resume needs an output directory");
    const auto ck = load_checkpoint(last_path.string());
    if (ck.config_hash != out.config_hash) throw Error("checkpoint was written under a different configuration");
    restore(ck, params, &state);
    best_valid = ck.best_valid;
    best_step = ck.best_step;
    best_params = params;
    if (fs::exists(best_path)) restore(load_checkpoint(best_path.string()), best_params, static_cast<OptimState<Scalar>*>(nullptr));
    truncate_metrics(metrics_path, ck.step);
  } else if (persist) {
    std::ofstream(metrics_path, std::ios::trunc) << kMetricsHeader << '\n';
  }

  TrainResult result;
  const auto& eval_set = valid_set.empty() ? train_set : valid_set;
  const std::size_t n = train_set.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  std::vector<std::size_t> order(n);
  long order_epoch = -1;
  double acc_loss = 0.0;
  int acc_n = 0;

  for (long step = state.step; step < cfg.optim.total_steps; ++step) {
    const long epoch = step / steps_per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle(Rng::derive(Rng::derive(cfg.seed, 2).next(), static_cast<std::uint64_t>(epoch)));
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);
      order_epoch = epoch;
    }
    const std::size_t start = static_cast<std::size_t>(step % steps_per_epoch) * bs;
    std::vector<const PreparedGraph*> members;
    for (std::size_t i = start; i < std::min(n, start + bs); ++i) members.push_back(&train_set[order[i]]);
    const auto batch = make_batch(std::span<const PreparedGraph* const>(members), mc);

    Rng rng(Rng::derive(Rng::derive(cfg.seed, 3).next(), static_cast<std::uint64_t>(step)));
    auto g = cfg.flag ? flag_augment(params, batch, mc, *cfg.flag, rng) : compute_gradients(params, batch, mc, rng);
    if (!std::isfinite(g.loss)) {
      throw Error("training diverged at step " + std::to_string(step + 1) + " (loss " + std::to_string(g.loss) +
                  "); last checkpoint retained");
    }
    clip_gradients(g.grads, cfg.optim.clip_norm);
    std::vector<ad::Matrix<Scalar>*> slots;
    for (auto& [name, m] : params.named()) slots.push_back(m);
    const double lr = adamw_step(slots, g.grads, state, names);
    acc_loss += g.loss;
    ++acc_n;

    if (state.step % cfg.eval_every == 0 || state.step == cfg.optim.total_steps) {
      MetricsRow row{state.step, lr, acc_loss / acc_n, evaluate(params, eval_set, mc, cfg.batch_size)};
      acc_loss = 0.0;
      acc_n = 0;
      result.history.push_back(row);
      if (row.valid_metric < best_valid) {
        best_valid = row.valid_metric;
        best_step = state.step;
        best_params = params;
        if (persist) save_checkpoint(best_path.string(), make_checkpoint(params, state, out.config_hash, best_valid, best_step));
      }
      if (persist) {
        std::ofstream(metrics_path, std::ios::app) << metrics_line(row) << '\n';
        save_checkpoint(last_path.string(), make_checkpoint(params, state, out.config_hash, best_valid, best_step));
      }
    }
    if (out.stop_after > 0 && state.step >= out.stop_after) break;
  }
  result.final_params = params.template cast<double>();
  result.best_params = best_params.template cast<double>();
  result.best_valid = best_valid;
  result.best_step = best_step;
  return result;
}

}  // namespace

TrainResult train(const std::vector<PreparedGraph>& train_set, const std::vector<PreparedGraph>& valid_set,
                  const TrainConfig& cfg, const TrainOutputs& out) {
  cfg.validate();
  if (train_set.empty()) throw Error("training set is empty");
  return cfg.float32 ? train_impl<float>(train_set, valid_set, cfg, out)
                     : train_impl<double>(train_set, valid_set, cfg, out);
}

#define GRAPHORMER_INSTANTIATE(S)                                                                                  \
  template struct OptimState<S>;                                                                                  \
  template double adamw_step<S>(std::vector<ad::Matrix<S>*>, const std::vector<ad::Matrix<S>>&, OptimState<S>&, \
                                const std::vector<std::string>&);                                                 \
  template double clip_gradients<S>(std::vector<ad::Matrix<S>>&, double);                                        \
  template GradientResult<S> compute_gradients<S>(const ModelParams<S>&, const Batch&, const ModelConfig&, Rng&); \
  template GradientResult<S> flag_augment<S>(const ModelParams<S>&, const Batch&, const ModelConfig&,            \
                                             const FlagConfig&, Rng&);                                            \
  template double evaluate<S>(const ModelParams<S>&, const std::vector<PreparedGraph>&, const ModelConfig&, int);

GRAPHORMER_INSTANTIATE(float)
GRAPHORMER_INSTANTIATE(double)

double evaluate_checkpoint(const Checkpoint& ck, const std::vector<PreparedGraph>& data, const TrainConfig& cfg) {
  cfg.model.validate();
  Rng unused(0);
  if (cfg.float32) {
    auto params = ModelParams<float>::init(cfg.model, unused);
    restore(ck, params, static_cast<OptimState<float>*>(nullptr));
    return evaluate(params, data, cfg.model, cfg.batch_size);
  }
  auto params = ModelParams<double>::init(cfg.model, unused);
  restore(ck, params, static_cast<OptimState<double>*>(nullptr));
  return evaluate(params, data, cfg.model, cfg.batch_size);
}

}  // namespace graphormer
