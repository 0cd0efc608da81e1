// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0
//
// graphormer-kit: dataset generation, preprocessing, training, evaluation
// and the verification suites.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "graphormer/checks.hpp"
#include "graphormer/expressiveness.hpp"
#include "graphormer/io.hpp"
#include "graphormer/synthetic.hpp"
#include "graphormer/training.hpp"

namespace fs = std::filesystem;
using namespace graphormer;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct Split {
  std::vector<PreparedGraph> train, valid;
};

RunConfig resolve_config(const GlobalOptions& g, const std::string& dataset) {
  RunConfig rc = g.config.empty() ? parse_run_config("{}") : load_run_config(g.config);
  if (g.seed) rc.train.seed = *g.seed;
  if (!g.out.empty()) rc.out_dir = g.out;
  if (!dataset.empty()) rc.dataset = dataset;
  return rc;
}

// Task and vocabularies always come from the dataset header.
void adopt_dataset_schema(RunConfig& rc, const Dataset& ds) {
  rc.train.model.task = ds.task;
  rc.train.model.node_vocab = ds.node_vocab;
  rc.train.model.edge_vocab = ds.edge_vocab;
  rc.train.validate();
}

Split split_dataset(std::vector<PreparedGraph> all, double valid_fraction) {
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(all.size())));
  Split s;
  const auto cut = all.size() - std::min(n_valid, all.size());
  s.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cut));
  s.valid.assign(std::make_move_iterator(all.begin() + cut), std::make_move_iterator(all.end()));
  return s;
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_generate(const GlobalOptions& g, const std::string& task, int num_graphs, const std::string& dataset) {
  if (dataset.empty()) throw Error("generate: --dataset <output path> is required");
  if (num_graphs < 0) throw Error("generate: --num-graphs must be >= 0");
  const auto kind = parse_synthetic_task(task);
  save_dataset(dataset, generate_synthetic(kind, num_graphs, g.seed.value_or(0)));
  std::cout << "wrote " << num_graphs << " " << synthetic_task_name(kind) << " graphs to " << dataset << "\n";
  return 0;
}

int cmd_preprocess(const GlobalOptions& g, const std::string& dataset) {
  const auto rc = resolve_config(g, dataset);
  if (rc.dataset.empty()) throw Error("preprocess: no dataset given (--dataset or config 'dataset')");
  const auto ds = load_dataset(rc.dataset);
  const int max_path_len = rc.train.model.max_path_len;
  const auto prepared = prepare_all(ds.graphs, max_path_len);
  std::vector<StructuralFeatures> feats;
  feats.reserve(prepared.size());
  for (const auto& p : prepared) feats.push_back(p.features);
  const auto path = g.out.empty() ? feature_cache_path(rc.dataset) : g.out;
  save_feature_cache(path, file_hash(rc.dataset), max_path_len, feats);
  std::cout << "cached features for " << feats.size() << " graphs (max_path_len " << max_path_len << ") in " << path
            << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& g, const std::string& dataset, bool resume) {
  auto rc = resolve_config(g, dataset);
  if (rc.dataset.empty()) throw Error("train: no dataset given (--dataset or config 'dataset')");
  if (rc.out_dir.empty()) throw Error("train: no output directory given (--out or config 'out_dir')");
  const auto ds = load_dataset(rc.dataset);
  adopt_dataset_schema(rc, ds);
  bool cached = false;
  auto split = split_dataset(load_prepared(ds, rc.dataset, rc.train.model.max_path_len, &cached), rc.valid_fraction);
  if (split.train.empty()) throw Error("train: the training split is empty");

  fs::create_directories(rc.out_dir);
  std::ofstream(fs::path(rc.out_dir) / "config.json") << run_config_to_json(rc) << '\n';
  TrainOutputs out;
  out.dir = rc.out_dir;
  out.config_hash = config_hash(rc);
  out.resume = resume;
  std::cout << "train " << split.train.size() << " / valid " << split.valid.size() << " graphs"
            << (cached ? " (cached features)" : "") << ", config " << hex(out.config_hash) << "\n";
  const auto r = train(split.train, split.valid, rc.train, out);
  for (const auto& row : r.history) {
    std::printf("step %6ld  lr %.3e  train_loss %.6f  valid %.6f\n", row.step, row.lr, row.train_loss,
                row.valid_metric);
  }
  std::printf("best valid %.10g at step %ld\n", r.best_valid, r.best_step);
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& dataset, const std::string& checkpoint) {
  if (checkpoint.empty()) throw Error("eval: --checkpoint is required");
  GlobalOptions opts = g;
  // A run directory carries its own configuration.
  const auto run_config = fs::path(checkpoint).parent_path() / "config.json";
  if (opts.config.empty() && fs::exists(run_config)) opts.config = run_config.string();
  auto rc = resolve_config(opts, dataset);
  if (rc.dataset.empty()) throw Error("eval: no dataset given (--dataset or config 'dataset')");
  const auto ds = load_dataset(rc.dataset);
  adopt_dataset_schema(rc, ds);
  const auto ck = load_checkpoint(checkpoint);
  if (ck.config_hash != config_hash(rc)) {
    std::cerr << "warning: checkpoint config " << hex(ck.config_hash) << " differs from " << hex(config_hash(rc))
              << "\n";
  }
  auto split = split_dataset(load_prepared(ds, rc.dataset, rc.train.model.max_path_len), rc.valid_fraction);
  const auto& data = split.valid.empty() ? split.train : split.valid;
  const double metric = evaluate_checkpoint(ck, data, rc.train);
  std::printf("step %ld  %s %.10g on %zu graphs (recorded best %.10g at step %ld)\n", ck.step,
              rc.train.model.task == Task::kRegression ? "MAE" : "BCE", metric, data.size(), ck.best_valid,
              ck.best_step);
  return 0;
}

int cmd_gradcheck(const GlobalOptions& g, int seeds) {
  const auto rows = gradcheck_suite(g.seed.value_or(0), seeds);
  double worst = 0.0;
  for (const auto& r : rows) {
    std::printf("%-22s max rel err %.3e\n", r.name.c_str(), r.max_rel_err);
    worst = std::max(worst, r.max_rel_err);
  }
  const bool ok = worst < 1e-4;
  std::printf("max rel err %.3e (%s)\n", worst, ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

int cmd_express_check(const GlobalOptions& g) {
  const auto rows = express_check(g.seed.value_or(0));
  int passed = 0;
  std::printf("%-14s %-12s %-12s %s\n", "check", "metric", "threshold", "result");
  for (const auto& r : rows) {
    std::printf("%-14s %-12.3e %-12.3e %s  %s\n", r.name.c_str(), r.metric, r.threshold, r.pass ? "PASS" : "FAIL",
                r.detail.c_str());
    passed += r.pass;
  }
  std::printf("%d/%zu pass\n", passed, rows.size());
  return passed == static_cast<int>(rows.size()) ? 0 : 1;
}

int cmd_ablate(const GlobalOptions& g, const std::string& dataset, int num_seeds, long steps) {
  if (num_seeds < 1) throw Error("ablate: --seeds must be >= 1");
  TrainConfig base = ablation_base_config();
  AblationData data;
  if (!g.config.empty() || !dataset.empty()) {
    auto rc = resolve_config(g, dataset);
    if (rc.dataset.empty()) throw Error("ablate: the configuration names no dataset");
    const auto ds = load_dataset(rc.dataset);
    adopt_dataset_schema(rc, ds);
    auto split = split_dataset(load_prepared(ds, rc.dataset, rc.train.model.max_path_len), rc.valid_fraction);
    data.train = std::move(split.train);
    data.valid = std::move(split.valid);
    base = rc.train;
  } else {
    data = ablation_data();
  }
  if (steps > 0) {
    base.optim.total_steps = steps;
    base.optim.warmup_steps = std::min<long>(base.optim.warmup_steps, steps);
    base.eval_every = std::max(1L, std::min<long>(base.eval_every, steps));
  }
  base.validate();
  std::vector<std::uint64_t> seeds;
  for (int k = 0; k < num_seeds; ++k) seeds.push_back(g.seed.value_or(0) + static_cast<std::uint64_t>(k));

  std::cout << "ablation: " << data.train.size() << " train / " << data.valid.size() << " valid graphs, "
            << base.optim.total_steps << " steps, " << seeds.size() << " seeds (no Laplacian-PE row)\n";
  const auto rows = run_ablation(data.train, data.valid, base, seeds, [](const std::string& line) {
    std::cout << "  " << line << std::endl;
  });
  const auto csv = ablation_csv(rows, seeds);
  std::cout << csv;
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    std::ofstream(fs::path(g.out) / "ablation.csv") << csv;
  }
  std::string why;
  const bool ok = ablation_ordering_holds(rows, &why);
  std::cout << "ordering none > spatial > spatial+centrality >= all: " << (ok ? "PASS" : "FAIL: " + why) << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graphormer toolkit: datasets, training and verification suites"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides the configuration)");
  app.add_option("--out", g.out, "Output directory (or sidecar path for preprocess)");

  std::string dataset, checkpoint, task = "diameter";
  int num_graphs = 2500, seeds = 10, ablate_seeds = 3;
  long steps = 0;
  bool resume = false;

  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
  gen->add_option("--task", task, "diameter, avg_spd or triangle_count");
  gen->add_option("--num-graphs", num_graphs, "Number of graphs");
  gen->add_option("--dataset", dataset, "Output path")->required();

  auto* pre = app.add_subcommand("preprocess", "Cache structural features next to a dataset");
  pre->add_option("--dataset", dataset, "Dataset file");

  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--dataset", dataset, "Dataset file");
  tr->add_flag("--resume", resume, "Continue from <out>/last.ckpt");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  ev->add_option("--dataset", dataset, "Dataset file");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--seeds", seeds, "Number of full-model seeds");

  auto* xc = app.add_subcommand("express-check", "Expressiveness constructions and the WL/SPD experiment");

  auto* ab = app.add_subcommand("ablate", "Encoding ablation (none / spatial / spatial+centrality / all)");
  ab->add_option("--dataset", dataset, "Dataset file (default: synthetic diameter task)");
  ab->add_option("--seeds", ablate_seeds, "Seeds per variant");
  ab->add_option("--steps", steps, "Training steps per run");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_generate(g, task, num_graphs, dataset);
    if (*pre) return cmd_preprocess(g, dataset);
    if (*tr) return cmd_train(g, dataset, resume);
    if (*ev) return cmd_eval(g, dataset, checkpoint);
    if (*gc) return cmd_gradcheck(g, seeds);
    if (*xc) return cmd_express_check(g);
    if (*ab) return cmd_ablate(g, dataset, ablate_seeds, steps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
