// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#include "graphormer/io.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace graphormer {

using json = nlohmann::json;

namespace {

constexpr const char* kDatasetFormat = "graphormer-kit";
constexpr int kDatasetVersion = 1;
constexpr char kCheckpointMagic[4] = {'G', 'K', 'C', 'K'};
constexpr char kFeatureMagic[4] = {'G', 'K', 'S', 'F'};
constexpr std::uint32_t kBinaryVersion = 1;

[[noreturn]] void fail_at(const std::string& source, std::size_t line, const std::string& what) {
  throw Error(source + ":" + std::to_string(line) + ": " + what);
}

std::vector<int> int_list(const json& j, const char* what) {
  if (!j.is_array()) throw Error(std::string(what) + " must be a list of integers");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw Error(std::string(what) + " must be a list of integers");
    out.push_back(v.get<int>());
  }
  return out;
}

Task parse_task(const std::string& s) {
  if (s == "regression") return Task::kRegression;
  if (s == "binary_classification") return Task::kBinaryClassification;
  throw Error("unknown task '" + s + "' (expected regression or binary_classification)");
}

Graph parse_graph(const json& j) {
  if (!j.is_object()) throw Error("graph line must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "nodes" && key != "edges" && key != "directed" && key != "target") {
      throw Error("unknown graph key '" + key + "'");
    }
  }
  Graph g;
  if (!j.contains("nodes") || !j["nodes"].is_array()) throw Error("'nodes' must be a list");
  for (const auto& n : j["nodes"]) g.node_feats.push_back(int_list(n, "node features"));
  g.num_nodes = static_cast<int>(g.node_feats.size());
  if (j.contains("edges")) {
    if (!j["edges"].is_array()) throw Error("'edges' must be a list");
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() < 2 || e.size() > 3 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
        throw Error("each edge must be [src, dst] or [src, dst, [features]]");
      }
      g.edges.push_back({e[0].get<int>(), e[1].get<int>()});
      g.edge_feats.push_back(e.size() == 3 ? int_list(e[2], "edge features") : std::vector<int>{});
    }
  }
  if (j.contains("directed")) {
    if (!j["directed"].is_boolean()) throw Error("'directed' must be true or false");
    g.directed = j["directed"].get<bool>();
  }
  if (j.contains("target") && !j["target"].is_null()) {
    if (!j["target"].is_number()) throw Error("'target' must be a number");
    g.target = j["target"].get<double>();
  }
  return g;
}

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(path + ": truncated file");
  return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
  }
}

Eigen::MatrixXd get_matrix(std::istream& in, const std::string& path) {
  const auto r = get<std::uint32_t>(in, path), c = get<std::uint32_t>(in, path);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get<double>(in, path);
  }
  return m;
}

void put_ints(std::ostream& out, const int* data, std::size_t n) {
  put<std::uint64_t>(out, n);
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(int)));
}

std::vector<int> get_ints(std::istream& in, const std::string& path) {
  const auto n = get<std::uint64_t>(in, path);
  std::vector<int> v(n);
  if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(int)))) {
    throw Error(path + ": truncated file");
  }
  return v;
}

// Writes to a sibling temporary and renames, so readers never see a
// half-written file.
template <typename Fn>
void write_atomically(const std::string& path, Fn&& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    body(out);
    if (!out) throw Error("failed writing " + path);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::string task_name(Task t) { return t == Task::kRegression ? "regression" : "binary_classification"; }

Dataset parse_dataset(std::istream& in, const std::string& source) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail_at(source, lineno, std::string("malformed JSON: ") + e.what());
    }
    try {
      if (!have_header) {
        if (!j.is_object() || j.value("format", "") != kDatasetFormat) throw Error("missing dataset header");
        if (j.value("version", 0) != kDatasetVersion) throw Error("unsupported dataset version");
        for (const auto& [key, value] : j.items()) {
          if (key != "format" && key != "version" && key != "task" && key != "node_vocab" && key != "edge_vocab") {
            throw Error("unknown header key '" + key + "'");
          }
        }
        ds.task = parse_task(j.value("task", "regression"));
        ds.node_vocab = int_list(j.at("node_vocab"), "node_vocab");
        ds.edge_vocab = int_list(j.at("edge_vocab"), "edge_vocab");
        if (ds.node_vocab.empty() || ds.edge_vocab.empty()) throw Error("vocabularies need at least one slot");
        for (int v : ds.node_vocab) {
          if (v <= 0) throw Error("vocabulary cardinalities must be positive");
        }
        for (int v : ds.edge_vocab) {
          if (v <= 0) throw Error("vocabulary cardinalities must be positive");
        }
        have_header = true;
        continue;
      }
      Graph g = parse_graph(j);
      for (auto& f : g.edge_feats) {
        if (f.empty()) f.assign(ds.edge_vocab.size(), 0);
      }
      validate(g, ds.node_vocab, ds.edge_vocab);
      if (ds.task == Task::kBinaryClassification && g.target && *g.target != 0.0 && *g.target != 1.0) {
        throw Error("classification target must be 0 or 1");
      }
      ds.graphs.push_back(std::move(g));
    } catch (const nlohmann::json::exception& e) {
      fail_at(source, lineno, e.what());
    } catch (const Error& e) {
      fail_at(source, lineno, e.what());
    }
  }
  if (!have_header) throw Error(source + ": empty file (missing header)");
  return ds;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path);
  return parse_dataset(in, path);
}

void write_dataset(std::ostream& out, const Dataset& ds) {
  json header = {{"format", kDatasetFormat},
                 {"version", kDatasetVersion},
                 {"task", task_name(ds.task)},
                 {"node_vocab", ds.node_vocab},
                 {"edge_vocab", ds.edge_vocab}};
  out << header.dump() << '\n';
  for (const auto& g : ds.graphs) {
    json nodes = json::array();
    for (int i = 0; i < g.num_nodes; ++i) {
      nodes.push_back(g.node_feats.empty() ? std::vector<int>(ds.node_vocab.size(), 0) : g.node_feats[i]);
    }
    json edges = json::array();
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      edges.push_back({g.edges[e].src, g.edges[e].dst,
                       g.edge_feats.empty() ? std::vector<int>(ds.edge_vocab.size(), 0) : g.edge_feats[e]});
    }
    json line = {{"nodes", nodes}, {"edges", edges}, {"directed", g.directed}};
    if (g.target) line["target"] = *g.target;
    out << line.dump() << '\n';
  }
}

void save_dataset(const std::string& path, const Dataset& ds) {
  write_atomically(path, [&](std::ostream& out) { write_dataset(out, ds); });
}

// ---- run configuration ----

namespace {

struct ConfigReader {
  const json& j;
  std::string source;
  std::vector<std::string> seen;

  const json* find(const char* key) {
    seen.emplace_back(key);
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
  }
  [[noreturn]] void bad(const char* key, const char* type) {
    throw Error(source + ": '" + key + "' must be " + type);
  }
  void integer(const char* key, int& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) bad(key, "an integer");
      dst = v->get<int>();
    }
  }
  void seed(const char* key, std::uint64_t& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer() || v->get<long long>() < 0) bad(key, "a non-negative integer");
      dst = v->get<std::uint64_t>();
    }
  }
  void number(const char* key, double& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) bad(key, "a number");
      dst = v->get<double>();
    }
  }
  void boolean(const char* key, bool& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) bad(key, "true or false");
      dst = v->get<bool>();
    }
  }
  void string(const char* key, std::string& dst) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) bad(key, "a string");
      dst = v->get<std::string>();
    }
  }
};

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(source + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw Error(source + ": configuration must be a JSON object");
  RunConfig rc;
  auto& t = rc.train;
  auto& m = t.model;
  auto& o = t.optim;
  ConfigReader r{j, source, {}};
  r.integer("num_layers", m.num_layers);
  r.integer("hidden_dim", m.hidden_dim);
  r.integer("num_heads", m.num_heads);
  r.integer("edge_dim", m.edge_dim);
  r.integer("max_degree", m.max_degree);
  r.integer("max_spd", m.max_spd);
  r.integer("max_path_len", m.max_path_len);
  r.number("dropout", m.dropout);
  r.number("attention_dropout", m.attention_dropout);
  r.number("embedding_dropout", m.embedding_dropout);
  std::string activation = "gelu";
  r.string("activation", activation);
  if (activation == "gelu") {
    m.activation = Activation::kGelu;
  } else if (activation == "relu") {
    m.activation = Activation::kRelu;
  } else {
    throw Error(source + ": 'activation' must be \"gelu\" or \"relu\"");
  }
  r.boolean("use_spatial", m.use_spatial);
  r.boolean("use_centrality", m.use_centrality);
  r.boolean("use_edge", m.use_edge);
  r.boolean("final_layer_norm", m.final_layer_norm);
  r.number("peak_lr", o.peak_lr);
  r.number("beta1", o.beta1);
  r.number("beta2", o.beta2);
  r.number("adam_eps", o.eps);
  r.number("weight_decay", o.weight_decay);
  r.integer("warmup_steps", o.warmup_steps);
  r.integer("total_steps", o.total_steps);
  r.number("clip_norm", o.clip_norm);
  bool flag = false;
  FlagConfig fc;
  r.boolean("flag", flag);
  r.number("flag_alpha", fc.alpha);
  r.integer("flag_steps", fc.steps);
  r.number("flag_epsilon", fc.epsilon);
  if (flag) t.flag = fc;
  r.integer("batch_size", t.batch_size);
  r.integer("eval_every", t.eval_every);
  r.seed("seed", t.seed);
  std::string precision = "float32";
  r.string("precision", precision);
  if (precision != "float32" && precision != "float64") {
    throw Error(source + ": 'precision' must be \"float32\" or \"float64\"");
  }
  t.float32 = precision == "float32";
  r.number("valid_fraction", rc.valid_fraction);
  r.string("dataset", rc.dataset);
  r.string("out_dir", rc.out_dir);
  for (const auto& [key, value] : j.items()) {
    if (std::find(r.seen.begin(), r.seen.end(), key) == r.seen.end()) {
      throw Error(source + ": unknown configuration key '" + key + "'");
    }
  }
  if (!(rc.valid_fraction >= 0.0 && rc.valid_fraction < 1.0)) throw Error(source + ": valid_fraction must be in [0, 1)");
  try {
    t.validate();
  } catch (const Error& e) {
    throw Error(source + ": " + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open configuration " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string run_config_to_json(const RunConfig& rc) {
  const auto& t = rc.train;
  const auto& m = t.model;
  const auto& o = t.optim;
  const FlagConfig fc = t.flag.value_or(FlagConfig{});
  // nlohmann::json objects keep keys sorted, which makes the dump canonical.
  json j = {{"num_layers", m.num_layers},
            {"hidden_dim", m.hidden_dim},
            {"num_heads", m.num_heads},
            {"edge_dim", m.edge_dim},
            {"max_degree", m.max_degree},
            {"max_spd", m.max_spd},
            {"max_path_len", m.max_path_len},
            {"dropout", m.dropout},
            {"attention_dropout", m.attention_dropout},
            {"embedding_dropout", m.embedding_dropout},
            {"activation", m.activation == Activation::kGelu ? "gelu" : "relu"},
            {"use_spatial", m.use_spatial},
            {"use_centrality", m.use_centrality},
            {"use_edge", m.use_edge},
            {"final_layer_norm", m.final_layer_norm},
            {"peak_lr", o.peak_lr},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"adam_eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"warmup_steps", o.warmup_steps},
            {"total_steps", o.total_steps},
            {"clip_norm", o.clip_norm},
            {"flag", t.flag.has_value()},
            {"flag_alpha", fc.alpha},
            {"flag_steps", fc.steps},
            {"flag_epsilon", fc.epsilon},
            {"batch_size", t.batch_size},
            {"eval_every", t.eval_every},
            {"seed", t.seed},
            {"precision", t.float32 ? "float32" : "float64"},
            {"valid_fraction", rc.valid_fraction},
            {"dataset", rc.dataset},
            {"out_dir", rc.out_dir}};
  return j.dump(2);
}

std::uint64_t config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.dataset.clear();
  c.out_dir.clear();
  std::uint64_t h = fnv1a(run_config_to_json(c));
  const auto& m = cfg.train.model;
  h = fnv1a(task_name(m.task), h);
  for (int v : m.node_vocab) h = fnv1a(&v, sizeof v, h);
  h = fnv1a(std::string("|"), h);
  for (int v : m.edge_vocab) h = fnv1a(&v, sizeof v, h);
  return h;
}

// ---- checkpoints ----

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  if (ck.names.size() != ck.params.size() || ck.m.size() != ck.params.size() || ck.v.size() != ck.params.size()) {
    throw Error("save_checkpoint: inconsistent tensor lists");
  }
  write_atomically(path, [&](std::ostream& out) {
    out.write(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kBinaryVersion);
    put<std::uint64_t>(out, ck.config_hash);
    put<std::int64_t>(out, ck.step);
    put<std::int64_t>(out, ck.best_step);
    put<double>(out, ck.best_valid);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.params.size()));
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(ck.names[i].size()));
      out.write(ck.names[i].data(), static_cast<std::streamsize>(ck.names[i].size()));
      put_matrix(out, ck.params[i]);
      put_matrix(out, ck.m[i]);
      put_matrix(out, ck.v[i]);
    }
  });
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(path + ": not a checkpoint");
  if (get<std::uint32_t>(in, path) != kBinaryVersion) throw Error(path + ": unsupported checkpoint version");
  Checkpoint ck;
  ck.config_hash = get<std::uint64_t>(in, path);
  ck.step = static_cast<long>(get<std::int64_t>(in, path));
  ck.best_step = static_cast<long>(get<std::int64_t>(in, path));
  ck.best_valid = get<double>(in, path);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw Error(path + ": truncated file");
    ck.names.push_back(std::move(name));
    ck.params.push_back(get_matrix(in, path));
    ck.m.push_back(get_matrix(in, path));
    ck.v.push_back(get_matrix(in, path));
  }
  return ck;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
    if (!in) break;
  }
  return h;
}

// ---- feature sidecar ----

void save_feature_cache(const std::string& path, std::uint64_t dataset_hash, int max_path_len,
                        const std::vector<StructuralFeatures>& features) {
  write_atomically(path, [&](std::ostream& out) {
    out.write(kFeatureMagic, 4);
    put<std::uint32_t>(out, kBinaryVersion);
    put<std::uint64_t>(out, dataset_hash);
    put<std::int32_t>(out, max_path_len);
    put<std::uint64_t>(out, features.size());
    for (const auto& sf : features) {
      put<std::int32_t>(out, sf.num_nodes);
      put<std::uint8_t>(out, sf.has_vnode ? 1 : 0);
      put_ints(out, sf.spd.data(), static_cast<std::size_t>(sf.spd.size()));
      put_ints(out, sf.path_offsets.data(), sf.path_offsets.size());
      put_ints(out, sf.path_data.data(), sf.path_data.size());
      put_ints(out, sf.indeg.data(), sf.indeg.size());
      put_ints(out, sf.outdeg.data(), sf.outdeg.size());
    }
  });
}

std::optional<std::vector<StructuralFeatures>> load_feature_cache(const std::string& path,
                                                                  std::uint64_t dataset_hash, int max_path_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kFeatureMagic, 4) != 0) throw Error(path + ": not a feature cache");
  if (get<std::uint32_t>(in, path) != kBinaryVersion) return std::nullopt;
  if (get<std::uint64_t>(in, path) != dataset_hash) return std::nullopt;
  if (get<std::int32_t>(in, path) != max_path_len) return std::nullopt;
  const auto count = get<std::uint64_t>(in, path);
  std::vector<StructuralFeatures> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    StructuralFeatures sf;
    sf.num_nodes = get<std::int32_t>(in, path);
    sf.has_vnode = get<std::uint8_t>(in, path) != 0;
    const auto spd = get_ints(in, path);
    if (spd.size() != static_cast<std::size_t>(sf.num_nodes) * sf.num_nodes) throw Error(path + ": corrupt SPD block");
    sf.spd = Eigen::Map<const SpdMatrix>(spd.data(), sf.num_nodes, sf.num_nodes);
    sf.path_offsets = get_ints(in, path);
    sf.path_data = get_ints(in, path);
    sf.indeg = get_ints(in, path);
    sf.outdeg = get_ints(in, path);
    out.push_back(std::move(sf));
  }
  return out;
}

// ---- workers ----

int worker_threads() {
  if (const char* env = std::getenv("GRAPHORMER_KIT_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(worker_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      (void)w;
      for (std::size_t i; !failed && (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<PreparedGraph> prepare_all(const std::vector<Graph>& graphs, int max_path_len) {
  std::vector<PreparedGraph> out(graphs.size());
  parallel_for(graphs.size(), [&](std::size_t i) { out[i] = prepare_graph(graphs[i], max_path_len); });
  return out;
}

std::string feature_cache_path(const std::string& dataset_path) { return dataset_path + ".features"; }

std::vector<PreparedGraph> load_prepared(const Dataset& ds, const std::string& dataset_path, int max_path_len,
                                         bool* from_cache) {
  auto cached = load_feature_cache(feature_cache_path(dataset_path), file_hash(dataset_path), max_path_len);
  if (from_cache) *from_cache = cached && cached->size() == ds.graphs.size();
  if (!cached || cached->size() != ds.graphs.size()) return prepare_all(ds.graphs, max_path_len);
  std::vector<PreparedGraph> out;
  out.reserve(ds.graphs.size());
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    if ((*cached)[i].num_nodes != ds.graphs[i].num_nodes + 1) {
      if (from_cache) *from_cache = false;
      return prepare_all(ds.graphs, max_path_len);
    }
    out.push_back(PreparedGraph{with_virtual_node_token(ds.graphs[i]), std::move((*cached)[i])});
  }
  return out;
}

}  // namespace graphormer
