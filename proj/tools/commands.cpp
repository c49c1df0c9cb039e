#include "commands.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dirgnn/errors.hpp"

namespace dirgnn::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "dirgnn-0.1.0";

std::vector<std::string>& command_line() {
  static std::vector<std::string> argv;
  return argv;
}

using Clock = std::chrono::steady_clock;

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw CommandError(kMissingInput, "cannot write " + p.string());
  out << text;
}

void write_manifest(const fs::path& dir, const ojson& config, const ojson& hashes, Clock::time_point start) {
  ojson m;
  m["command"] = command_line();
  m["config"] = config;
  m["dataset_sha256"] = hashes;
  m["version"] = kVersion;
  m["wall_clock_seconds"] = std::chrono::duration<double>(Clock::now() - start).count();
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

struct LoadedData {
  Dataset train, val, test;
  ojson hashes;
  double bias = std::nan("");
};

Dataset load_split(const fs::path& p) {
  if (!fs::exists(p)) throw CommandError(kMissingInput, "missing dataset file " + p.string());
  try {
    return load_jsonl(p);
  } catch (const ParseError& e) {
    throw CommandError(kMissingInput, p.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw CommandError(kMissingInput, p.string() + ": " + e.what());
  }
}

LoadedData load_data(const fs::path& dir, bool need_train) {
  if (!fs::is_directory(dir)) throw CommandError(kMissingInput, "dataset directory not found: " + dir.string());
  LoadedData d;
  d.hashes = ojson::object();
  if (need_train) {
    d.train = load_split(dir / "train.jsonl");
    d.hashes["train.jsonl"] = sha256_file(dir / "train.jsonl");
  }
  d.val = load_split(dir / "val.jsonl");
  d.hashes["val.jsonl"] = sha256_file(dir / "val.jsonl");
  d.test = load_split(dir / "test.jsonl");
  d.hashes["test.jsonl"] = sha256_file(dir / "test.jsonl");
  std::ifstream man(dir / "manifest.json");
  if (man) {
    try {
      const ojson m = ojson::parse(man);
      d.bias = m.at("config").at("bias").get<double>();
    } catch (const nlohmann::json::exception&) {
    }
  }
  return d;
}

std::size_t feature_dim(const Dataset& d) { return d.empty() ? 0 : d.front().feature_dim(); }

fs::path checkpoint_dir(const fs::path& p) {
  if (fs::exists(p / "checkpoint.json")) return p;
  if (fs::exists(p / "checkpoint" / "checkpoint.json")) return p / "checkpoint";
  throw CommandError(kMissingInput, "no checkpoint found at " + p.string());
}

struct LoadedModel {
  dir::DirModel model;
  train::TrainConfig cfg;
  ojson meta;
};

LoadedModel load_model(const fs::path& p) {
  const fs::path dir = checkpoint_dir(p);
  LoadedModel lm;
  try {
    lm.meta = ojson::parse(gnn::read_checkpoint_config(dir));
    lm.cfg = train::TrainConfig::from_json(lm.meta.at("train").dump());
    lm.model = dir::DirModel::create(lm.cfg.model, 0);
    gnn::load_checkpoint(dir, lm.model.groups());
  } catch (const nlohmann::json::exception& e) {
    throw CommandError(kIncompatible, std::string("bad checkpoint: ") + e.what());
  } catch (const ValidationError& e) {
    throw CommandError(kIncompatible, e.what());
  }
  return lm;
}

void check_width(const train::TrainConfig& cfg, const Dataset& d) {
  if (!d.empty() && feature_dim(d) != cfg.model.in_dim) {
    throw CommandError(kIncompatible, "dataset feature width " + std::to_string(feature_dim(d)) +
                                          " does not match checkpoint input width " +
                                          std::to_string(cfg.model.in_dim));
  }
}

struct TrainOutcome {
  train::RunResult result;
  std::string csv_name;
};

// Trains one configuration and writes CSV, checkpoint and manifest into out.
TrainOutcome train_into(const train::TrainConfig& cfg, const LoadedData& data, const fs::path& out,
                        Clock::time_point start) {
  fs::create_directories(out);
  TrainOutcome o;
  o.result = train::run_experiment(cfg, data.train, data.val, data.test);
  o.csv_name = train::run_file_name(cfg.mode, data.bias, cfg.seed);
  write_text(out / o.csv_name, train::metrics_csv(o.result.history));

  ojson meta;
  meta["train"] = ojson::parse(cfg.to_json());
  meta["best_epoch"] = o.result.best_epoch;
  meta["epochs_run"] = o.result.history.size();
  meta["metrics_csv"] = o.csv_name;
  meta["routing_ok"] = o.result.routing_ok;
  gnn::CheckpointMeta cm;
  cm.seed = cfg.seed;
  cm.extra_json = meta.dump();
  const auto groups = o.result.best_model.groups();
  const std::array<const ParamGroup*, 4> cgroups{groups[0], groups[1], groups[2], groups[3]};
  gnn::save_checkpoint(out / "checkpoint", cgroups, cm);

  ojson config = ojson::parse(cfg.to_json());
  config["bias"] = data.bias;
  write_manifest(out, config, data.hashes, start);
  return o;
}

}  // namespace

void set_command_line(std::vector<std::string> argv) { command_line() = std::move(argv); }

std::string sha256_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CommandError(kMissingInput, "cannot read " + p.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char byte[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(byte, sizeof byte, "%02x", md[i]);
    hex += byte;
  }
  return hex;
}

int cmd_generate(const GenerateArgs& a) {
  const auto start = Clock::now();
  try {
    a.cfg.check();
  } catch (const ContractError& e) {
    throw CommandError(kUsage, e.what());
  }
  fs::create_directories(a.out);
  const motif::GeneratedDataset d = motif::generate_dataset(a.cfg);
  save_jsonl(d.train, a.out / "train.jsonl");
  save_jsonl(d.val, a.out / "val.jsonl");
  save_jsonl(d.test, a.out / "test.jsonl");
  write_text(a.out / "stats.txt", motif::stats_report(d));

  ojson hashes;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) hashes[f] = sha256_file(a.out / f);
  ojson config;
  config["bias"] = a.cfg.bias;
  config["n_train"] = a.cfg.n_train;
  config["n_val"] = a.cfg.n_val;
  config["n_test"] = a.cfg.n_test;
  config["base_size"] = a.cfg.base_size;
  config["base_jitter"] = a.cfg.base_jitter;
  config["test_base_scale"] = a.cfg.test_base_scale;
  config["feature_dim"] = a.cfg.feature_dim;
  config["mode"] = motif::mode_name(a.cfg.mode);
  config["seed"] = a.cfg.seed;
  write_manifest(a.out, config, hashes, start);
  std::cout << motif::stats_report(d);
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  const auto start = Clock::now();
  try {
    a.cfg.check();
  } catch (const ContractError& e) {
    throw CommandError(kUsage, e.what());
  }
  const LoadedData data = load_data(a.data, true);
  train::TrainConfig cfg = a.cfg;
  cfg.model.in_dim = feature_dim(data.train);
  const TrainOutcome o = train_into(cfg, data, a.out, start);
  const auto& best = o.result.history[o.result.best_epoch - 1];
  std::cout << "mode=" << train::mode_name(cfg.mode) << " epochs=" << o.result.history.size()
            << " best_epoch=" << o.result.best_epoch << "\n"
            << train::kCsvHeader << "\n"
            << train::csv_row(best) << "\n";
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  const auto start = Clock::now();
  LoadedModel lm = load_model(a.checkpoint);
  const LoadedData data = load_data(a.data, false);
  check_width(lm.cfg, data.val);
  check_width(lm.cfg, data.test);
  if (a.k) lm.cfg.k = *a.k;
  const train::MetricsRecord m = train::evaluate_epoch(lm.model, lm.cfg, data.val, data.test);
  const train::Evaluation test = train::evaluate(lm.model, lm.cfg, data.test, false);

  ojson summary;
  summary["checkpoint_epoch"] = lm.meta.value("best_epoch", std::size_t{0});
  summary["k"] = lm.cfg.k;
  summary["val_acc"] = m.val_acc;
  summary["test_acc"] = m.test_acc;
  summary["prec_at_k"] = std::isnan(m.prec_at_k) ? ojson(nullptr) : ojson(m.prec_at_k);
  summary["spurious_entropy"] = std::isnan(m.spurious_entropy) ? ojson(nullptr) : ojson(m.spurious_entropy);

  const fs::path out = a.out.empty() ? checkpoint_dir(a.checkpoint).parent_path() / "eval" : a.out;
  fs::create_directories(out);
  write_text(out / "eval.json", summary.dump(2) + "\n");
  std::ostringstream preds;
  preds << "id,label,pred\n";
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    preds << data.test[i].id << ',' << data.test[i].label << ',' << test.predictions[i] << "\n";
  }
  write_text(out / "predictions.csv", preds.str());
  ojson config = ojson::parse(lm.cfg.to_json());
  config["checkpoint"] = a.checkpoint.string();
  write_manifest(out, config, data.hashes, start);

  std::printf("checkpoint_epoch=%zu k=%zu\n", summary["checkpoint_epoch"].get<std::size_t>(), lm.cfg.k);
  std::printf("val_acc=%.17g\ntest_acc=%.17g\nprec_at_k=%.17g\nspurious_entropy=%.17g\n", m.val_acc,
              m.test_acc, m.prec_at_k, m.spurious_entropy);
  return kOk;
}

int cmd_sweep(const SweepArgs& a) {
  const auto start = Clock::now();
  if (a.lambdas.empty() || a.seeds == 0) throw CommandError(kUsage, "--lambdas and --seeds must be non-empty");
  for (double l : a.lambdas) {
    if (l < 0.0) throw CommandError(kUsage, "--lambdas entries must be >= 0");
  }
  const LoadedData data = load_data(a.base.data, true);

  struct Cell {
    double lambda;
    std::uint64_t seed;
    bool ok = false;
    double test_acc = 0.0;
    std::string error;
  };
  std::vector<Cell> cells;
  for (double l : a.lambdas) {
    for (std::size_t s = 0; s < a.seeds; ++s) cells.push_back(Cell{l, a.base.cfg.seed + s, false, 0.0, {}});
  }

  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DIR_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) threads = static_cast<std::size_t>(v);
  }
  threads = std::min(threads, cells.size());

  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      Cell& c = cells[i];
      train::TrainConfig cfg = a.base.cfg;
      cfg.mode = train::Mode::Dir;
      cfg.lambda = c.lambda;
      cfg.seed = c.seed;
      cfg.model.in_dim = feature_dim(data.train);
      char name[64];
      std::snprintf(name, sizeof name, "lambda_%g/s%llu", c.lambda, static_cast<unsigned long long>(c.seed));
      try {
        const TrainOutcome o = train_into(cfg, data, a.base.out / name, Clock::now());
        c.test_acc = o.result.history[o.result.best_epoch - 1].test_acc;
        c.ok = true;
      } catch (const std::exception& e) {
        c.error = e.what();
      }
      std::lock_guard lock(log_mu);
      std::cerr << name << (c.ok ? " ok test_acc=" + std::to_string(c.test_acc) : " FAILED: " + c.error) << "\n";
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::ostringstream summary;
  summary << "lambda,runs,failed,mean_test_acc,std_test_acc\n";
  std::vector<std::pair<double, double>> means;
  for (double l : a.lambdas) {
    std::vector<double> accs;
    std::size_t failed = 0;
    for (const auto& c : cells) {
      if (c.lambda != l) continue;
      if (c.ok) {
        accs.push_back(c.test_acc);
      } else {
        ++failed;
      }
    }
    double mean = 0.0, sd = 0.0;
    for (double v : accs) mean += v;
    if (!accs.empty()) mean /= static_cast<double>(accs.size());
    for (double v : accs) sd += (v - mean) * (v - mean);
    if (accs.size() > 1) sd = std::sqrt(sd / static_cast<double>(accs.size() - 1));
    char row[128];
    std::snprintf(row, sizeof row, "%g,%zu,%zu,%.17g,%.17g\n", l, accs.size() + failed, failed,
                  accs.empty() ? std::nan("") : mean, accs.empty() ? std::nan("") : sd);
    summary << row;
    if (!accs.empty()) means.emplace_back(l, mean);
  }
  fs::create_directories(a.base.out);
  write_text(a.base.out / "sweep_summary.csv", summary.str());
  std::cout << summary.str();
  if (means.size() >= 2) {
    const auto best = std::max_element(means.begin(), means.end(),
                                       [](const auto& x, const auto& y) { return x.second < y.second; });
    const auto& largest = *std::max_element(means.begin(), means.end());
    std::cout << "best lambda=" << best->first << " mean_test_acc=" << best->second
              << "; largest lambda=" << largest.first << " mean_test_acc=" << largest.second
              << (largest.second < best->second ? " (degraded)" : "") << "\n";
  }
  ojson config = ojson::parse(a.base.cfg.to_json());
  config["lambdas"] = a.lambdas;
  config["seeds"] = a.seeds;
  config["threads"] = threads;
  write_manifest(a.base.out, config, data.hashes, start);
  return kOk;
}

int cmd_export(const ExportArgs& a) {
  const auto start = Clock::now();
  if (a.format != "json" && a.format != "dot") throw CommandError(kUsage, "--format must be json or dot");
  LoadedModel lm = load_model(a.checkpoint);
  if (!fs::is_directory(a.data)) throw CommandError(kMissingInput, "dataset directory not found: " + a.data.string());

  std::vector<Graph> selected;
  ojson hashes = ojson::object();
  std::vector<std::int64_t> missing = a.ids;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
    const fs::path p = a.data / f;
    if (!fs::exists(p)) continue;
    hashes[f] = sha256_file(p);
    const Dataset d = load_split(p);
    for (const auto& g : d) {
      const bool by_split = !a.split.empty() && a.split == split_name(g.split);
      const bool by_id = std::find(a.ids.begin(), a.ids.end(), g.id) != a.ids.end();
      if (by_split || by_id) selected.push_back(g);
      if (by_id) std::erase(missing, g.id);
    }
  }
  if (!missing.empty()) throw CommandError(kNotFound, "unknown graph id " + std::to_string(missing.front()));
  if (selected.empty()) throw CommandError(kNotFound, "no graphs matched the selection");
  check_width(lm.cfg, selected);

  fs::create_directories(a.out);
  for (const auto& g : selected) {
    dir::Inference inf = dir::infer(lm.model, g, lm.cfg.r);
    if (!lm.cfg.uses_spurious_branch()) {
      inf.pred = train::evaluate(lm.model, lm.cfg, std::span<const Graph>(&g, 1), false).predictions[0];
    }
    const std::string stem = "graph_" + std::to_string(g.id);
    if (a.format == "json") {
      write_text(a.out / (stem + ".json"), dir::rationale_json(g, inf) + "\n");
    } else {
      write_text(a.out / (stem + ".dot"), dir::rationale_dot(g, inf));
    }
  }
  ojson config;
  config["checkpoint"] = a.checkpoint.string();
  config["format"] = a.format;
  config["count"] = selected.size();
  write_manifest(a.out, config, hashes, start);
  std::cout << "exported " << selected.size() << " rationale file(s) to " << a.out.string() << "\n";
  return kOk;
}

}  // namespace dirgnn::cli
