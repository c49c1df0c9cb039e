#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dirgnn/dir_engine.hpp"
#include "dirgnn/graph.hpp"
#include "dirgnn/optim.hpp"

namespace dirgnn::train {

enum class Mode : std::uint8_t { Dir, DirVar, Erm, Attn };

const char* mode_name(Mode m);
std::optional<Mode> parse_mode(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::Dir;
  double lambda = 1e-2;
  double r = 0.25;
  double lr = 1e-3;
  optim::Kind optimizer = optim::Kind::Adam;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 400;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  std::size_t k = 5;
  std::size_t eval_batch = 256;
  dir::ModelConfig model;

  // DIR-Var forces lambda to 0.
  double effective_lambda() const { return mode == Mode::DirVar ? 0.0 : lambda; }
  bool uses_generator() const { return mode != Mode::Erm; }
  bool uses_spurious_branch() const { return mode == Mode::Dir || mode == Mode::DirVar; }
  void check() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& s);
};

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double risk_mean = 0.0;
  double risk_var = 0.0;  // lambda * variance of the interventional risks
  double val_acc = 0.0;
  double test_acc = 0.0;
  double prec_at_k = std::numeric_limits<double>::quiet_NaN();
  double spurious_entropy = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr const char* kCsvHeader =
    "epoch,train_loss,risk_mean,risk_var,val_acc,test_acc,prec_at_k,spurious_entropy";

std::string csv_row(const MetricsRecord& m);
std::string metrics_csv(std::span<const MetricsRecord> history);
// {mode}_b{bias}_s{seed}.csv
std::string run_file_name(Mode mode, double bias, std::uint64_t seed);

// --- metrics ---------------------------------------------------------------

double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels);
// Ranks every edge by mask (descending, lower index first on ties); k is
// clamped to the edge count.
double precision_at_k(std::span<const double> mask, std::span<const std::uint8_t> truth, std::size_t k);
// Entropy in nats of softmax(logits).
double softmax_entropy(std::span<const double> logits);
double spurious_confidence(std::span<const std::vector<double>> logits);

// --- early stopping ----------------------------------------------------------

enum class StopDecision : std::uint8_t { Continue, Stop };

// Stops once val-acc has failed to beat its running best for `patience`
// consecutive epochs (patience 0: the first non-improvement).
StopDecision early_stop(std::span<const double> val_history, std::size_t patience);
// Index of the first epoch reaching the best val-acc.
std::size_t best_epoch_index(std::span<const double> val_history);

// --- steps and evaluation --------------------------------------------------

struct StepStats {
  double loss = 0.0;
  double risk_mean = 0.0;
  double risk_var = 0.0;
};

// Full graph, unit edge weights, encoder + causal head, cross-entropy.
double erm_step(dir::DirModel& model, dir::Optimizers& opt, const Batch& batch, double lr);
// Full graph weighted by the generator's edge mask, cross-entropy.
double attention_step(dir::DirModel& model, dir::Optimizers& opt, const Batch& batch, double lr);

struct Evaluation {
  double acc = 0.0;
  double prec_at_k = std::numeric_limits<double>::quiet_NaN();
  double spurious_entropy = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::int32_t> predictions;
  std::vector<std::vector<double>> masks;  // per graph, empty for ERM
};

Evaluation evaluate(dir::DirModel& model, const TrainConfig& cfg, std::span<const Graph> graphs,
                    bool want_entropy);

// val_acc and spurious_entropy come from `val`; test_acc and prec_at_k from `test`.
MetricsRecord evaluate_epoch(dir::DirModel& model, const TrainConfig& cfg, std::span<const Graph> val,
                             std::span<const Graph> test);

struct RunResult {
  std::vector<MetricsRecord> history;
  std::size_t best_epoch = 0;  // 1-based epoch of the returned model
  dir::DirModel best_model;
  bool routing_ok = true;
  bool lambda_collapse_ok = true;
  std::size_t steps = 0;
};

using StepObserver = std::function<void(std::size_t epoch, const dir::StepResult&)>;

RunResult run_experiment(const TrainConfig& cfg, std::span<const Graph> train,
                         std::span<const Graph> val, std::span<const Graph> test,
                         const StepObserver& observer = {});

}  // namespace dirgnn::train
