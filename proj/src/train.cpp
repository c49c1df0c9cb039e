#include "dirgnn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace dirgnn::train {

using ad::Tape;
using ad::Var;
using ojson = nlohmann::ordered_json;

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Dir: return "dir";
    case Mode::DirVar: return "dir-var";
    case Mode::Erm: return "erm";
    case Mode::Attn: return "attn";
  }
  return "?";
}

std::optional<Mode> parse_mode(const std::string& s) {
  if (s == "dir") return Mode::Dir;
  if (s == "dir-var") return Mode::DirVar;
  if (s == "erm") return Mode::Erm;
  if (s == "attn") return Mode::Attn;
  return std::nullopt;
}

void TrainConfig::check() const {
  if (lambda < 0.0) throw ContractError("lambda must be >= 0");
  if (!(r > 0.0 && r < 1.0)) throw ContractError("r must lie in (0,1)");
  if (!(lr > 0.0)) throw ContractError("learning rate must be > 0");
  if (batch_size == 0) throw ContractError("batch size must be > 0");
  if (max_epochs == 0) throw ContractError("max epochs must be > 0");
  if (k == 0) throw ContractError("k must be >= 1");
}

std::string TrainConfig::to_json() const {
  ojson j;
  j["mode"] = mode_name(mode);
  j["lambda"] = lambda;
  j["effective_lambda"] = effective_lambda();
  j["r"] = r;
  j["lr"] = lr;
  j["optimizer"] = optimizer == optim::Kind::Adam ? "adam" : "sgd";
  j["batch_size"] = batch_size;
  j["max_epochs"] = max_epochs;
  j["patience"] = patience;
  j["seed"] = seed;
  j["k"] = k;
  j["eval_batch"] = eval_batch;
  j["model"] = ojson::parse(model.to_json());
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& s) {
  const ojson j = ojson::parse(s);
  TrainConfig c;
  const auto m = parse_mode(j.at("mode").get<std::string>());
  if (!m) throw ValidationError("unknown training mode in config");
  c.mode = *m;
  c.lambda = j.at("lambda").get<double>();
  c.r = j.at("r").get<double>();
  c.lr = j.at("lr").get<double>();
  c.optimizer = j.at("optimizer").get<std::string>() == "sgd" ? optim::Kind::Sgd : optim::Kind::Adam;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.k = j.at("k").get<std::size_t>();
  c.eval_batch = j.value("eval_batch", std::size_t{256});
  c.model = dir::ModelConfig::from_json(j.at("model").dump());
  return c;
}

namespace {

void put(std::ostringstream& os, double v) {
  if (std::isnan(v)) {
    os << "nan";
    return;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::string csv_row(const MetricsRecord& m) {
  std::ostringstream os;
  os << m.epoch << ',';
  put(os, m.train_loss);
  os << ',';
  put(os, m.risk_mean);
  os << ',';
  put(os, m.risk_var);
  os << ',';
  put(os, m.val_acc);
  os << ',';
  put(os, m.test_acc);
  os << ',';
  put(os, m.prec_at_k);
  os << ',';
  put(os, m.spurious_entropy);
  return os.str();
}

std::string metrics_csv(std::span<const MetricsRecord> history) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& m : history) out += csv_row(m) + "\n";
  return out;
}

std::string run_file_name(Mode mode, double bias, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", bias);
  return std::string(mode_name(mode)) + "_b" + buf + "_s" + std::to_string(seed) + ".csv";
}

double accuracy(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double precision_at_k(std::span<const double> mask, std::span<const std::uint8_t> truth, std::size_t k) {
  if (mask.size() != truth.size()) throw DimensionError("precision_at_k: mask/truth length mismatch");
  if (k == 0) throw ContractError("precision_at_k: k must be >= 1");
  if (mask.empty()) return 0.0;
  const auto order = dir::rank_edges(mask);
  const std::size_t kk = std::min(k, mask.size());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < kk; ++i) hit += truth[order[i]] != 0;
  return static_cast<double>(hit) / static_cast<double>(kk);
}

double softmax_entropy(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  const double logz = std::log(z);
  double h = 0.0;
  for (double v : logits) {
    const double lp = v - m - logz;
    h -= std::exp(lp) * lp;
  }
  return h;
}

double spurious_confidence(std::span<const std::vector<double>> logits) {
  if (logits.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& l : logits) s += softmax_entropy(l);
  return s / static_cast<double>(logits.size());
}

StopDecision early_stop(std::span<const double> val_history, std::size_t patience) {
  if (val_history.empty()) throw ContractError("early_stop: no recorded epochs");
  double best = val_history[0];
  std::size_t since = 0;
  for (std::size_t i = 1; i < val_history.size(); ++i) {
    if (val_history[i] > best) {
      best = val_history[i];
      since = 0;
    } else {
      ++since;
    }
  }
  return since > 0 && since >= patience ? StopDecision::Stop : StopDecision::Continue;
}

std::size_t best_epoch_index(std::span<const double> val_history) {
  if (val_history.empty()) throw ContractError("best_epoch_index: no recorded epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < val_history.size(); ++i) {
    if (val_history[i] > val_history[best]) best = i;
  }
  return best;
}

namespace {

void step_all(dir::DirModel& model, dir::Optimizers& opt, double lr) {
  const auto gs = model.groups();
  for (std::size_t k = 0; k < gs.size(); ++k) optim::step(*gs[k], opt.state[k], lr);
}

// Logits on the full graph; with `weighted`, edges carry the generator mask.
Var full_graph_logits(Tape& tape, dir::DirModel& model, const Batch& batch, bool weighted,
                      std::optional<Var>* mask_out = nullptr) {
  const dir::SubgraphBatch full = dir::full_subgraphs(batch);
  std::optional<Var> w;
  if (weighted) {
    Var mask = dir::compute_edge_mask(tape, dir::node_embeddings(tape, model, batch), batch.edges);
    if (mask_out) *mask_out = mask;
    w = tape.row_gather(mask, full.edge_source);
  }
  return dir::encode_and_predict(tape, model, full, batch.x, w, model.causal, model.causal_head);
}

double supervised_step(dir::DirModel& model, dir::Optimizers& opt, const Batch& batch, double lr,
                       bool weighted) {
  model.zero_grad();
  Tape tape;
  Var logits = full_graph_logits(tape, model, batch, weighted);
  std::vector<ad::Index> y(batch.labels.begin(), batch.labels.end());
  Var loss = tape.mean_all(tape.softmax_cross_entropy(logits, std::move(y)));
  tape.backward(loss);
  step_all(model, opt, lr);
  return tape.value(loss).item();
}

}  // namespace

double erm_step(dir::DirModel& model, dir::Optimizers& opt, const Batch& batch, double lr) {
  return supervised_step(model, opt, batch, lr, false);
}

double attention_step(dir::DirModel& model, dir::Optimizers& opt, const Batch& batch, double lr) {
  return supervised_step(model, opt, batch, lr, true);
}

Evaluation evaluate(dir::DirModel& model, const TrainConfig& cfg, std::span<const Graph> graphs,
                    bool want_entropy) {
  Evaluation ev;
  std::vector<std::int32_t> labels;
  std::vector<std::vector<double>> spurious;
  double prec_sum = 0.0;
  const bool has_mask = cfg.uses_generator();
  for (std::size_t lo = 0; lo < graphs.size(); lo += cfg.eval_batch) {
    const std::size_t hi = std::min(graphs.size(), lo + cfg.eval_batch);
    const auto chunk = graphs.subspan(lo, hi - lo);
    const Batch batch = make_batch(chunk);
    if (cfg.uses_spurious_branch()) {
      auto inf = dir::infer_batch(model, batch, cfg.r, want_entropy);
      for (std::size_t g = 0; g < inf.size(); ++g) {
        ev.predictions.push_back(inf[g].pred);
        ev.masks.push_back(std::move(inf[g].split.mask));
        if (want_entropy) spurious.push_back(std::move(inf[g].spurious_logits));
      }
    } else {
      Tape tape;
      std::optional<Var> mask;
      Var logits = full_graph_logits(tape, model, batch, has_mask, &mask);
      const Tensor& lv = tape.value(logits);
      for (std::size_t g = 0; g < batch.num_graphs(); ++g) {
        ev.predictions.push_back(dir::argmax(std::span<const double>(lv.row(g), lv.cols())));
        if (mask) {
          const Tensor& mv = tape.value(*mask);
          ev.masks.emplace_back(mv.data() + batch.edge_offset[g], mv.data() + batch.edge_offset[g + 1]);
        }
      }
    }
    for (const auto& g : chunk) labels.push_back(g.label);
  }
  ev.acc = accuracy(ev.predictions, labels);
  if (has_mask && !graphs.empty()) {
    for (std::size_t g = 0; g < graphs.size(); ++g) {
      prec_sum += precision_at_k(ev.masks[g], graphs[g].edge_truth, cfg.k);
    }
    ev.prec_at_k = prec_sum / static_cast<double>(graphs.size());
  }
  if (want_entropy && cfg.uses_spurious_branch()) ev.spurious_entropy = spurious_confidence(spurious);
  return ev;
}

MetricsRecord evaluate_epoch(dir::DirModel& model, const TrainConfig& cfg, std::span<const Graph> val,
                             std::span<const Graph> test) {
  MetricsRecord m;
  const Evaluation v = evaluate(model, cfg, val, true);
  const Evaluation t = evaluate(model, cfg, test, false);
  m.val_acc = v.acc;
  m.spurious_entropy = v.spurious_entropy;
  m.test_acc = t.acc;
  m.prec_at_k = t.prec_at_k;
  return m;
}

RunResult run_experiment(const TrainConfig& cfg, std::span<const Graph> train,
                         std::span<const Graph> val, std::span<const Graph> test,
                         const StepObserver& observer) {
  cfg.check();
  if (train.empty() || val.empty() || test.empty()) throw ContractError("run_experiment: empty split");
  RunResult res;
  dir::DirModel model = dir::DirModel::create(cfg.model, mix(cfg.seed, 1));
  dir::Optimizers opt = dir::Optimizers::create(model, cfg.optimizer);
  std::mt19937_64 shuffle_rng(mix(cfg.seed, 2));

  dir::DirConfig dcfg;
  dcfg.r = cfg.r;
  dcfg.lambda = cfg.effective_lambda();
  dcfg.lr = cfg.lr;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> val_history;
  bool have_best = false;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0, mean_sum = 0.0, var_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::vector<const Graph*> members;
      members.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) members.push_back(&train[order[i]]);
      const Batch batch = make_batch(std::span<const Graph* const>(members));
      switch (cfg.mode) {
        case Mode::Dir:
        case Mode::DirVar: {
          const auto step = dir::dir_step(model, opt, batch, dcfg);
          res.routing_ok = res.routing_ok && step.shortcut_isolated && step.spurious_isolated;
          if (dcfg.lambda == 0.0) {
            res.lambda_collapse_ok = res.lambda_collapse_ok && step.report.r_dir == step.report.mean_risk;
          }
          loss_sum += step.report.r_dir;
          mean_sum += step.report.mean_risk;
          // logged as the penalty actually applied, so DIR-Var reads zero
          var_sum += step.report.lambda * step.report.variance;
          if (observer) observer(epoch, step);
          break;
        }
        case Mode::Erm: {
          const double l = erm_step(model, opt, batch, cfg.lr);
          loss_sum += l;
          mean_sum += l;
          break;
        }
        case Mode::Attn: {
          const double l = attention_step(model, opt, batch, cfg.lr);
          loss_sum += l;
          mean_sum += l;
          break;
        }
      }
      ++steps;
    }
    res.steps += steps;

    MetricsRecord m = evaluate_epoch(model, cfg, val, test);
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(steps);
    m.risk_mean = mean_sum / static_cast<double>(steps);
    m.risk_var = var_sum / static_cast<double>(steps);
    res.history.push_back(m);
    val_history.push_back(m.val_acc);

    if (!have_best || best_epoch_index(val_history) == val_history.size() - 1) {
      res.best_model = model;
      res.best_epoch = epoch;
      have_best = true;
    }
    if (early_stop(val_history, cfg.patience) == StopDecision::Stop) break;
  }
  return res;
}

}  // namespace dirgnn::train
