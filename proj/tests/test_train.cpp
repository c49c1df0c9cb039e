#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "dirgnn/optim.hpp"
#include "dirgnn/spurious_motif.hpp"
#include "dirgnn/train.hpp"
#include "support.hpp"

using namespace dirgnn;
using namespace dirgnn::train;

namespace {

ParamGroup one_param(Tensor v, Tensor g) {
  ParamGroup group(GroupId::Encoder);
  group.add("w", std::move(v));
  group.params[0].grad = std::move(g);
  return group;
}

motif::GeneratedDataset tiny_dataset(std::uint64_t seed) {
  motif::GenConfig cfg;
  cfg.seed = seed;
  cfg.n_train = 96;
  cfg.n_val = 48;
  cfg.n_test = 48;
  cfg.base_size = 8;
  cfg.base_jitter = 2;
  return motif::generate_dataset(cfg);
}

TrainConfig tiny_config(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.max_epochs = 3;
  c.batch_size = 16;
  c.model.hidden = 8;
  c.model.head_hidden = 8;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("zero gradient leaves parameters unchanged") {
  for (auto kind : {optim::Kind::Adam, optim::Kind::Sgd}) {
    ParamGroup g = one_param(Tensor(2, 2, {1.0, -2.0, 3.0, 0.5}), Tensor(2, 2));
    const Tensor before = g.params[0].value;
    optim::State s = optim::init_state(g, kind);
    optim::step(g, s, 0.1);
    CHECK(g.params[0].value == before);
  }
}

TEST_CASE("sgd step") {
  ParamGroup g = one_param(Tensor(1, 3, {1.0, 2.0, 3.0}), Tensor(1, 3, {0.5, -1.0, 2.0}));
  optim::State s = optim::init_state(g, optim::Kind::Sgd);
  optim::step(g, s, 0.1);
  CHECK(g.params[0].value[0] == doctest::Approx(0.95));
  CHECK(g.params[0].value[1] == doctest::Approx(2.1));
  CHECK(g.params[0].value[2] == doctest::Approx(2.8));
}

TEST_CASE("first adam step moves each coordinate by about the learning rate") {
  // t = 1: m = 0.1 g, v = 0.001 g^2, mhat = g, vhat = g^2, update = a g / (|g| + eps).
  for (double gval : {1e-3, 0.5, 40.0, -7.0}) {
    ParamGroup g = one_param(Tensor::scalar(1.0), Tensor::scalar(gval));
    optim::State s = optim::init_state(g, optim::Kind::Adam);
    optim::step(g, s, 1e-3);
    const double expected = 1e-3 * gval / (std::abs(gval) + 1e-8);
    CHECK(1.0 - g.params[0].value.item() == doctest::Approx(expected).epsilon(1e-9));
    CHECK(std::abs(1.0 - g.params[0].value.item()) == doctest::Approx(1e-3).epsilon(1e-4));
  }
}

TEST_CASE("optimizer shape mismatch is a contract error") {
  ParamGroup g = one_param(Tensor(2, 2), Tensor(2, 2));
  optim::State s = optim::init_state(g, optim::Kind::Adam);
  g.add("extra", Tensor(1, 1));
  CHECK_THROWS_AS(optim::step(g, s, 0.1), ContractError);
}

TEST_CASE("early stopping examples") {
  const double rising[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7};
  for (std::size_t n = 1; n <= 7; ++n) {
    CHECK(early_stop(std::span<const double>(rising, n), 5) == StopDecision::Continue);
  }
  const double flat[] = {0.5, 0.4, 0.4, 0.4, 0.4, 0.4};
  CHECK(early_stop(std::span<const double>(flat, 5), 5) == StopDecision::Continue);
  CHECK(early_stop(std::span<const double>(flat, 6), 5) == StopDecision::Stop);
  CHECK(best_epoch_index(flat) == 0);
  const double dip[] = {0.3, 0.2};
  CHECK(early_stop(std::span<const double>(dip, 1), 0) == StopDecision::Continue);
  CHECK(early_stop(dip, 0) == StopDecision::Stop);
  const double equal[] = {0.3, 0.3};
  CHECK(early_stop(equal, 1) == StopDecision::Stop);
  CHECK(best_epoch_index(equal) == 0);
  CHECK_THROWS_AS(early_stop({}, 5), ContractError);
}

TEST_CASE("accuracy") {
  const std::int32_t pred[] = {0, 1, 2, 2};
  const std::int32_t y[] = {0, 1, 1, 2};
  CHECK(accuracy(pred, y) == 0.75);
  CHECK_THROWS_AS(accuracy(std::span<const std::int32_t>(pred, 3), y), DimensionError);
}

TEST_CASE("precision at k") {
  const double mask[] = {0.9, 0.1, 0.8, 0.8, 0.2};
  const std::uint8_t truth[] = {1, 1, 0, 1, 0};
  CHECK(precision_at_k(mask, truth, 1) == 1.0);
  // ranks: 0, 2, 3 (tie broken by index), 4, 1
  CHECK(precision_at_k(mask, truth, 2) == 0.5);
  CHECK(precision_at_k(mask, truth, 3) == doctest::Approx(2.0 / 3.0));
  CHECK(precision_at_k(mask, truth, 50) == doctest::Approx(3.0 / 5.0));
  CHECK_THROWS_AS(precision_at_k(mask, truth, 0), ContractError);
}

TEST_CASE("random masks give the hypergeometric mean precision") {
  // 6 truth edges of 40: E[prec@5] = 6/40.
  std::mt19937_64 rng(3);
  std::vector<std::uint8_t> truth(40, 0);
  std::fill(truth.begin(), truth.begin() + 6, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20000;
  double sum = 0.0, sq = 0.0;
  for (int t = 0; t < n; ++t) {
    std::vector<double> mask(40);
    for (auto& m : mask) m = u(rng);
    const double p = precision_at_k(mask, truth, 5);
    sum += p;
    sq += p * p;
  }
  const double mean = sum / n;
  const double sd = std::sqrt((sq / n - mean * mean) / n);
  CHECK(std::abs(mean - 6.0 / 40.0) < 4.0 * sd);
}

TEST_CASE("entropy references") {
  const double zero[] = {0.0, 0.0, 0.0};
  CHECK(std::abs(softmax_entropy(zero) - std::log(3.0)) <= 1e-12);
  const double sharp[] = {60.0, 0.0, 0.0};
  CHECK(softmax_entropy(sharp) < 1e-20);
  const std::vector<std::vector<double>> batch{{0, 0, 0}, {60, 0, 0}};
  CHECK(spurious_confidence(batch) == doctest::Approx(std::log(3.0) / 2.0));
}

TEST_CASE("csv formatting and run file names") {
  MetricsRecord m;
  m.epoch = 3;
  m.train_loss = 0.1;
  m.val_acc = 0.5;
  const std::string row = csv_row(m);
  CHECK(row == "3,0.10000000000000001,0,0,0.5,0,nan,nan");
  const auto csv = metrics_csv(std::vector<MetricsRecord>{m});
  CHECK(csv.rfind(kCsvHeader, 0) == 0);
  CHECK(run_file_name(Mode::Dir, 0.9, 2) == "dir_b0.9_s2.csv");
  CHECK(run_file_name(Mode::DirVar, 0.5, 0) == "dir-var_b0.5_s0.csv");
}

TEST_CASE("train config checks and json round trip") {
  TrainConfig c;
  c.mode = Mode::DirVar;
  c.lambda = 0.3;
  c.seed = 77;
  CHECK(c.effective_lambda() == 0.0);
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.mode == Mode::DirVar);
  CHECK(back.lambda == 0.3);
  CHECK(back.seed == 77);
  CHECK(back.model.hidden == c.model.hidden);
  c.r = 1.0;
  CHECK_THROWS_AS(c.check(), ContractError);
  c.r = 0.25;
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.check(), ContractError);
}

TEST_CASE("short runs in every mode") {
  const auto d = tiny_dataset(4);
  for (auto mode : {Mode::Dir, Mode::DirVar, Mode::Erm, Mode::Attn}) {
    const TrainConfig c = tiny_config(mode);
    const RunResult r = run_experiment(c, d.train, d.val, d.test);
    REQUIRE(!r.history.empty());
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= r.history.size());
    CHECK(r.routing_ok);
    CHECK(r.lambda_collapse_ok);
    for (const auto& m : r.history) {
      CHECK((m.val_acc >= 0.0 && m.val_acc <= 1.0));
      CHECK((m.test_acc >= 0.0 && m.test_acc <= 1.0));
      CHECK(m.risk_var >= 0.0);
      if (mode != Mode::Dir) CHECK(m.risk_var == 0.0);
      CHECK(std::isnan(m.prec_at_k) == (mode == Mode::Erm));
      CHECK(std::isnan(m.spurious_entropy) == (mode == Mode::Erm || mode == Mode::Attn));
    }
    // the returned model reproduces the best epoch's numbers
    dir::DirModel best = r.best_model;
    const MetricsRecord again = evaluate_epoch(best, c, d.val, d.test);
    CHECK(again.val_acc == r.history[r.best_epoch - 1].val_acc);
    CHECK(again.test_acc == r.history[r.best_epoch - 1].test_acc);
  }
}

TEST_CASE("runs are deterministic under a fixed seed") {
  const auto d = tiny_dataset(6);
  const TrainConfig c = tiny_config(Mode::Dir);
  const auto a = run_experiment(c, d.train, d.val, d.test);
  const auto b = run_experiment(c, d.train, d.val, d.test);
  CHECK(metrics_csv(a.history) == metrics_csv(b.history));
}

TEST_CASE("dir-var logs R_DIR equal to the mean risk on every step") {
  const auto d = tiny_dataset(7);
  TrainConfig c = tiny_config(Mode::DirVar);
  c.lambda = 0.7;
  std::size_t steps = 0;
  bool all_equal = true;
  run_experiment(c, d.train, d.val, d.test, [&](std::size_t, const dir::StepResult& s) {
    ++steps;
    all_equal = all_equal && s.report.r_dir == s.report.mean_risk && s.report.lambda == 0.0;
  });
  CHECK(steps > 0);
  CHECK(all_equal);
}

TEST_CASE("patience zero stops at the first non-improvement") {
  const auto d = tiny_dataset(8);
  TrainConfig c = tiny_config(Mode::Erm);
  c.patience = 0;
  c.max_epochs = 50;
  const auto r = run_experiment(c, d.train, d.val, d.test);
  std::vector<double> val;
  for (const auto& m : r.history) val.push_back(m.val_acc);
  for (std::size_t i = 1; i + 1 < val.size(); ++i) CHECK(val[i] > *std::max_element(val.begin(), val.begin() + i));
  if (r.history.size() < 50) CHECK(val.back() <= *std::max_element(val.begin(), val.end() - 1));
}
