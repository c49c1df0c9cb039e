#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dirgnn/errors.hpp"
#include "dirgnn/spurious_motif.hpp"

using namespace dirgnn;
using namespace dirgnn::motif;

namespace {

std::vector<std::int32_t> sorted_degrees(const Structure& s) {
  std::vector<std::int32_t> d(s.num_nodes, 0);
  for (const auto& e : s.edges) {
    ++d[e.u];
    ++d[e.v];
  }
  std::sort(d.begin(), d.end());
  return d;
}

bool structure_connected(const Structure& s) {
  Graph g;
  g.num_nodes = s.num_nodes;
  g.edges = s.edges;
  return g.connected();
}

// Brute force over all node relabelings.
bool isomorphic(const Structure& a, const Structure& b) {
  if (a.num_nodes != b.num_nodes || a.edges.size() != b.edges.size()) return false;
  std::set<std::pair<int, int>> eb;
  for (const auto& e : b.edges) eb.insert({e.u, e.v});
  std::vector<int> perm(a.num_nodes);
  std::iota(perm.begin(), perm.end(), 0);
  do {
    bool all = true;
    for (const auto& e : a.edges) {
      int u = perm[e.u], v = perm[e.v];
      if (u > v) std::swap(u, v);
      if (!eb.count({u, v})) {
        all = false;
        break;
      }
    }
    if (all) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

// |observed - expected| within k binomial standard deviations.
bool within_sigma(double count, double n, double p, double k = 3.0) {
  const double sd = std::sqrt(n * p * (1.0 - p));
  return std::abs(count - n * p) <= k * std::max(sd, 1e-12);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("motif shapes") {
  const Structure cycle = build_motif(MotifKind::Cycle);
  const Structure house = build_motif(MotifKind::House);
  const Structure crane = build_motif(MotifKind::Crane);

  CHECK(cycle.num_nodes == 6);
  CHECK(cycle.edges.size() == 6);
  CHECK(sorted_degrees(cycle) == std::vector<std::int32_t>{2, 2, 2, 2, 2, 2});

  CHECK(house.num_nodes == 5);
  CHECK(house.edges == std::vector<Edge>{{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}});
  CHECK(sorted_degrees(house) == std::vector<std::int32_t>{2, 2, 2, 3, 3});

  CHECK(crane.num_nodes == 6);
  CHECK(crane.edges.size() == 6);
  CHECK(sorted_degrees(crane) == std::vector<std::int32_t>{1, 1, 2, 2, 3, 3});

  for (const auto* s : {&cycle, &house, &crane}) {
    CHECK(structure_connected(*s));
    for (const auto& e : s->edges) CHECK(e.u < e.v);
  }
  CHECK_FALSE(isomorphic(cycle, crane));
  CHECK_FALSE(isomorphic(cycle, house));
  CHECK_FALSE(isomorphic(house, crane));
  CHECK(sorted_degrees(crane) != sorted_degrees(cycle));
  CHECK(sorted_degrees(crane) != sorted_degrees(house));
  CHECK(isomorphic(crane, crane));
}

TEST_CASE("base edge counts") {
  Rng rng(1);
  const Structure ladder = build_base(BaseKind::Ladder, 5, rng);
  CHECK(ladder.num_nodes == 10);
  CHECK(ladder.edges.size() == 13);
  const Structure wheel = build_base(BaseKind::Wheel, 6, rng);
  CHECK(wheel.num_nodes == 7);
  CHECK(wheel.edges.size() == 12);
  const Structure tree = build_base(BaseKind::Tree, 10, rng);
  CHECK(tree.num_nodes == 10);
  CHECK(tree.edges.size() == 9);
}

TEST_CASE("property: bases are connected with the closed-form edge counts") {
  Rng rng(2);
  for (std::int32_t size = 3; size < 70; ++size) {
    const Structure tree = build_base(BaseKind::Tree, size, rng);
    CHECK(tree.edges.size() == static_cast<std::size_t>(size - 1));
    CHECK(structure_connected(tree));
    const auto deg = sorted_degrees(tree);
    CHECK(deg.back() <= 3);
    const Structure ladder = build_base(BaseKind::Ladder, size, rng);
    CHECK(ladder.edges.size() == static_cast<std::size_t>(3 * size - 2));
    CHECK(structure_connected(ladder));
    const Structure wheel = build_base(BaseKind::Wheel, size, rng);
    CHECK(wheel.edges.size() == static_cast<std::size_t>(2 * size));
    CHECK(structure_connected(wheel));
  }
}

TEST_CASE("house on a 20-node tree") {
  Rng rng(3);
  const Structure tree = build_base(BaseKind::Tree, 20, rng);
  const Graph g = attach_and_label(tree, build_motif(MotifKind::House), MotifKind::House, BaseKind::Tree, rng, 4);
  CHECK(g.num_nodes == 25);
  CHECK(g.edges.size() == 26);
  CHECK(std::count(g.edge_truth.begin(), g.edge_truth.end(), 1) == 6);
  CHECK(g.edge_truth.back() == 0);
  CHECK(g.label == 1);
  CHECK(g.x.rows() == 25);
  CHECK(g.x.cols() == 4);
  for (double v : g.x.values()) CHECK((v >= 0.0 && v < 1.0));
  CHECK(g.connected());
  validate(g);
}

TEST_CASE("label follows the motif regardless of base") {
  Rng rng(4);
  for (int s = 0; s < 3; ++s) {
    const auto base = build_base(static_cast<BaseKind>(s), 8, rng);
    const Graph g = attach_and_label(base, build_motif(MotifKind::Cycle), MotifKind::Cycle,
                                     static_cast<BaseKind>(s), rng, 4);
    CHECK(g.label == 0);
  }
}

TEST_CASE("base sampling frequencies under the biased formula") {
  for (double b : {1.0 / 3.0, 0.5, 0.9}) {
    for (int c = 0; c < 3; ++c) {
      Rng rng(100 + c);
      std::array<double, 3> count{};
      const int n = 9000;
      for (int i = 0; i < n; ++i) ++count[static_cast<int>(sample_base_kind(static_cast<MotifKind>(c), b, rng))];
      for (int s = 0; s < 3; ++s) {
        const double p = s == c ? b : (1.0 - b) / 2.0;
        CHECK(within_sigma(count[s], n, p));
      }
    }
  }
}

TEST_CASE("b -> 1 makes the base match the motif") {
  Rng rng(5);
  int match = 0;
  for (int i = 0; i < 5000; ++i) {
    const auto c = static_cast<MotifKind>(i % 3);
    match += static_cast<int>(sample_base_kind(c, 1.0, rng)) == static_cast<int>(c);
  }
  CHECK(match == 5000);
}

TEST_CASE("latent pairs: degenerate confounder values") {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    auto [c0, s0] = sample_latent_pair_given(0.0, rng);
    CHECK(s0 == BaseKind::Tree);
    CHECK(c0 == MotifKind::Crane);
    auto [c1, s1] = sample_latent_pair_given(1.0, rng);
    CHECK(s1 == BaseKind::Wheel);
    CHECK(c1 == MotifKind::Cycle);
  }
}

TEST_CASE("latent pairs are anticorrelated") {
  Rng rng(7);
  std::vector<double> s, c;
  for (int i = 0; i < 10000; ++i) {
    auto [ci, si] = sample_latent_pair(rng);
    c.push_back(static_cast<double>(ci));
    s.push_back(static_cast<double>(si));
  }
  CHECK(correlation(s, c) < 0.0);
}

TEST_CASE("independent split: base and label carry no mutual information") {
  GenConfig cfg;
  cfg.mode = DependencyMode::Independent;
  cfg.seed = 8;
  std::array<std::array<double, 3>, 3> joint{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Graph g = generate_graph(cfg, Split::Train, i, i);
    joint[g.label][*g.base] += 1.0;
  }
  std::array<double, 3> pc{}, ps{};
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 3; ++s) {
      pc[c] += joint[c][s] / n;
      ps[s] += joint[c][s] / n;
    }
  }
  double mi = 0.0;
  for (int c = 0; c < 3; ++c) {
    for (int s = 0; s < 3; ++s) {
      const double p = joint[c][s] / n;
      if (p > 0) mi += p * std::log(p / (pc[c] * ps[s]));
    }
  }
  CHECK(mi < 0.01);
}

TEST_CASE("default train split statistics") {
  GenConfig cfg;
  cfg.seed = 9;
  cfg.n_val = 50;
  cfg.n_test = 300;
  const auto d = generate_dataset(cfg);
  double nodes = 0;
  std::array<double, 3> motif{};
  for (const auto& g : d.train) {
    nodes += g.num_nodes;
    motif[g.label] += 1.0;
    CHECK(g.connected());
    const auto truth = std::count(g.edge_truth.begin(), g.edge_truth.end(), 1);
    CHECK(truth == static_cast<long>(build_motif(static_cast<MotifKind>(*g.motif)).edges.size()));
  }
  const double mean_nodes = nodes / static_cast<double>(d.train.size());
  CHECK(mean_nodes == doctest::Approx(25.0).epsilon(0.12));
  for (int c = 0; c < 3; ++c) CHECK(within_sigma(motif[c], static_cast<double>(d.train.size()), 1.0 / 3.0));

  double test_nodes = 0, test_motif_nodes = 0;
  for (const auto& g : d.test) {
    test_nodes += g.num_nodes;
    test_motif_nodes += static_cast<double>(build_motif(static_cast<MotifKind>(*g.motif)).num_nodes);
    CHECK(g.connected());
  }
  const double n_test = static_cast<double>(d.test.size());
  const double base_test = (test_nodes - test_motif_nodes) / n_test;
  const double base_train = mean_nodes - 17.0 / 3.0;
  CHECK(base_test / base_train == doctest::Approx(3.0).epsilon(0.05));
  CHECK(test_nodes / n_test > 3.0 * mean_nodes * 0.75);
}

TEST_CASE("validation and test splits are independent of the bias") {
  GenConfig cfg;
  cfg.bias = 1.0;
  cfg.n_train = 10;
  cfg.n_val = 3000;
  cfg.n_test = 10;
  cfg.seed = 10;
  const auto d = generate_dataset(cfg);
  double match = 0;
  for (const auto& g : d.val) match += *g.base == g.label;
  CHECK(within_sigma(match, 3000, 1.0 / 3.0));
  for (const auto& g : d.train) CHECK(*g.base == g.label);
}

TEST_CASE("ids are consecutive across splits and generation is deterministic") {
  GenConfig cfg;
  cfg.n_train = 40;
  cfg.n_val = 20;
  cfg.n_test = 20;
  cfg.seed = 11;
  const auto a = generate_dataset(cfg);
  const auto b = generate_dataset(cfg);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  CHECK(a.val.front().id == 40);
  CHECK(a.test.back().id == 79);
  cfg.seed = 12;
  CHECK_FALSE(generate_dataset(cfg).train == a.train);
}

TEST_CASE("per-graph seeding is independent of generation order") {
  GenConfig cfg;
  cfg.seed = 13;
  const Graph g = generate_graph(cfg, Split::Val, 7, 107);
  const Graph again = generate_graph(cfg, Split::Val, 7, 107);
  CHECK(g == again);
  CHECK(graph_seed(13, Split::Val, 7) != graph_seed(13, Split::Test, 7));
}

TEST_CASE("config checks") {
  GenConfig cfg;
  cfg.bias = 1.2;
  CHECK_THROWS_AS(cfg.check(), ContractError);
  cfg.bias = 0.5;
  cfg.test_base_scale = 0.5;
  CHECK_THROWS_AS(cfg.check(), ContractError);
  cfg.test_base_scale = 3.0;
  cfg.n_val = 0;
  CHECK_THROWS_AS(cfg.check(), ContractError);
}
