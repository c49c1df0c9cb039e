#pragma once

// Shared oracles for the unit tests: central finite differences against the
// tape's analytic gradients, random tensors, and small fixture graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dirgnn/autodiff.hpp"
#include "dirgnn/graph.hpp"

namespace testing {

using dirgnn::Parameter;
using dirgnn::Tensor;
using dirgnn::ad::Tape;
using dirgnn::ad::Var;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

// Values bounded away from zero so ReLU kinks sit outside the FD stencil.
inline Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  Tensor t = random_tensor(rows, cols, rng);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] = t[i] < 0 ? -0.05 - t[i] : 0.05 + t[i];
  }
  return t;
}

// sum(v * R) for a fixed random R: turns any tensor output into a scalar
// whose gradient is O(1) in every entry.
inline Var random_projection(Tape& tape, Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor& val = tape.value(v);
  Tensor r = random_tensor(val.rows(), val.cols(), rng, 0.5, 1.5);
  Var s = tape.mean_all(tape.mul(v, tape.constant(std::move(r))));
  return tape.scalar_mul(s, static_cast<double>(val.size()));
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t entries = 0;
};

// Compares backward() against central differences with step h for every
// entry of every parameter. The loss builder is called on fresh tapes.
inline GradCheck finite_difference_check(std::vector<Parameter*> params,
                                         const std::function<Var(Tape&)>& build,
                                         double h = 1e-5) {
  for (auto* p : params) p->grad.fill(0.0);
  {
    Tape tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    Tape tape;
    return tape.value(build(tape)).item();
  };
  GradCheck out;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double x0 = p->value[i];
      p->value[i] = x0 + h;
      const double fp = eval();
      p->value[i] = x0 - h;
      const double fm = eval();
      p->value[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      out.max_rel_err = std::max(out.max_rel_err, std::abs(analytic - numeric) / denom);
      ++out.entries;
    }
  }
  return out;
}

// Path 0-1-2-...-(n-1) with features drawn from rng.
inline dirgnn::Graph path_graph(std::int32_t n, std::mt19937_64& rng, std::int64_t id = 0,
                                std::int32_t label = 0) {
  dirgnn::Graph g;
  g.id = id;
  g.num_nodes = n;
  for (std::int32_t i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  g.edge_truth.assign(g.edges.size(), 0);
  g.x = random_tensor(static_cast<std::size_t>(n), 4, rng, 0.0, 1.0);
  g.label = label;
  return g;
}

// Erdos-Renyi style graph with at least one edge.
inline dirgnn::Graph random_graph(std::int32_t n, double p, std::mt19937_64& rng,
                                  std::int64_t id = 0, std::int32_t label = 0) {
  dirgnn::Graph g;
  g.id = id;
  g.num_nodes = n;
  std::bernoulli_distribution coin(p);
  for (std::int32_t u = 0; u < n; ++u) {
    for (std::int32_t v = u + 1; v < n; ++v) {
      if (coin(rng)) g.edges.push_back({u, v});
    }
  }
  if (g.edges.empty()) g.edges.push_back({0, n - 1});
  g.edge_truth.assign(g.edges.size(), 0);
  g.x = random_tensor(static_cast<std::size_t>(n), 4, rng, 0.0, 1.0);
  g.label = label;
  return g;
}

}  // namespace testing
