#pragma once

// Spurious-Motif benchmark: a label-carrying motif attached to a base graph
// whose type is spuriously correlated with the label in the training split.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "dirgnn/graph.hpp"

namespace dirgnn::motif {

enum class MotifKind : std::int32_t { Cycle = 0, House = 1, Crane = 2 };
enum class BaseKind : std::int32_t { Tree = 0, Ladder = 1, Wheel = 2 };
enum class DependencyMode : std::uint8_t { Biased, Independent, Latent };

inline constexpr int kNumClasses = 3;

const char* motif_name(MotifKind k);
const char* base_name(BaseKind k);
const char* mode_name(DependencyMode m);
std::optional<DependencyMode> parse_mode(const std::string& s);

using Rng = std::mt19937_64;

struct Structure {
  std::int32_t num_nodes = 0;
  std::vector<Edge> edges;  // u < v
};

struct GenConfig {
  double bias = 0.9;
  std::int64_t n_train = 3000;
  std::int64_t n_val = 1000;
  std::int64_t n_test = 2000;
  // Target base node count before jitter; +/- base_jitter uniformly.
  std::int32_t base_size = 20;
  std::int32_t base_jitter = 4;
  double test_base_scale = 3.0;
  std::int32_t feature_dim = 4;
  DependencyMode mode = DependencyMode::Biased;
  std::uint64_t seed = 0;

  // Throws ContractError on out-of-range fields.
  void check() const;
};

Structure build_motif(MotifKind kind);
// Tree: size = node count (random binary tree); Ladder: size = rungs L
// (2L nodes); Wheel: size = ring length L (L + 1 nodes).
Structure build_base(BaseKind kind, std::int32_t size, Rng& rng);

// P(S = c) = b, P(S = s) = (1 - b) / 2 for each s != c.
BaseKind sample_base_kind(MotifKind c, double bias, Rng& rng);
// E ~ U[0,1]; S ~ Binomial(2, E); C ~ Binomial(2, 1 - E).
std::pair<MotifKind, BaseKind> sample_latent_pair(Rng& rng);
std::pair<MotifKind, BaseKind> sample_latent_pair_given(double e, Rng& rng);

// Base nodes come first, then motif nodes. One connecting edge joins a random
// base node to a random motif node and is not part of the rationale.
Graph attach_and_label(const Structure& base, const Structure& motif, MotifKind motif_kind,
                       BaseKind base_kind, Rng& rng, std::int32_t feature_dim);

// Seed for graph `graph_id` derived from the master seed and split.
std::uint64_t graph_seed(std::uint64_t master, Split split, std::int64_t index);

struct GeneratedDataset {
  Dataset train, val, test;
};

GeneratedDataset generate_dataset(const GenConfig& cfg);
// One graph of a split; generate_dataset is a loop over this.
Graph generate_graph(const GenConfig& cfg, Split split, std::int64_t index, std::int64_t id);

// Plain-text report with class x base contingency tables per split.
std::string stats_report(const GeneratedDataset& d);

}  // namespace dirgnn::motif
