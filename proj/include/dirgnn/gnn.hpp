#pragma once

// Differentiable graph layers: weighted-sum message passing, mean pooling,
// two-layer classifier heads, and parameter checkpoints.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dirgnn/autodiff.hpp"

namespace dirgnn::gnn {

using ad::Index;
using ad::Tape;
using ad::Var;

// Indices into the owning ParamGroup.
struct ConvLayer {
  std::size_t w_self = 0, w_neigh = 0, bias = 0;
  std::size_t in = 0, out = 0;
};

struct Linear {
  std::size_t weight = 0, bias = 0;
  std::size_t in = 0, out = 0;
};

struct ClassifierHead {
  Linear hidden;
  Linear output;
  std::size_t num_classes() const { return output.out; }
};

enum class Activation : std::uint8_t { Relu, None };

// Entries uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng);

ConvLayer make_conv(ParamGroup& g, const std::string& prefix, std::size_t in, std::size_t out,
                    std::mt19937_64& rng);
Linear make_linear(ParamGroup& g, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng);
ClassifierHead make_head(ParamGroup& g, const std::string& prefix, std::size_t in,
                         std::size_t hidden, std::size_t classes, std::mt19937_64& rng);

// Directed edge list of a (sub)graph batch, plus optional per-edge weights
// (a column, one row per directed edge).
struct MessageGraph {
  std::vector<Index> src;
  std::vector<Index> dst;
  std::size_t num_nodes = 0;
};

// x'_i = act(W_self x_i + sum_{j->i} w_ji W_neigh x_j + b)
Var graph_conv(Tape& tape, ParamGroup& group, const ConvLayer& layer, Var x,
               const MessageGraph& graph, std::optional<Var> edge_weight,
               Activation act = Activation::Relu);

Var linear(Tape& tape, ParamGroup& group, const Linear& layer, Var x);

Var global_mean_pool(Tape& tape, Var x, std::vector<Index> graph_index, std::size_t num_graphs);

// Raw logits, one row per pooled graph.
Var classify(Tape& tape, ParamGroup& group, const ClassifierHead& head, Var h);

// Checkpoint directory: checkpoint.json plus one little-endian f64 blob per tensor.
struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string extra_json = "{}";  // caller-owned, stored verbatim under "config"
};

void save_checkpoint(const std::filesystem::path& dir, std::span<const ParamGroup* const> groups,
                     const CheckpointMeta& meta);
// Overwrites matching parameters in `groups`; throws ValidationError on
// missing tensors or shape mismatch.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, std::span<ParamGroup* const> groups);
std::string read_checkpoint_config(const std::filesystem::path& dir);

}  // namespace dirgnn::gnn
