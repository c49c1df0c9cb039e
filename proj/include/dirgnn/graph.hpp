#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dirgnn/tensor.hpp"

namespace dirgnn {

enum class Split : std::uint8_t { Train, Val, Test };

const char* split_name(Split s);
std::optional<Split> parse_split(const std::string& s);

struct Edge {
  std::int32_t u = 0;
  std::int32_t v = 0;
  bool operator==(const Edge&) const = default;
};

// Undirected attributed graph. Each edge is stored once with u < v.
struct Graph {
  std::int64_t id = 0;
  std::int32_t num_nodes = 0;
  std::vector<Edge> edges;
  // edge_truth[e] marks membership of edges[e] in the oracle rationale.
  std::vector<std::uint8_t> edge_truth;
  Tensor x;  // num_nodes x d
  std::int32_t label = 0;
  std::optional<std::int32_t> base;
  std::optional<std::int32_t> motif;
  Split split = Split::Train;

  std::size_t num_edges() const { return edges.size(); }
  std::size_t feature_dim() const { return x.cols(); }
  std::vector<std::int32_t> degrees() const;
  bool connected() const;

  bool operator==(const Graph&) const = default;
};

using Dataset = std::vector<Graph>;

// Throws ValidationError naming the graph id on the first broken invariant.
void validate(const Graph& g);

void save_jsonl(std::span<const Graph> graphs, const std::filesystem::path& path);
std::string to_jsonl_line(const Graph& g);
Dataset load_jsonl(const std::filesystem::path& path);
Graph parse_jsonl_line(const std::string& line, std::size_t line_no);

// Disjoint union of graphs. Undirected edge e of the batch (global index)
// becomes directed edges 2e (u->v) and 2e+1 (v->u).
struct Batch {
  Tensor x;
  std::vector<std::int32_t> src;
  std::vector<std::int32_t> dst;
  std::vector<std::int32_t> graph_index;  // per node
  std::vector<std::int32_t> labels;       // per graph
  std::vector<std::int32_t> node_offset;  // per graph, size num_graphs + 1
  std::vector<std::int32_t> edge_offset;  // undirected, per graph, size num_graphs + 1
  std::vector<Edge> edges;                // undirected, global node ids

  std::size_t num_graphs() const { return labels.size(); }
  std::size_t num_nodes() const { return graph_index.size(); }
  std::size_t num_directed_edges() const { return src.size(); }
  std::size_t num_undirected_edges() const { return edges.size(); }
};

Batch make_batch(std::span<const Graph* const> graphs);
Batch make_batch(std::span<const Graph> graphs);

}  // namespace dirgnn
