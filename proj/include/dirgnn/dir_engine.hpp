#pragma once

// Invariant rationale training: an edge-mask rationale generator splits each
// graph into a causal part and its complement, the complements of a batch
// form the intervention bank, and the causal prediction is scored under every
// intervention. The objective is the mean interventional risk plus lambda
// times its (population) variance; a separate shortcut loss trains the
// spurious head alone.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dirgnn/gnn.hpp"
#include "dirgnn/graph.hpp"
#include "dirgnn/optim.hpp"

namespace dirgnn::dir {

using ad::Index;
using ad::Tape;
using ad::Var;

struct ModelConfig {
  std::size_t in_dim = 4;
  std::size_t hidden = 32;
  std::size_t enc_layers = 3;
  std::size_t gen_layers = 3;
  // Squashes the generator output so |z_u . z_v| stays below this; without
  // it the masks saturate and the edge ranking degenerates. 0 disables.
  double mask_logit_bound = 4.0;
  std::size_t head_hidden = 32;
  std::size_t num_classes = 3;

  std::string to_json() const;
  static ModelConfig from_json(const std::string& s);
};

struct DirModel {
  ModelConfig cfg;
  ParamGroup generator{GroupId::Generator};
  ParamGroup encoder{GroupId::Encoder};
  ParamGroup causal_head{GroupId::CausalHead};
  ParamGroup spurious_head{GroupId::SpuriousHead};

  std::vector<gnn::ConvLayer> gen_convs;
  gnn::Linear gen_proj;
  std::vector<gnn::ConvLayer> enc_convs;
  gnn::ClassifierHead causal;
  gnn::ClassifierHead spurious;

  static DirModel create(const ModelConfig& cfg, std::uint64_t seed);

  std::array<ParamGroup*, 4> groups() {
    return {&generator, &encoder, &causal_head, &spurious_head};
  }
  std::array<const ParamGroup*, 4> groups() const {
    return {&generator, &encoder, &causal_head, &spurious_head};
  }
  void zero_grad();
};

// --- rationale generator ---------------------------------------------------

// Z = GNN1(g) over a batch: ReLU conv layers, a linear projection, then a
// bounded squash (see ModelConfig::mask_logit_bound).
Var node_embeddings(Tape& tape, DirModel& model, const Batch& batch);
// mask_e = sigmoid(z_u . z_v), one row per undirected edge.
Var compute_edge_mask(Tape& tape, Var z, std::span<const Edge> edges);

struct RationaleSplit {
  std::vector<double> mask;               // per undirected edge
  std::vector<std::int32_t> causal_edges;  // in rank order
  std::vector<std::int32_t> spurious_edges;
  std::vector<double> causal_weights;     // mask
  std::vector<double> spurious_weights;   // 1 - mask
  std::vector<std::int32_t> causal_nodes;  // sorted
  std::vector<std::int32_t> spurious_nodes;
};

// K_c = max(1, round(r * |E|)).
std::size_t causal_count(std::size_t num_edges, double r);
// Edge indices by mask descending, ties broken by lower index.
std::vector<std::int32_t> rank_edges(std::span<const double> mask);
RationaleSplit split_rationale(std::span<const Edge> edges, std::span<const double> mask, double r);

// --- subgraph encoding -----------------------------------------------------

// Edge-induced subgraphs of every member of a batch, relabeled to a compact
// node range. Undirected edge e of the selection becomes directed 2e, 2e+1.
struct SubgraphBatch {
  gnn::MessageGraph graph;
  std::vector<Index> node_source;  // batch node id per subgraph node
  std::vector<Index> edge_source;  // batch undirected edge id per directed edge
  std::vector<Index> graph_index;  // per subgraph node
  std::size_t num_graphs = 0;
};

// edges_per_graph[g] lists local undirected edge indices of batch graph g.
SubgraphBatch induced_subgraphs(const Batch& batch,
                                std::span<const std::vector<std::int32_t>> edges_per_graph);
// The whole batch as a SubgraphBatch (every edge, every node).
SubgraphBatch full_subgraphs(const Batch& batch);

// Shared encoder: conv stack with optional edge weights, then mean pooling.
Var encode(Tape& tape, DirModel& model, const SubgraphBatch& sub, const Tensor& batch_x,
           std::optional<Var> edge_weight);
Var encode_and_predict(Tape& tape, DirModel& model, const SubgraphBatch& sub,
                       const Tensor& batch_x, std::optional<Var> edge_weight,
                       const gnn::ClassifierHead& head, ParamGroup& head_group);

// --- intervention and risks ------------------------------------------------

// joint_j = y_c_j * detach(sigmoid(y_s_i)) for every instance j.
Var intervene_joint(Tape& tape, Var causal_logits, Var spurious_logits, std::size_t i);
// All B interventions stacked, row i * B + j = intervention i on instance j.
Var intervene_all(Tape& tape, Var causal_logits, Var spurious_logits);

struct RiskReport {
  std::vector<double> risks;
  double mean_risk = 0.0;
  double variance = 0.0;
  double lambda = 0.0;
  double r_dir = 0.0;
  double r_shortcut = 0.0;
};

struct DirRisk {
  Var risks;     // B x 1
  Var mean;      // 1 x 1
  Var variance;  // 1 x 1
  Var total;     // mean + lambda * variance
};

// joint: B*B x Q from intervene_all; labels: B instance labels.
DirRisk dir_risk(Tape& tape, Var joint, std::span<const std::int32_t> labels, double lambda);
// Mean CE of each instance's spurious logits against its own label.
Var shortcut_risk(Tape& tape, Var spurious_logits, std::span<const std::int32_t> labels);

// --- training step ---------------------------------------------------------

struct DirConfig {
  double r = 0.25;
  double lambda = 1e-2;
  double lr = 1e-3;
  // When set, the spurious branch outputs these logits for every instance.
  std::optional<std::vector<double>> constant_spurious_logits;
  // Recompute routing checks every step (cheap; on by default).
  bool audit = true;
};

struct Optimizers {
  std::array<optim::State, 4> state;
  static Optimizers create(const DirModel& m, optim::Kind kind);
};

struct StepResult {
  RiskReport report;
  // backward(R_S) left generator, encoder and causal head at exactly zero.
  bool shortcut_isolated = true;
  // backward(R_DIR) added exactly zero to the spurious head.
  bool spurious_isolated = true;
};

StepResult dir_step(DirModel& model, Optimizers& opt, const Batch& batch, const DirConfig& cfg);

// --- inference -------------------------------------------------------------

struct Inference {
  std::int32_t pred = 0;
  RationaleSplit split;
  std::vector<double> causal_logits;
  std::vector<double> spurious_logits;  // empty unless requested
};

// Lowest index wins ties.
std::int32_t argmax(std::span<const double> v);

std::vector<Inference> infer_batch(DirModel& model, const Batch& batch, double r,
                                   bool with_spurious);
Inference infer(DirModel& model, const Graph& g, double r);

// Rationale export: JSON object and DOT digraph text.
std::string rationale_json(const Graph& g, const Inference& inf);
std::string rationale_dot(const Graph& g, const Inference& inf);

}  // namespace dirgnn::dir
