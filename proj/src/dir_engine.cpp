#include "dirgnn/dir_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace dirgnn::dir {

using ojson = nlohmann::ordered_json;

std::string ModelConfig::to_json() const {
  ojson j;
  j["in_dim"] = in_dim;
  j["hidden"] = hidden;
  j["enc_layers"] = enc_layers;
  j["gen_layers"] = gen_layers;
  j["mask_logit_bound"] = mask_logit_bound;
  j["head_hidden"] = head_hidden;
  j["num_classes"] = num_classes;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& s) {
  const ojson j = ojson::parse(s);
  ModelConfig c;
  c.in_dim = j.at("in_dim").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.enc_layers = j.at("enc_layers").get<std::size_t>();
  c.gen_layers = j.at("gen_layers").get<std::size_t>();
  c.mask_logit_bound = j.at("mask_logit_bound").get<double>();
  c.head_hidden = j.at("head_hidden").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  return c;
}

DirModel DirModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.enc_layers == 0 || cfg.gen_layers == 0) throw ContractError("model needs at least one conv layer");
  DirModel m;
  m.cfg = cfg;
  std::mt19937_64 rng(seed);
  std::size_t in = cfg.in_dim;
  for (std::size_t l = 0; l < cfg.gen_layers; ++l) {
    m.gen_convs.push_back(gnn::make_conv(m.generator, "conv" + std::to_string(l), in, cfg.hidden, rng));
    in = cfg.hidden;
  }
  m.gen_proj = gnn::make_linear(m.generator, "proj", cfg.hidden, cfg.hidden, rng);
  in = cfg.in_dim;
  for (std::size_t l = 0; l < cfg.enc_layers; ++l) {
    m.enc_convs.push_back(gnn::make_conv(m.encoder, "conv" + std::to_string(l), in, cfg.hidden, rng));
    in = cfg.hidden;
  }
  m.causal = gnn::make_head(m.causal_head, "head", cfg.hidden, cfg.head_hidden, cfg.num_classes, rng);
  m.spurious = gnn::make_head(m.spurious_head, "head", cfg.hidden, cfg.head_hidden, cfg.num_classes, rng);
  return m;
}

void DirModel::zero_grad() {
  for (auto* g : groups()) g->zero_grad();
}

Var node_embeddings(Tape& tape, DirModel& model, const Batch& batch) {
  gnn::MessageGraph mg{batch.src, batch.dst, batch.num_nodes()};
  Var h = tape.constant(batch.x);
  for (const auto& layer : model.gen_convs) {
    h = gnn::graph_conv(tape, model.generator, layer, h, mg, std::nullopt);
  }
  Var z = gnn::linear(tape, model.generator, model.gen_proj, h);
  const double bound = model.cfg.mask_logit_bound;
  if (bound <= 0.0) return z;
  // c * tanh(a) per entry, written as 2 sigmoid(2a) - 1; |z_u . z_v| < bound.
  const double c = std::sqrt(bound / static_cast<double>(model.cfg.hidden));
  Var t = tape.add(tape.scalar_mul(tape.sigmoid(tape.scalar_mul(z, 2.0)), 2.0),
                   tape.constant(Tensor::scalar(-1.0)));
  return tape.scalar_mul(t, c);
}

Var compute_edge_mask(Tape& tape, Var z, std::span<const Edge> edges) {
  std::vector<Index> us, vs;
  us.reserve(edges.size());
  vs.reserve(edges.size());
  for (const auto& e : edges) {
    us.push_back(e.u);
    vs.push_back(e.v);
  }
  Var zu = tape.row_gather(z, std::move(us));
  Var zv = tape.row_gather(z, std::move(vs));
  return tape.sigmoid(tape.row_sum(tape.mul(zu, zv)));
}

std::size_t causal_count(std::size_t num_edges, double r) {
  const auto k = static_cast<std::size_t>(std::llround(r * static_cast<double>(num_edges)));
  return std::min(num_edges, std::max<std::size_t>(1, k));
}

std::vector<std::int32_t> rank_edges(std::span<const double> mask) {
  std::vector<std::int32_t> order(mask.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::int32_t a, std::int32_t b) { return mask[a] > mask[b]; });
  return order;
}

namespace {

std::vector<std::int32_t> endpoint_nodes(std::span<const Edge> edges, std::span<const std::int32_t> sel) {
  std::vector<std::int32_t> nodes;
  nodes.reserve(2 * sel.size());
  for (auto e : sel) {
    nodes.push_back(edges[e].u);
    nodes.push_back(edges[e].v);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

}  // namespace

RationaleSplit split_rationale(std::span<const Edge> edges, std::span<const double> mask, double r) {
  if (!(r > 0.0 && r < 1.0)) throw ContractError("split_rationale: r must lie in (0,1)");
  if (edges.empty()) throw ContractError("split_rationale: graph has no edges");
  if (mask.size() != edges.size()) {
    throw DimensionError("split_rationale: " + std::to_string(mask.size()) + " mask values for " +
                         std::to_string(edges.size()) + " edges");
  }
  RationaleSplit s;
  s.mask.assign(mask.begin(), mask.end());
  const auto order = rank_edges(mask);
  const auto k = causal_count(edges.size(), r);
  s.causal_edges.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  s.spurious_edges.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
  for (auto e : s.causal_edges) s.causal_weights.push_back(mask[e]);
  for (auto e : s.spurious_edges) s.spurious_weights.push_back(1.0 - mask[e]);
  s.causal_nodes = endpoint_nodes(edges, s.causal_edges);
  s.spurious_nodes = endpoint_nodes(edges, s.spurious_edges);
  return s;
}

SubgraphBatch induced_subgraphs(const Batch& batch,
                                std::span<const std::vector<std::int32_t>> edges_per_graph) {
  if (edges_per_graph.size() != batch.num_graphs()) {
    throw ContractError("induced_subgraphs: edge selection for " + std::to_string(edges_per_graph.size()) +
                        " graphs, batch has " + std::to_string(batch.num_graphs()));
  }
  SubgraphBatch sb;
  sb.num_graphs = batch.num_graphs();
  std::vector<Index> local(batch.num_nodes(), -1);
  for (std::size_t g = 0; g < batch.num_graphs(); ++g) {
    const auto eoff = batch.edge_offset[g];
    std::vector<std::int32_t> nodes;
    for (auto e : edges_per_graph[g]) {
      if (e < 0 || eoff + e >= batch.edge_offset[g + 1]) {
        throw ContractError("induced_subgraphs: edge " + std::to_string(e) + " out of range");
      }
      nodes.push_back(batch.edges[eoff + e].u);
      nodes.push_back(batch.edges[eoff + e].v);
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    for (auto n : nodes) {
      local[n] = static_cast<Index>(sb.node_source.size());
      sb.node_source.push_back(n);
      sb.graph_index.push_back(static_cast<Index>(g));
    }
    for (auto e : edges_per_graph[g]) {
      const auto ge = eoff + e;
      const auto& edge = batch.edges[ge];
      sb.graph.src.push_back(local[edge.u]);
      sb.graph.dst.push_back(local[edge.v]);
      sb.graph.src.push_back(local[edge.v]);
      sb.graph.dst.push_back(local[edge.u]);
      sb.edge_source.push_back(ge);
      sb.edge_source.push_back(ge);
    }
  }
  sb.graph.num_nodes = sb.node_source.size();
  return sb;
}

SubgraphBatch full_subgraphs(const Batch& batch) {
  SubgraphBatch sb;
  sb.num_graphs = batch.num_graphs();
  sb.graph = gnn::MessageGraph{batch.src, batch.dst, batch.num_nodes()};
  sb.node_source.resize(batch.num_nodes());
  std::iota(sb.node_source.begin(), sb.node_source.end(), 0);
  sb.edge_source.resize(batch.num_directed_edges());
  for (std::size_t d = 0; d < sb.edge_source.size(); ++d) sb.edge_source[d] = static_cast<Index>(d / 2);
  sb.graph_index = batch.graph_index;
  return sb;
}

Var encode(Tape& tape, DirModel& model, const SubgraphBatch& sub, const Tensor& batch_x,
           std::optional<Var> edge_weight) {
  if (sub.graph.num_nodes == 0) throw ContractError("encode: subgraph batch has no nodes");
  Tensor x(sub.node_source.size(), batch_x.cols());
  for (std::size_t i = 0; i < sub.node_source.size(); ++i) {
    std::copy_n(batch_x.row(sub.node_source[i]), batch_x.cols(), x.row(i));
  }
  Var h = tape.constant(std::move(x));
  for (const auto& layer : model.enc_convs) {
    h = gnn::graph_conv(tape, model.encoder, layer, h, sub.graph, edge_weight);
  }
  return gnn::global_mean_pool(tape, h, sub.graph_index, sub.num_graphs);
}

Var encode_and_predict(Tape& tape, DirModel& model, const SubgraphBatch& sub,
                       const Tensor& batch_x, std::optional<Var> edge_weight,
                       const gnn::ClassifierHead& head, ParamGroup& head_group) {
  Var h = encode(tape, model, sub, batch_x, edge_weight);
  return gnn::classify(tape, head_group, head, h);
}

Var intervene_joint(Tape& tape, Var causal_logits, Var spurious_logits, std::size_t i) {
  const std::size_t b = tape.value(causal_logits).rows();
  if (i >= tape.value(spurious_logits).rows()) throw ContractError("intervene_joint: bank index out of range");
  Var s = tape.detach(tape.sigmoid(tape.row_gather(spurious_logits, {static_cast<Index>(i)})));
  Var rep = tape.row_gather(s, std::vector<Index>(b, 0));
  return tape.mul(causal_logits, rep);
}

Var intervene_all(Tape& tape, Var causal_logits, Var spurious_logits) {
  const std::size_t b = tape.value(causal_logits).rows();
  if (tape.value(spurious_logits).rows() != b || tape.value(spurious_logits).cols() != tape.value(causal_logits).cols()) {
    throw DimensionError("intervene_all: causal " + tape.value(causal_logits).shape_str() + " vs spurious " +
                         tape.value(spurious_logits).shape_str());
  }
  std::vector<Index> inst, bank;
  inst.reserve(b * b);
  bank.reserve(b * b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      inst.push_back(static_cast<Index>(j));
      bank.push_back(static_cast<Index>(i));
    }
  }
  Var s = tape.detach(tape.sigmoid(spurious_logits));
  return tape.mul(tape.row_gather(causal_logits, std::move(inst)), tape.row_gather(s, std::move(bank)));
}

DirRisk dir_risk(Tape& tape, Var joint, std::span<const std::int32_t> labels, double lambda) {
  if (lambda < 0.0) throw ContractError("dir_risk: lambda must be >= 0");
  const std::size_t b = labels.size();
  if (b == 0 || tape.value(joint).rows() != b * b) {
    throw DimensionError("dir_risk: joint " + tape.value(joint).shape_str() + " for " +
                         std::to_string(b) + " instances");
  }
  std::vector<Index> y, group;
  y.reserve(b * b);
  group.reserve(b * b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      y.push_back(labels[j]);
      group.push_back(static_cast<Index>(i));
    }
  }
  DirRisk r;
  Var ce = tape.softmax_cross_entropy(joint, std::move(y));
  r.risks = tape.mean_rows_by_group(ce, std::move(group), b);
  r.mean = tape.mean_all(r.risks);
  r.variance = tape.variance(r.risks);
  r.total = tape.add(r.mean, tape.scalar_mul(r.variance, lambda));
  return r;
}

Var shortcut_risk(Tape& tape, Var spurious_logits, std::span<const std::int32_t> labels) {
  std::vector<Index> y(labels.begin(), labels.end());
  return tape.mean_all(tape.softmax_cross_entropy(spurious_logits, std::move(y)));
}

Optimizers Optimizers::create(const DirModel& m, optim::Kind kind) {
  Optimizers o;
  const auto gs = m.groups();
  for (std::size_t k = 0; k < gs.size(); ++k) o.state[k] = optim::init_state(*gs[k], kind);
  return o;
}

namespace {

struct Forward {
  std::vector<RationaleSplit> splits;
  Var mask;
  Var causal_logits;
  std::optional<Var> spurious_logits;
};

// Generator, Top-r split and encoder passes shared by training and inference.
Forward forward_split(Tape& tape, DirModel& model, const Batch& batch, double r, bool with_spurious,
                      bool detach_spurious_input) {
  Forward f;
  Var z = node_embeddings(tape, model, batch);
  f.mask = compute_edge_mask(tape, z, batch.edges);
  const Tensor& mv = tape.value(f.mask);

  std::vector<std::vector<std::int32_t>> causal(batch.num_graphs()), spurious(batch.num_graphs());
  f.splits.reserve(batch.num_graphs());
  for (std::size_t g = 0; g < batch.num_graphs(); ++g) {
    const auto lo = static_cast<std::size_t>(batch.edge_offset[g]);
    const auto hi = static_cast<std::size_t>(batch.edge_offset[g + 1]);
    std::vector<Edge> local;
    local.reserve(hi - lo);
    const auto noff = batch.node_offset[g];
    for (std::size_t e = lo; e < hi; ++e) local.push_back({batch.edges[e].u - noff, batch.edges[e].v - noff});
    f.splits.push_back(split_rationale(local, std::span<const double>(mv.data() + lo, hi - lo), r));
    causal[g] = f.splits.back().causal_edges;
    spurious[g] = f.splits.back().spurious_edges;
  }

  const SubgraphBatch cs = induced_subgraphs(batch, causal);
  Var wc = tape.row_gather(f.mask, cs.edge_source);
  f.causal_logits = encode_and_predict(tape, model, cs, batch.x, wc, model.causal, model.causal_head);

  if (with_spurious) {
    const SubgraphBatch ss = induced_subgraphs(batch, spurious);
    Var inv = tape.add(tape.scalar_mul(f.mask, -1.0), tape.constant(Tensor::scalar(1.0)));
    Var ws = tape.row_gather(inv, ss.edge_source);
    Var hs = encode(tape, model, ss, batch.x, ws);
    if (detach_spurious_input) hs = tape.detach(hs);
    f.spurious_logits = gnn::classify(tape, model.spurious_head, model.spurious, hs);
  }
  return f;
}

bool tensors_equal(const ParamGroup& g, const std::vector<Tensor>& snapshot) {
  for (std::size_t k = 0; k < g.params.size(); ++k) {
    if (!(g.params[k].grad == snapshot[k])) return false;
  }
  return true;
}

}  // namespace

StepResult dir_step(DirModel& model, Optimizers& opt, const Batch& batch, const DirConfig& cfg) {
  model.zero_grad();
  Tape tape;
  Forward f = forward_split(tape, model, batch, cfg.r, true, true);
  Var ys = *f.spurious_logits;
  if (cfg.constant_spurious_logits) {
    const auto& c = *cfg.constant_spurious_logits;
    if (c.size() != model.cfg.num_classes) throw DimensionError("constant spurious logits width mismatch");
    Tensor t(batch.num_graphs(), c.size());
    for (std::size_t i = 0; i < t.rows(); ++i) std::copy(c.begin(), c.end(), t.row(i));
    ys = tape.constant(std::move(t));
  }

  Var joint = intervene_all(tape, f.causal_logits, ys);
  DirRisk risk = dir_risk(tape, joint, batch.labels, cfg.lambda);
  Var shortcut = shortcut_risk(tape, ys, batch.labels);

  StepResult out;
  tape.backward(shortcut);
  if (cfg.audit) {
    out.shortcut_isolated = model.generator.grad_is_zero() && model.encoder.grad_is_zero() &&
                            model.causal_head.grad_is_zero();
  }
  std::vector<Tensor> snapshot;
  if (cfg.audit) {
    for (const auto& p : model.spurious_head.params) snapshot.push_back(p.grad);
  }
  tape.backward(risk.total);
  if (cfg.audit) out.spurious_isolated = tensors_equal(model.spurious_head, snapshot);

  const auto gs = model.groups();
  for (std::size_t k = 0; k < gs.size(); ++k) optim::step(*gs[k], opt.state[k], cfg.lr);

  RiskReport& rep = out.report;
  rep.risks = tape.value(risk.risks).values();
  rep.mean_risk = tape.value(risk.mean).item();
  rep.variance = tape.value(risk.variance).item();
  rep.lambda = cfg.lambda;
  rep.r_dir = tape.value(risk.total).item();
  rep.r_shortcut = tape.value(shortcut).item();
  return out;
}

std::int32_t argmax(std::span<const double> v) {
  std::int32_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<std::int32_t>(i);
  }
  return best;
}

std::vector<Inference> infer_batch(DirModel& model, const Batch& batch, double r, bool with_spurious) {
  Tape tape;
  Forward f = forward_split(tape, model, batch, r, with_spurious, false);
  const Tensor& yc = tape.value(f.causal_logits);
  std::vector<Inference> out(batch.num_graphs());
  for (std::size_t g = 0; g < out.size(); ++g) {
    out[g].causal_logits.assign(yc.row(g), yc.row(g) + yc.cols());
    out[g].pred = argmax(out[g].causal_logits);
    out[g].split = std::move(f.splits[g]);
    if (with_spurious) {
      const Tensor& ys = tape.value(*f.spurious_logits);
      out[g].spurious_logits.assign(ys.row(g), ys.row(g) + ys.cols());
    }
  }
  return out;
}

Inference infer(DirModel& model, const Graph& g, double r) {
  const Graph* one[] = {&g};
  return std::move(infer_batch(model, make_batch(std::span<const Graph* const>(one)), r, false)[0]);
}

std::string rationale_json(const Graph& g, const Inference& inf) {
  std::vector<std::uint8_t> causal(g.edges.size(), 0);
  for (auto e : inf.split.causal_edges) causal[e] = 1;
  const bool synthetic = g.motif.has_value();
  ojson j;
  j["id"] = g.id;
  j["pred"] = inf.pred;
  ojson edges = ojson::array();
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    ojson ej;
    ej["u"] = g.edges[e].u;
    ej["v"] = g.edges[e].v;
    ej["mask"] = inf.split.mask[e];
    ej["causal"] = causal[e] != 0;
    ej["truth"] = synthetic ? ojson(g.edge_truth[e] != 0) : ojson(nullptr);
    edges.push_back(std::move(ej));
  }
  j["edges"] = std::move(edges);
  return j.dump();
}

std::string rationale_dot(const Graph& g, const Inference& inf) {
  std::vector<std::uint8_t> causal(g.edges.size(), 0);
  for (auto e : inf.split.causal_edges) causal[e] = 1;
  std::ostringstream os;
  os << "graph g" << g.id << " {\n";
  os << "  label=\"id=" << g.id << " pred=" << inf.pred << " y=" << g.label << "\";\n";
  for (std::int32_t n = 0; n < g.num_nodes; ++n) os << "  " << n << ";\n";
  char buf[32];
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%.3f", inf.split.mask[e]);
    os << "  " << g.edges[e].u << " -- " << g.edges[e].v << " [style=" << (causal[e] ? "bold" : "dashed")
       << ", label=\"" << buf << "\"";
    if (g.motif && g.edge_truth[e]) os << ", color=red";
    os << "];\n";
  }
  os << "}\n";
  return os.str();
}

}  // namespace dirgnn::dir
