#include "dirgnn/gnn.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dirgnn::gnn {

using ojson = nlohmann::ordered_json;

Tensor fan_in_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

ConvLayer make_conv(ParamGroup& g, const std::string& prefix, std::size_t in, std::size_t out,
                    std::mt19937_64& rng) {
  ConvLayer l;
  l.in = in;
  l.out = out;
  l.w_self = g.add(prefix + ".w_self", fan_in_uniform(in, out, in, rng));
  l.w_neigh = g.add(prefix + ".w_neigh", fan_in_uniform(in, out, in, rng));
  l.bias = g.add(prefix + ".bias", fan_in_uniform(1, out, in, rng));
  return l;
}

Linear make_linear(ParamGroup& g, const std::string& prefix, std::size_t in, std::size_t out,
                   std::mt19937_64& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = g.add(prefix + ".weight", fan_in_uniform(in, out, in, rng));
  l.bias = g.add(prefix + ".bias", fan_in_uniform(1, out, in, rng));
  return l;
}

ClassifierHead make_head(ParamGroup& g, const std::string& prefix, std::size_t in,
                         std::size_t hidden, std::size_t classes, std::mt19937_64& rng) {
  ClassifierHead h;
  h.hidden = make_linear(g, prefix + ".hidden", in, hidden, rng);
  h.output = make_linear(g, prefix + ".output", hidden, classes, rng);
  return h;
}

Var graph_conv(Tape& tape, ParamGroup& group, const ConvLayer& layer, Var x,
               const MessageGraph& graph, std::optional<Var> edge_weight, Activation act) {
  const Tensor& xv = tape.value(x);
  if (xv.cols() != layer.in) {
    throw DimensionError("graph_conv: input width " + std::to_string(xv.cols()) +
                         " but layer expects " + std::to_string(layer.in));
  }
  if (xv.rows() != graph.num_nodes) {
    throw DimensionError("graph_conv: " + std::to_string(xv.rows()) + " feature rows for " +
                         std::to_string(graph.num_nodes) + " nodes");
  }
  if (graph.src.size() != graph.dst.size()) throw ContractError("graph_conv: src/dst length mismatch");
  if (edge_weight && tape.value(*edge_weight).rows() != graph.src.size()) {
    throw DimensionError("graph_conv: " + std::to_string(tape.value(*edge_weight).rows()) +
                         " edge weights for " + std::to_string(graph.src.size()) + " edges");
  }
  Var h = tape.matmul(x, tape.param(group.params[layer.w_self]));
  if (!graph.src.empty()) {
    Var neigh = tape.matmul(x, tape.param(group.params[layer.w_neigh]));
    Var msg = tape.row_gather(neigh, graph.src);
    if (edge_weight) msg = tape.mul(msg, *edge_weight);
    h = tape.add(h, tape.scatter_add(msg, graph.dst, graph.num_nodes));
  }
  h = tape.add(h, tape.param(group.params[layer.bias]));
  return act == Activation::Relu ? tape.relu(h) : h;
}

Var linear(Tape& tape, ParamGroup& group, const Linear& layer, Var x) {
  if (tape.value(x).cols() != layer.in) {
    throw ContractError("linear: input width " + std::to_string(tape.value(x).cols()) +
                        " but layer expects " + std::to_string(layer.in));
  }
  Var y = tape.matmul(x, tape.param(group.params[layer.weight]));
  return tape.add(y, tape.param(group.params[layer.bias]));
}

Var global_mean_pool(Tape& tape, Var x, std::vector<Index> graph_index, std::size_t num_graphs) {
  return tape.mean_rows_by_group(x, std::move(graph_index), num_graphs);
}

Var classify(Tape& tape, ParamGroup& group, const ClassifierHead& head, Var h) {
  Var hidden = tape.relu(linear(tape, group, head.hidden, h));
  return linear(tape, group, head.output, hidden);
}

namespace {

void write_blob(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (double v : t.values()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    out.write(bytes, 8);
  }
}

Tensor read_blob(const std::filesystem::path& path, std::size_t rows, std::size_t cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("missing tensor blob " + path.string());
  Tensor t(rows, cols);
  for (std::size_t k = 0; k < t.size(); ++k) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
      throw ValidationError("truncated tensor blob " + path.string());
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    t[k] = std::bit_cast<double>(bits);
  }
  return t;
}

ojson read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw ValidationError("missing checkpoint manifest in " + dir.string());
  try {
    return ojson::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad checkpoint manifest: ") + e.what());
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, std::span<const ParamGroup* const> groups,
                     const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  ojson m;
  m["format"] = "dirgnn-checkpoint-1";
  m["seed"] = meta.seed;
  m["config"] = ojson::parse(meta.extra_json);
  ojson tensors = ojson::array();
  for (const ParamGroup* g : groups) {
    for (const auto& p : g->params) {
      const std::string file = std::string(group_name(g->id)) + "." + p.name + ".f64";
      tensors.push_back({{"group", group_name(g->id)},
                         {"name", p.name},
                         {"shape", {p.value.rows(), p.value.cols()}},
                         {"file", file}});
      write_blob(dir / file, p.value);
    }
  }
  m["tensors"] = std::move(tensors);
  std::ofstream out(dir / "checkpoint.json");
  out << m.dump(2) << '\n';
}

std::string read_checkpoint_config(const std::filesystem::path& dir) {
  return read_manifest(dir).at("config").dump();
}

CheckpointMeta load_checkpoint(const std::filesystem::path& dir, std::span<ParamGroup* const> groups) {
  const ojson m = read_manifest(dir);
  CheckpointMeta meta;
  meta.seed = m.value("seed", std::uint64_t{0});
  meta.extra_json = m.at("config").dump();
  for (ParamGroup* g : groups) {
    for (auto& p : g->params) {
      bool found = false;
      for (const auto& t : m.at("tensors")) {
        if (t.at("group") != group_name(g->id) || t.at("name") != p.name) continue;
        const auto rows = t.at("shape")[0].get<std::size_t>();
        const auto cols = t.at("shape")[1].get<std::size_t>();
        if (rows != p.value.rows() || cols != p.value.cols()) {
          throw ValidationError("checkpoint tensor " + p.name + " has shape [" +
                                std::to_string(rows) + "x" + std::to_string(cols) +
                                "], model expects " + p.value.shape_str());
        }
        p.value = read_blob(dir / t.at("file").get<std::string>(), rows, cols);
        found = true;
        break;
      }
      if (!found) {
        throw ValidationError(std::string("checkpoint lacks tensor ") + group_name(g->id) + "." + p.name);
      }
    }
  }
  return meta;
}

}  // namespace dirgnn::gnn
