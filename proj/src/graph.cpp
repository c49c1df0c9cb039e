#include "dirgnn/graph.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "dirgnn/errors.hpp"

namespace dirgnn {

using ojson = nlohmann::ordered_json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  return std::nullopt;
}

std::vector<std::int32_t> Graph::degrees() const {
  std::vector<std::int32_t> deg(num_nodes, 0);
  for (const auto& e : edges) {
    ++deg[e.u];
    ++deg[e.v];
  }
  return deg;
}

bool Graph::connected() const {
  if (num_nodes <= 1) return true;
  std::vector<std::vector<std::int32_t>> adj(num_nodes);
  for (const auto& e : edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  std::vector<std::uint8_t> seen(num_nodes, 0);
  std::vector<std::int32_t> stack{0};
  seen[0] = 1;
  std::int32_t count = 1;
  while (!stack.empty()) {
    const auto u = stack.back();
    stack.pop_back();
    for (auto w : adj[u]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == num_nodes;
}

void validate(const Graph& g) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("graph " + std::to_string(g.id) + ": " + why);
  };
  if (g.num_nodes < 0) fail("negative node count");
  if (g.edge_truth.size() != g.edges.size()) fail("edge_truth length differs from edge count");
  if (g.x.rows() != static_cast<std::size_t>(g.num_nodes)) fail("feature rows differ from n");
  if (g.label < 0) fail("negative label");
  std::set<std::pair<std::int32_t, std::int32_t>> seen;
  for (const auto& e : g.edges) {
    if (!(0 <= e.u && e.u < e.v && e.v < g.num_nodes)) {
      fail("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
           ") violates 0 <= u < v < n");
    }
    if (!seen.insert({e.u, e.v}).second) {
      fail("duplicate edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
    }
  }
  for (auto t : g.edge_truth) {
    if (t > 1) fail("edge_truth entries must be 0 or 1");
  }
  if (!g.x.all_finite()) fail("non-finite node feature");
}

std::string to_jsonl_line(const Graph& g) {
  ojson j;
  j["id"] = g.id;
  j["n"] = g.num_nodes;
  ojson edges = ojson::array();
  for (const auto& e : g.edges) edges.push_back({e.u, e.v});
  j["edges"] = std::move(edges);
  ojson truth = ojson::array();
  for (auto t : g.edge_truth) truth.push_back(static_cast<int>(t));
  j["edge_truth"] = std::move(truth);
  ojson x = ojson::array();
  for (std::size_t r = 0; r < g.x.rows(); ++r) {
    ojson row = ojson::array();
    for (std::size_t c = 0; c < g.x.cols(); ++c) row.push_back(g.x(r, c));
    x.push_back(std::move(row));
  }
  j["x"] = std::move(x);
  j["y"] = g.label;
  j["base"] = g.base ? ojson(*g.base) : ojson(nullptr);
  j["motif"] = g.motif ? ojson(*g.motif) : ojson(nullptr);
  j["split"] = split_name(g.split);
  return j.dump();
}

void save_jsonl(std::span<const Graph> graphs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& g : graphs) {
    validate(g);
    out << to_jsonl_line(g) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Graph parse_jsonl_line(const std::string& line, std::size_t line_no) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), line_no);
  }
  Graph g;
  try {
    g.id = j.at("id").get<std::int64_t>();
    g.num_nodes = j.at("n").get<std::int32_t>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2) throw ParseError("edge must be a [u,v] pair", line_no);
      g.edges.push_back({e[0].get<std::int32_t>(), e[1].get<std::int32_t>()});
    }
    for (const auto& t : j.at("edge_truth")) g.edge_truth.push_back(t.get<std::uint8_t>());
    const auto& x = j.at("x");
    const std::size_t d = x.empty() ? 0 : x[0].size();
    std::vector<double> flat;
    flat.reserve(x.size() * d);
    for (const auto& row : x) {
      if (row.size() != d) throw ParseError("ragged feature matrix", line_no);
      for (const auto& v : row) flat.push_back(v.get<double>());
    }
    g.x = Tensor(x.size(), d, std::move(flat));
    g.label = j.at("y").get<std::int32_t>();
    if (!j.at("base").is_null()) g.base = j["base"].get<std::int32_t>();
    if (!j.at("motif").is_null()) g.motif = j["motif"].get<std::int32_t>();
    const auto split = parse_split(j.at("split").get<std::string>());
    if (!split) throw ParseError("unknown split '" + j["split"].get<std::string>() + "'", line_no);
    g.split = *split;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line_no);
  }
  validate(g);
  return g;
}

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(parse_jsonl_line(line, line_no));
  }
  return out;
}

Batch make_batch(std::span<const Graph* const> graphs) {
  if (graphs.empty()) throw ContractError("make_batch: empty graph list");
  const std::size_t d = graphs[0]->feature_dim();
  std::size_t total_nodes = 0, total_edges = 0;
  for (const Graph* g : graphs) {
    if (g->feature_dim() != d) {
      throw ContractError("make_batch: mixed feature dimensions " + std::to_string(d) + " and " +
                          std::to_string(g->feature_dim()));
    }
    total_nodes += g->num_nodes;
    total_edges += g->edges.size();
  }
  Batch b;
  b.x = Tensor(total_nodes, d);
  b.graph_index.reserve(total_nodes);
  b.src.reserve(2 * total_edges);
  b.dst.reserve(2 * total_edges);
  b.edges.reserve(total_edges);
  b.node_offset.push_back(0);
  b.edge_offset.push_back(0);
  std::int32_t node_off = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    std::copy_n(g.x.data(), g.x.size(), b.x.row(node_off));
    for (std::int32_t i = 0; i < g.num_nodes; ++i) b.graph_index.push_back(static_cast<std::int32_t>(gi));
    for (const auto& e : g.edges) {
      const Edge ge{e.u + node_off, e.v + node_off};
      b.edges.push_back(ge);
      b.src.push_back(ge.u);
      b.dst.push_back(ge.v);
      b.src.push_back(ge.v);
      b.dst.push_back(ge.u);
    }
    b.labels.push_back(g.label);
    node_off += g.num_nodes;
    b.node_offset.push_back(node_off);
    b.edge_offset.push_back(static_cast<std::int32_t>(b.edges.size()));
  }
  return b;
}

Batch make_batch(std::span<const Graph> graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_batch(std::span<const Graph* const>(ptrs));
}

}  // namespace dirgnn
