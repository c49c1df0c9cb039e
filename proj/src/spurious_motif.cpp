#include "dirgnn/spurious_motif.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dirgnn/errors.hpp"

namespace dirgnn::motif {

const char* motif_name(MotifKind k) {
  switch (k) {
    case MotifKind::Cycle: return "cycle";
    case MotifKind::House: return "house";
    case MotifKind::Crane: return "crane";
  }
  return "?";
}

const char* base_name(BaseKind k) {
  switch (k) {
    case BaseKind::Tree: return "tree";
    case BaseKind::Ladder: return "ladder";
    case BaseKind::Wheel: return "wheel";
  }
  return "?";
}

const char* mode_name(DependencyMode m) {
  switch (m) {
    case DependencyMode::Biased: return "biased";
    case DependencyMode::Independent: return "independent";
    case DependencyMode::Latent: return "latent";
  }
  return "?";
}

std::optional<DependencyMode> parse_mode(const std::string& s) {
  if (s == "biased") return DependencyMode::Biased;
  if (s == "independent") return DependencyMode::Independent;
  if (s == "latent") return DependencyMode::Latent;
  return std::nullopt;
}

void GenConfig::check() const {
  if (!(bias >= 0.0 && bias <= 1.0)) throw ContractError("bias must lie in [0,1]");
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) throw ContractError("split counts must be > 0");
  if (!(test_base_scale >= 1.0)) throw ContractError("test base scale must be >= 1");
  if (feature_dim <= 0) throw ContractError("feature dimension must be > 0");
  if (base_jitter < 0 || base_size - base_jitter < 4) {
    throw ContractError("base size minus jitter must be >= 4");
  }
}

namespace {

Edge make_edge(std::int32_t a, std::int32_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

std::int32_t uniform_int(Rng& rng, std::int32_t lo, std::int32_t hi) {
  return std::uniform_int_distribution<std::int32_t>(lo, hi)(rng);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Structure build_motif(MotifKind kind) {
  Structure s;
  switch (kind) {
    case MotifKind::Cycle:
      s.num_nodes = 6;
      for (std::int32_t i = 0; i < 6; ++i) s.edges.push_back(make_edge(i, (i + 1) % 6));
      break;
    case MotifKind::House:
      s.num_nodes = 5;
      s.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}};
      break;
    case MotifKind::Crane:
      s.num_nodes = 6;
      s.edges = {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}, {0, 5}};
      break;
  }
  return s;
}

Structure build_base(BaseKind kind, std::int32_t size, Rng& rng) {
  if (size < 2) throw ContractError("base size parameter must be >= 2");
  Structure s;
  switch (kind) {
    case BaseKind::Tree: {
      s.num_nodes = size;
      std::vector<std::int32_t> open{0};  // nodes with fewer than two children
      std::vector<std::int32_t> children(size, 0);
      for (std::int32_t i = 1; i < size; ++i) {
        const auto slot = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int32_t>(open.size()) - 1));
        const auto parent = open[slot];
        s.edges.push_back(make_edge(parent, i));
        if (++children[parent] == 2) {
          open[slot] = open.back();
          open.pop_back();
        }
        open.push_back(i);
      }
      break;
    }
    case BaseKind::Ladder: {
      const std::int32_t L = size;
      s.num_nodes = 2 * L;
      for (std::int32_t i = 0; i < L; ++i) {
        if (i + 1 < L) {
          s.edges.push_back(make_edge(i, i + 1));
          s.edges.push_back(make_edge(L + i, L + i + 1));
        }
        s.edges.push_back(make_edge(i, L + i));
      }
      break;
    }
    case BaseKind::Wheel: {
      const std::int32_t L = size;
      s.num_nodes = L + 1;
      for (std::int32_t i = 1; i <= L; ++i) s.edges.push_back(make_edge(0, i));
      for (std::int32_t i = 1; i < L; ++i) s.edges.push_back(make_edge(i, i + 1));
      if (L > 2) s.edges.push_back(make_edge(1, L));
      break;
    }
  }
  return s;
}

BaseKind sample_base_kind(MotifKind c, double bias, Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const auto ci = static_cast<std::int32_t>(c);
  if (u < bias) return static_cast<BaseKind>(ci);
  // Remaining mass (1 - b) split evenly over the two other kinds.
  const double rest = bias < 1.0 ? (u - bias) / (1.0 - bias) : 0.0;
  const std::int32_t offset = rest < 0.5 ? 1 : 2;
  return static_cast<BaseKind>((ci + offset) % kNumClasses);
}

std::pair<MotifKind, BaseKind> sample_latent_pair_given(double e, Rng& rng) {
  std::binomial_distribution<std::int32_t> s_dist(kNumClasses - 1, e);
  std::binomial_distribution<std::int32_t> c_dist(kNumClasses - 1, 1.0 - e);
  const auto s = s_dist(rng);
  const auto c = c_dist(rng);
  return {static_cast<MotifKind>(c), static_cast<BaseKind>(s)};
}

std::pair<MotifKind, BaseKind> sample_latent_pair(Rng& rng) {
  const double e = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return sample_latent_pair_given(e, rng);
}

Graph attach_and_label(const Structure& base, const Structure& motif, MotifKind motif_kind,
                       BaseKind base_kind, Rng& rng, std::int32_t feature_dim) {
  Graph g;
  const std::int32_t off = base.num_nodes;
  g.num_nodes = base.num_nodes + motif.num_nodes;
  for (const auto& e : base.edges) {
    g.edges.push_back(e);
    g.edge_truth.push_back(0);
  }
  for (const auto& e : motif.edges) {
    g.edges.push_back({e.u + off, e.v + off});
    g.edge_truth.push_back(1);
  }
  const auto bu = uniform_int(rng, 0, base.num_nodes - 1);
  const auto mv = uniform_int(rng, 0, motif.num_nodes - 1);
  g.edges.push_back(make_edge(bu, mv + off));
  g.edge_truth.push_back(0);

  g.x = Tensor(g.num_nodes, feature_dim);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < g.x.size(); ++i) g.x[i] = unit(rng);

  g.label = static_cast<std::int32_t>(motif_kind);
  g.motif = static_cast<std::int32_t>(motif_kind);
  g.base = static_cast<std::int32_t>(base_kind);
  return g;
}

std::uint64_t graph_seed(std::uint64_t master, Split split, std::int64_t index) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ (static_cast<std::uint64_t>(split) + 1));
  return splitmix64(h ^ static_cast<std::uint64_t>(index));
}

Graph generate_graph(const GenConfig& cfg, Split split, std::int64_t index, std::int64_t id) {
  Rng rng(graph_seed(cfg.seed, split, index));
  MotifKind c{};
  BaseKind s{};
  const DependencyMode mode = split == Split::Train ? cfg.mode : DependencyMode::Independent;
  switch (mode) {
    case DependencyMode::Biased:
      c = static_cast<MotifKind>(uniform_int(rng, 0, kNumClasses - 1));
      s = sample_base_kind(c, cfg.bias, rng);
      break;
    case DependencyMode::Independent:
      c = static_cast<MotifKind>(uniform_int(rng, 0, kNumClasses - 1));
      s = static_cast<BaseKind>(uniform_int(rng, 0, kNumClasses - 1));
      break;
    case DependencyMode::Latent:
      std::tie(c, s) = sample_latent_pair(rng);
      break;
  }
  double target = uniform_int(rng, cfg.base_size - cfg.base_jitter, cfg.base_size + cfg.base_jitter);
  if (split == Split::Test) target *= cfg.test_base_scale;
  const auto nodes = static_cast<std::int32_t>(std::lround(target));
  std::int32_t size = nodes;
  if (s == BaseKind::Ladder) size = std::max<std::int32_t>(2, static_cast<std::int32_t>(std::lround(nodes / 2.0)));
  if (s == BaseKind::Wheel) size = std::max<std::int32_t>(3, nodes - 1);

  const Structure base = build_base(s, size, rng);
  const Structure mot = build_motif(c);
  Graph g = attach_and_label(base, mot, c, s, rng, cfg.feature_dim);
  g.id = id;
  g.split = split;
  return g;
}

GeneratedDataset generate_dataset(const GenConfig& cfg) {
  cfg.check();
  GeneratedDataset d;
  std::int64_t id = 0;
  auto fill = [&](Dataset& out, Split split, std::int64_t n) {
    out.reserve(n);
    for (std::int64_t i = 0; i < n; ++i) out.push_back(generate_graph(cfg, split, i, id++));
  };
  fill(d.train, Split::Train, cfg.n_train);
  fill(d.val, Split::Val, cfg.n_val);
  fill(d.test, Split::Test, cfg.n_test);
  return d;
}

std::string stats_report(const GeneratedDataset& d) {
  std::ostringstream os;
  auto one = [&](const char* name, const Dataset& ds) {
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> table{};
    double nodes = 0, edges = 0;
    for (const auto& g : ds) {
      if (g.motif && g.base) ++table[*g.motif][*g.base];
      nodes += g.num_nodes;
      edges += static_cast<double>(g.edges.size());
    }
    const double n = ds.empty() ? 1.0 : static_cast<double>(ds.size());
    os << "[" << name << "] graphs=" << ds.size() << " avg_nodes=" << nodes / n
       << " avg_edges=" << edges / n << "\n";
    os << "  motif\\base";
    for (int s = 0; s < kNumClasses; ++s) os << '\t' << base_name(static_cast<BaseKind>(s));
    os << "\n";
    for (int c = 0; c < kNumClasses; ++c) {
      os << "  " << motif_name(static_cast<MotifKind>(c));
      for (int s = 0; s < kNumClasses; ++s) os << '\t' << table[c][s];
      os << "\n";
    }
  };
  one("train", d.train);
  one("val", d.val);
  one("test", d.test);
  return os.str();
}

}  // namespace dirgnn::motif
