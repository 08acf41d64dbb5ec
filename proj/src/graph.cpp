#include "soupkit/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <tuple>

namespace soupkit {

namespace {

CsrMat adjacency_from_neighbor_lists(std::vector<std::vector<std::int64_t>> nbrs,
                                     std::int64_t n) {
  std::vector<std::int64_t> rp{0}, ci;
  std::size_t total = 0;
  for (auto& row : nbrs) total += row.size();
  ci.reserve(total);
  for (std::int64_t r = 0; r < n; ++r) {
    std::sort(nbrs[r].begin(), nbrs[r].end());
    for (std::int64_t c : nbrs[r]) ci.push_back(c);
    rp.push_back(static_cast<std::int64_t>(ci.size()));
  }
  std::vector<float> vals(ci.size(), 1.0f);
  return CsrMat(n, n, std::move(rp), std::move(ci), std::move(vals));
}

bool has_edge(const CsrMat& adj, std::int64_t r, std::int64_t c) {
  const auto& rp = adj.row_ptr();
  const auto& ci = adj.col_idx();
  return std::binary_search(ci.begin() + rp[r], ci.begin() + rp[r + 1], c);
}

}  // namespace

void CsrGraph::validate() const {
  const std::int64_t n = adj.rows();
  require(adj.cols() == n, "graph: adjacency must be square");
  require(features.rows() == n, "graph: features row count mismatch");
  require(static_cast<std::int64_t>(labels.size()) == n,
          "graph: labels size mismatch");
  require(static_cast<std::int64_t>(train_mask.size()) == n &&
              static_cast<std::int64_t>(val_mask.size()) == n &&
              static_cast<std::int64_t>(test_mask.size()) == n,
          "graph: mask size mismatch");
  require(num_classes > 0, "graph: num_classes must be positive");
  for (std::int64_t i = 0; i < n; ++i) {
    require(labels[i] < num_classes, "graph: label out of range at node " +
                                         std::to_string(i));
    require(train_mask[i] + val_mask[i] + test_mask[i] <= 1,
            "graph: masks overlap at node " + std::to_string(i));
  }
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t k = adj.row_ptr()[r]; k < adj.row_ptr()[r + 1]; ++k) {
      const std::int64_t c = adj.col_idx()[k];
      require(c != r, "graph: self-loop at node " + std::to_string(r));
      require(adj.vals()[k] == 1.0f, "graph: adjacency values must be 1");
      require(has_edge(adj, c, r),
              "graph: adjacency not symmetric at edge " + std::to_string(r) + "->" +
                  std::to_string(c));
    }
  }
}

CsrGraph generate_sbm(const SbmConfig& cfg) {
  require(cfg.num_nodes >= 4, "generate_sbm: need at least 4 nodes");
  require(cfg.num_classes >= 2, "generate_sbm: need at least 2 classes");
  require(cfg.feat_dim >= 1, "generate_sbm: feat_dim must be positive");
  require(cfg.p_in >= 0.0 && cfg.p_in <= 1.0 && cfg.p_out >= 0.0 && cfg.p_out <= 1.0,
          "generate_sbm: edge probabilities must be in [0, 1]");
  require(cfg.train_frac > 0.0 && cfg.val_frac > 0.0 &&
              cfg.train_frac + cfg.val_frac < 1.0,
          "generate_sbm: split fractions must be positive and sum below 1");

  const std::int64_t n = cfg.num_nodes;
  CsrGraph g;
  g.num_classes = cfg.num_classes;

  g.labels.resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    g.labels[i] = static_cast<std::uint32_t>(
        i * static_cast<std::int64_t>(cfg.num_classes) / n);
  }

  {
    Rng rng(mix_seed(cfg.seed, 1));
    std::vector<std::vector<std::int64_t>> nbrs(n);
    for (std::int64_t r = 0; r < n; ++r) {
      for (std::int64_t c = r + 1; c < n; ++c) {
        const double p = g.labels[r] == g.labels[c] ? cfg.p_in : cfg.p_out;
        if (rng.uniform() < p) {
          nbrs[r].push_back(c);
          nbrs[c].push_back(r);
        }
      }
    }
    g.adj = adjacency_from_neighbor_lists(std::move(nbrs), n);
  }

  {
    Rng rng(mix_seed(cfg.seed, 2));
    DenseMat feats(n, cfg.feat_dim);
    for (std::int64_t i = 0; i < n; ++i) {
      for (std::int64_t f = 0; f < cfg.feat_dim; ++f) {
        feats.at(i, f) = static_cast<float>(cfg.noise * rng.normal());
      }
      feats.at(i, static_cast<std::int64_t>(g.labels[i]) % cfg.feat_dim) += 1.0f;
    }
    g.features = std::move(feats);
  }

  {
    Rng rng(mix_seed(cfg.seed, 3));
    std::vector<std::int64_t> order(n);
    for (std::int64_t i = 0; i < n; ++i) order[i] = i;
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::swap(order[i], order[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }
    const auto n_train = static_cast<std::int64_t>(cfg.train_frac * n);
    const auto n_val = static_cast<std::int64_t>(cfg.val_frac * n);
    g.train_mask.assign(n, 0);
    g.val_mask.assign(n, 0);
    g.test_mask.assign(n, 0);
    for (std::int64_t i = 0; i < n; ++i) {
      if (i < n_train) {
        g.train_mask[order[i]] = 1;
      } else if (i < n_train + n_val) {
        g.val_mask[order[i]] = 1;
      } else {
        g.test_mask[order[i]] = 1;
      }
    }
  }

  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Binary graph file: magic "GSKG", version, counts, then row_ptr / col_idx /
// features / labels / masks as flat little-endian sections.
// ---------------------------------------------------------------------------

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t bytes,
                 const char* section) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
  require(out.good(), std::string("save_graph: write failed in section ") + section);
}

void read_bytes(std::ifstream& in, void* p, std::size_t bytes, const char* section) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
  require(in.gcount() == static_cast<std::streamsize>(bytes),
          std::string("load_graph: truncated file in section ") + section);
}

}  // namespace

void save_graph(const CsrGraph& g, const std::string& path) {
  g.validate();
  std::ofstream out(path, std::ios::binary);
  require(out.is_open(), "save_graph: cannot open " + path);

  write_bytes(out, "GSKG", 4, "magic");
  const std::uint32_t version = 1;
  write_bytes(out, &version, 4, "version");
  const std::uint64_t n = static_cast<std::uint64_t>(g.num_nodes());
  const std::uint64_t e = static_cast<std::uint64_t>(g.num_directed_edges());
  const std::uint32_t fd = static_cast<std::uint32_t>(g.features.cols());
  write_bytes(out, &n, 8, "num_nodes");
  write_bytes(out, &e, 8, "num_edges");
  write_bytes(out, &fd, 4, "feat_dim");
  write_bytes(out, &g.num_classes, 4, "num_classes");

  std::vector<std::uint64_t> rp(g.adj.row_ptr().begin(), g.adj.row_ptr().end());
  write_bytes(out, rp.data(), rp.size() * 8, "row_ptr");
  std::vector<std::uint64_t> ci(g.adj.col_idx().begin(), g.adj.col_idx().end());
  write_bytes(out, ci.data(), ci.size() * 8, "col_idx");
  write_bytes(out, g.features.data(), static_cast<std::size_t>(g.features.size()) * 4,
              "features");
  write_bytes(out, g.labels.data(), g.labels.size() * 4, "labels");
  write_bytes(out, g.train_mask.data(), g.train_mask.size(), "train_mask");
  write_bytes(out, g.val_mask.data(), g.val_mask.size(), "val_mask");
  write_bytes(out, g.test_mask.data(), g.test_mask.size(), "test_mask");
}

CsrGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.is_open(), "load_graph: cannot open " + path);

  char magic[4];
  read_bytes(in, magic, 4, "magic");
  require(std::memcmp(magic, "GSKG", 4) == 0, "load_graph: bad magic");
  std::uint32_t version = 0;
  read_bytes(in, &version, 4, "version");
  require(version == 1, "load_graph: unsupported version " + std::to_string(version));

  std::uint64_t n = 0, e = 0;
  std::uint32_t fd = 0, classes = 0;
  read_bytes(in, &n, 8, "num_nodes");
  read_bytes(in, &e, 8, "num_edges");
  read_bytes(in, &fd, 4, "feat_dim");
  read_bytes(in, &classes, 4, "num_classes");
  require(n > 0 && n < (1ull << 32), "load_graph: implausible num_nodes");
  require(fd > 0, "load_graph: feat_dim must be positive");

  std::vector<std::uint64_t> rp_raw(n + 1);
  read_bytes(in, rp_raw.data(), rp_raw.size() * 8, "row_ptr");
  require(rp_raw.back() == e, "load_graph: row_ptr does not end at num_edges");
  std::vector<std::uint64_t> ci_raw(e);
  read_bytes(in, ci_raw.data(), ci_raw.size() * 8, "col_idx");

  CsrGraph g;
  g.num_classes = classes;
  {
    std::vector<std::int64_t> rp(rp_raw.begin(), rp_raw.end());
    std::vector<std::int64_t> ci(ci_raw.begin(), ci_raw.end());
    std::vector<float> vals(ci.size(), 1.0f);
    g.adj = CsrMat(static_cast<std::int64_t>(n), static_cast<std::int64_t>(n),
                   std::move(rp), std::move(ci), std::move(vals));
  }

  std::vector<float> feat(n * fd);
  read_bytes(in, feat.data(), feat.size() * 4, "features");
  g.features = DenseMat(static_cast<std::int64_t>(n), fd, std::move(feat));

  g.labels.resize(n);
  read_bytes(in, g.labels.data(), g.labels.size() * 4, "labels");
  g.train_mask.resize(n);
  g.val_mask.resize(n);
  g.test_mask.resize(n);
  read_bytes(in, g.train_mask.data(), n, "train_mask");
  read_bytes(in, g.val_mask.data(), n, "val_mask");
  read_bytes(in, g.test_mask.data(), n, "test_mask");

  char extra;
  in.read(&extra, 1);
  require(in.eof(), "load_graph: trailing bytes after test_mask");

  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

namespace {

constexpr std::int64_t kUnreached = std::numeric_limits<std::int64_t>::max();

// Multi-source BFS distance from the seed set.
std::vector<std::int64_t> bfs_distance(const CsrMat& adj,
                                       const std::vector<std::int64_t>& sources) {
  std::vector<std::int64_t> dist(adj.rows(), kUnreached);
  std::deque<std::int64_t> q;
  for (std::int64_t s : sources) {
    dist[s] = 0;
    q.push_back(s);
  }
  while (!q.empty()) {
    const std::int64_t u = q.front();
    q.pop_front();
    for (std::int64_t k = adj.row_ptr()[u]; k < adj.row_ptr()[u + 1]; ++k) {
      const std::int64_t v = adj.col_idx()[k];
      if (dist[v] == kUnreached) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace

Partitioning partition_graph(const CsrGraph& g, std::int64_t k, std::uint64_t seed) {
  const std::int64_t n = g.num_nodes();
  require(k >= 1, "partition_graph: need at least one part");
  require(k <= n, "partition_graph: more parts than nodes");

  // Spread seeds: first at random, the rest farthest-first (unreached nodes
  // count as infinitely far; ties broken toward the lowest id).
  std::vector<std::int64_t> seeds;
  {
    Rng rng(mix_seed(seed, 11));
    seeds.push_back(static_cast<std::int64_t>(rng.below(n)));
    while (static_cast<std::int64_t>(seeds.size()) < k) {
      const std::vector<std::int64_t> dist = bfs_distance(g.adj, seeds);
      std::int64_t best = -1;
      for (std::int64_t v = 0; v < n; ++v) {
        if (dist[v] == 0) continue;
        if (best == -1 || dist[v] > dist[best]) best = v;
      }
      require(best != -1, "partition_graph: no remaining candidate node");
      seeds.push_back(best);
    }
  }

  Partitioning parts;
  parts.num_parts = k;
  parts.part_of.assign(n, -1);
  parts.nodes_of.assign(k, {});

  std::vector<std::deque<std::int64_t>> frontier(k);
  std::vector<std::int64_t> val_count(k, 0), node_count(k, 0);
  std::int64_t next_unassigned = 0;

  auto assign = [&](std::int64_t v, std::int64_t p) {
    parts.part_of[v] = static_cast<std::int32_t>(p);
    parts.nodes_of[p].push_back(v);
    ++node_count[p];
    if (g.val_mask[v]) ++val_count[p];
    for (std::int64_t e = g.adj.row_ptr()[v]; e < g.adj.row_ptr()[v + 1]; ++e) {
      const std::int64_t u = g.adj.col_idx()[e];
      if (parts.part_of[u] < 0) frontier[p].push_back(u);
    }
  };

  for (std::int64_t p = 0; p < k; ++p) {
    if (parts.part_of[seeds[p]] < 0) assign(seeds[p], p);
  }

  for (std::int64_t assigned = 0; assigned < n;) {
    assigned = 0;
    for (std::int64_t c : node_count) assigned += c;
    if (assigned == n) break;

    // Grow the part that is lightest in validation nodes, then in total
    // nodes, then lowest id.
    std::int64_t p = 0;
    for (std::int64_t q = 1; q < k; ++q) {
      if (std::tuple(val_count[q], node_count[q], q) <
          std::tuple(val_count[p], node_count[p], p)) {
        p = q;
      }
    }

    std::int64_t v = -1;
    while (!frontier[p].empty()) {
      const std::int64_t cand = frontier[p].front();
      frontier[p].pop_front();
      if (parts.part_of[cand] < 0) {
        v = cand;
        break;
      }
    }
    if (v < 0) {
      while (next_unassigned < n && parts.part_of[next_unassigned] >= 0) {
        ++next_unassigned;
      }
      v = next_unassigned;
    }
    assign(v, p);
  }

  for (auto& list : parts.nodes_of) std::sort(list.begin(), list.end());
  return parts;
}

Subgraph assemble_subgraph(const CsrGraph& g, const Partitioning& parts,
                           const std::vector<std::int64_t>& selected) {
  require(!selected.empty(), "assemble_subgraph: no parts selected");
  for (std::size_t i = 0; i < selected.size(); ++i) {
    require(selected[i] >= 0 && selected[i] < parts.num_parts,
            "assemble_subgraph: part id out of range");
    if (i > 0) {
      require(selected[i - 1] < selected[i],
              "assemble_subgraph: parts must be sorted and distinct");
    }
  }

  Subgraph sub;
  for (std::int64_t p : selected) {
    sub.nodes.insert(sub.nodes.end(), parts.nodes_of[p].begin(),
                     parts.nodes_of[p].end());
  }
  std::sort(sub.nodes.begin(), sub.nodes.end());

  const std::int64_t m = static_cast<std::int64_t>(sub.nodes.size());
  std::vector<std::int64_t> new_id(g.num_nodes(), -1);
  for (std::int64_t i = 0; i < m; ++i) new_id[sub.nodes[i]] = i;

  std::vector<std::int64_t> rp{0}, ci;
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int64_t v = sub.nodes[i];
    for (std::int64_t k = g.adj.row_ptr()[v]; k < g.adj.row_ptr()[v + 1]; ++k) {
      const std::int64_t u = g.adj.col_idx()[k];
      if (new_id[u] >= 0) ci.push_back(new_id[u]);
    }
    rp.push_back(static_cast<std::int64_t>(ci.size()));
  }
  std::vector<float> vals(ci.size(), 1.0f);
  sub.graph.adj = CsrMat(m, m, std::move(rp), std::move(ci), std::move(vals));

  sub.graph.num_classes = g.num_classes;
  sub.graph.features = DenseMat(m, g.features.cols());
  sub.graph.labels.resize(m);
  sub.graph.train_mask.resize(m);
  sub.graph.val_mask.resize(m);
  sub.graph.test_mask.resize(m);
  for (std::int64_t i = 0; i < m; ++i) {
    const std::int64_t v = sub.nodes[i];
    for (std::int64_t f = 0; f < g.features.cols(); ++f) {
      sub.graph.features.at(i, f) = g.features.at(v, f);
    }
    sub.graph.labels[i] = g.labels[v];
    sub.graph.train_mask[i] = g.train_mask[v];
    sub.graph.val_mask[i] = g.val_mask[v];
    sub.graph.test_mask[i] = g.test_mask[v];
  }
  return sub;
}

std::vector<std::int64_t> choose_partitions(std::int64_t k, std::int64_t r,
                                            std::uint64_t seed, std::int64_t epoch) {
  require(r >= 1 && r <= k, "choose_partitions: need 1 <= r <= k");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::vector<std::int64_t> ids(k);
  for (std::int64_t i = 0; i < k; ++i) ids[i] = i;
  for (std::int64_t i = 0; i < r; ++i) {
    const std::int64_t j =
        i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(k - i)));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(r);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Propagation operators
// ---------------------------------------------------------------------------

CsrMat gcn_norm(const CsrMat& adj) {
  require(adj.rows() == adj.cols(), "gcn_norm: adjacency must be square");
  const std::int64_t n = adj.rows();
  std::vector<double> inv_sqrt(n);
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t deg = adj.row_ptr()[r + 1] - adj.row_ptr()[r];
    inv_sqrt[r] = 1.0 / std::sqrt(static_cast<double>(deg + 1));
  }
  std::vector<std::int64_t> rp{0}, ci;
  std::vector<float> vals;
  for (std::int64_t r = 0; r < n; ++r) {
    bool self_done = false;
    for (std::int64_t k = adj.row_ptr()[r]; k < adj.row_ptr()[r + 1]; ++k) {
      const std::int64_t c = adj.col_idx()[k];
      if (!self_done && c > r) {
        ci.push_back(r);
        vals.push_back(static_cast<float>(inv_sqrt[r] * inv_sqrt[r]));
        self_done = true;
      }
      ci.push_back(c);
      vals.push_back(static_cast<float>(inv_sqrt[r] * inv_sqrt[c]));
    }
    if (!self_done) {
      ci.push_back(r);
      vals.push_back(static_cast<float>(inv_sqrt[r] * inv_sqrt[r]));
    }
    rp.push_back(static_cast<std::int64_t>(ci.size()));
  }
  return CsrMat(n, n, std::move(rp), std::move(ci), std::move(vals));
}

CsrMat mean_norm(const CsrMat& adj) {
  require(adj.rows() == adj.cols(), "mean_norm: adjacency must be square");
  const std::int64_t n = adj.rows();
  std::vector<std::int64_t> rp = adj.row_ptr();
  std::vector<std::int64_t> ci = adj.col_idx();
  std::vector<float> vals(ci.size());
  for (std::int64_t r = 0; r < n; ++r) {
    const std::int64_t deg = rp[r + 1] - rp[r];
    for (std::int64_t k = rp[r]; k < rp[r + 1]; ++k) {
      vals[k] = static_cast<float>(1.0 / static_cast<double>(deg));
    }
  }
  return CsrMat(n, n, std::move(rp), std::move(ci), std::move(vals));
}

}  // namespace soupkit
