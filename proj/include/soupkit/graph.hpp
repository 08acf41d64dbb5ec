#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/tensor.hpp"

namespace soupkit {

/// Undirected node-classification graph: symmetric binary adjacency (unit
/// values, no self-loops), node features, labels, and three disjoint split
/// masks.
struct CsrGraph {
  CsrMat adj;
  DenseMat features;
  std::vector<std::uint32_t> labels;
  std::uint32_t num_classes = 0;
  std::vector<std::uint8_t> train_mask;
  std::vector<std::uint8_t> val_mask;
  std::vector<std::uint8_t> test_mask;

  std::int64_t num_nodes() const { return adj.rows(); }
  std::int64_t num_directed_edges() const { return adj.nnz(); }

  /// Throws Error on structural problems (asymmetry, self-loops, size or
  /// range mismatches, overlapping masks).
  void validate() const;
};

struct SbmConfig {
  std::int64_t num_nodes = 1000;
  std::uint32_t num_classes = 5;
  std::int64_t feat_dim = 32;
  double p_in = 0.02;    // edge probability within a block
  double p_out = 0.002;  // edge probability across blocks
  double noise = 0.8;    // feature noise std around the class one-hot
  double train_frac = 0.5;
  double val_frac = 0.25;  // test gets the remainder
  std::uint64_t seed = 0;
};

/// Stochastic block model with contiguous equally-sized blocks; node i gets
/// class i * C / n. Features are the class one-hot (index class mod feat_dim)
/// plus gaussian noise.
CsrGraph generate_sbm(const SbmConfig& cfg);

void save_graph(const CsrGraph& g, const std::string& path);
CsrGraph load_graph(const std::string& path);

/// Disjoint node partition into k connected-ish regions grown by BFS from
/// spread-out seeds, balanced primarily on validation-node counts.
struct Partitioning {
  std::int64_t num_parts = 0;
  std::vector<std::int32_t> part_of;                // node -> part
  std::vector<std::vector<std::int64_t>> nodes_of;  // part -> ascending node ids
};

Partitioning partition_graph(const CsrGraph& g, std::int64_t k, std::uint64_t seed);

/// Induced subgraph over the union of the given parts. Kept nodes are sorted
/// by original id; edges survive iff both endpoints are kept.
struct Subgraph {
  CsrGraph graph;
  std::vector<std::int64_t> nodes;  // subgraph row -> original node id
};

Subgraph assemble_subgraph(const CsrGraph& g, const Partitioning& parts,
                           const std::vector<std::int64_t>& selected);

/// r distinct part ids out of [0, k), sorted ascending; deterministic in
/// (seed, epoch).
std::vector<std::int64_t> choose_partitions(std::int64_t k, std::int64_t r,
                                            std::uint64_t seed, std::int64_t epoch);

/// Symmetric-normalized adjacency with self-loops: entries
/// 1 / sqrt((1 + deg_r) * (1 + deg_c)) on A + I.
CsrMat gcn_norm(const CsrMat& adj);

/// Row-mean operator: 1 / deg_r on A; neighborless rows stay empty.
CsrMat mean_norm(const CsrMat& adj);

}  // namespace soupkit
