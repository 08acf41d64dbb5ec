#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/gnn.hpp"
#include "soupkit/graph.hpp"

namespace soupkit {

/// Raw N x L interpolation parameters (ingredient i, layer l). With simplex
/// on (default), effective ratios are a per-layer softmax across ingredients,
/// so each layer mixes on the open simplex. The raw-sum variant exists for
/// ablation only.
struct AlphaMatrix {
  DenseMat raw;
  bool simplex = true;

  DenseMat effective() const;
};

/// Glorot-normal raw alphas over the N x L grid (fan_in = N, fan_out = L).
AlphaMatrix init_alphas(std::int64_t n, std::int64_t layers, std::uint64_t seed,
                        bool simplex);

enum class SoupMethod : std::uint8_t {
  kUniform = 0,
  kGreedy = 1,
  kGis = 2,
  kLs = 3,
  kPls = 4,
};

SoupMethod method_from_string(const std::string& s);
std::string method_name(SoupMethod m);

/// Machine-independent work accounting for one soup run. forward_passes /
/// backward_passes count the algorithm's core loop (member scoring and
/// tentative evaluations for greedy/GIS, training passes for LS/PLS);
/// scoring_forwards counts PLS's periodic full-validation snapshot scoring,
/// which is outside the core-loop complexity. The final report evaluation of
/// the returned soup is never counted. peak_tracked_bytes is the high-water
/// mark of tracked allocations above the level at soup entry, i.e. the
/// memory the procedure itself adds on top of the graph and the members.
struct PassCounters {
  std::int64_t forward_passes = 0;
  std::int64_t backward_passes = 0;
  std::vector<std::int64_t> nodes_touched_per_pass;
  std::int64_t peak_tracked_bytes = 0;
  std::int64_t scoring_forwards = 0;

  double mean_nodes_per_pass() const;
};

struct TraceEntry {
  std::int64_t step = 0;    // ingredient index (greedy/GIS) or epoch (LS/PLS)
  double val_acc = 0.0;     // validation metric at this step
  bool accepted = false;    // greedy/GIS acceptance
  double ratio = 0.0;       // GIS interpolation ratio
  double loss = 0.0;        // LS/PLS training loss
  double lr = 0.0;          // LS/PLS scheduled learning rate
  std::int64_t nodes = 0;   // PLS subgraph size
};

struct SoupReport {
  SoupMethod method = SoupMethod::kUniform;
  ModelSpec spec;
  ModelParams result;
  double val_acc = 0.0;
  double test_acc = 0.0;
  double wall_seconds = 0.0;
  PassCounters counters;
  std::vector<TraceEntry> trace;
};

struct LSConfig {
  std::int64_t epochs = 200;
  /// Ratio gradients are tiny when members sit close together, so the alpha
  /// step is orders of magnitude above a typical weight learning rate.
  double base_lr = 5.0;
  double weight_decay = 0.0;
  std::int64_t t0 = 50;  // cosine warm-restart period
  std::uint64_t alpha_seed = 0;
  bool simplex = true;
  /// Fraction of validation nodes reserved for snapshot scoring instead of
  /// alpha training (0 = train and score on the full validation set).
  double val_holdout = 0.0;
};

struct PLSConfig : LSConfig {
  std::int64_t k = 32;  // partition count
  std::int64_t r = 8;   // partitions per epoch
  /// Full-validation snapshot scoring cadence; the final epoch is always
  /// scored.
  std::int64_t score_interval = 10;
};

/// Eager soup construction: per layer l, every parameter group is
/// Sum_i eff(i, l) * member_i's group. Bit-identical to the taped path.
ModelParams build_soup(const ModelSpec& spec,
                       const std::vector<ModelParams>& members,
                       const AlphaMatrix& alphas);

/// Arithmetic mean of every aligned group, f64 accumulation in member order.
ModelParams uniform_mean(const ModelSpec& spec,
                         const std::vector<ModelParams>& members);

SoupReport uniform_soup(const ModelSpec& spec,
                        const std::vector<ModelParams>& members,
                        const CsrGraph& graph);

SoupReport greedy_soup(const ModelSpec& spec,
                       const std::vector<ModelParams>& members,
                       const CsrGraph& graph);

SoupReport gis_soup(const ModelSpec& spec, const std::vector<ModelParams>& members,
                    const CsrGraph& graph, std::int64_t granularity);

SoupReport learned_soup(const ModelSpec& spec,
                        const std::vector<ModelParams>& members,
                        const CsrGraph& graph, const LSConfig& cfg);

SoupReport pls_soup(const ModelSpec& spec, const std::vector<ModelParams>& members,
                    const CsrGraph& graph, const Partitioning& parts,
                    const PLSConfig& cfg);

}  // namespace soupkit
