#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "soupkit/gnn.hpp"
#include "soupkit/graph.hpp"

namespace soupkit {

enum class Optimizer : std::uint8_t { kSgd = 0, kAdam = 1 };

Optimizer optimizer_from_string(const std::string& s);
std::string optimizer_name(Optimizer opt);

struct TrainConfig {
  std::int64_t epochs = 100;
  double lr = 0.01;
  double weight_decay = 0.0;
  Optimizer optimizer = Optimizer::kAdam;
  std::uint64_t seed_base = 0;
  /// With dropout == 0 ingredients would train identically; this adds a tiny
  /// seeded gradient perturbation (std 1e-4) so members still diverge.
  bool diversity_jitter = true;
};

struct IngredientSet {
  ModelSpec spec;
  ModelParams shared_init;
  std::vector<ModelParams> members;
  std::vector<double> val_accs;
  std::vector<double> train_seconds;
};

/// Full-batch training of one ingredient from the given initialization.
/// Dropout masks (and the jitter stream) are keyed to ingredient_seed, so
/// members sharing an init still diverge. Deterministic in all inputs.
std::pair<ModelParams, double> train_one(const CsrGraph& graph,
                                         const ModelSpec& spec,
                                         const ModelParams& init,
                                         const TrainConfig& config,
                                         std::uint64_t ingredient_seed);

/// Trains n ingredients from one shared initialization over a dynamic task
/// queue of `workers` threads. Results are keyed to ingredient index, so the
/// output is bit-identical for any worker count.
IngredientSet train_population(const CsrGraph& graph, const ModelSpec& spec,
                               const TrainConfig& config, std::int64_t n,
                               std::int64_t workers);

}  // namespace soupkit
