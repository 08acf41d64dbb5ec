#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/graph.hpp"
#include "soupkit/tensor.hpp"

namespace soupkit {

enum class Arch : std::uint8_t { kGcn = 0, kSage = 1 };

Arch arch_from_string(const std::string& s);
std::string arch_name(Arch arch);

/// GCN layers carry {weight, bias}; SAGE layers carry {self-weight,
/// neighbor-weight, bias}.
std::int64_t groups_per_layer(Arch arch);

struct ModelSpec {
  Arch arch = Arch::kGcn;
  std::int64_t num_layers = 2;
  std::int64_t in_dim = 0;
  std::int64_t hidden_dim = 64;
  std::int64_t out_dim = 0;
  float dropout = 0.5f;

  std::int64_t layer_in(std::int64_t l) const {
    return l == 0 ? in_dim : hidden_dim;
  }
  std::int64_t layer_out(std::int64_t l) const {
    return l == num_layers - 1 ? out_dim : hidden_dim;
  }
  /// Shape of parameter group g of layer l (biases are 1 x out).
  std::pair<std::int64_t, std::int64_t> group_shape(std::int64_t l,
                                                    std::int64_t g) const;
  void validate() const;
  bool operator==(const ModelSpec& other) const = default;
};

/// layers[l][g]: parameter group g of layer l, in the fixed per-arch order.
struct ModelParams {
  std::vector<std::vector<DenseMat>> layers;
};

/// Glorot-normal weights (std = sqrt(2 / (fan_in + fan_out))), zero biases;
/// deterministic in seed with an independent stream per (layer, group).
ModelParams init_params(const ModelSpec& spec, std::uint64_t seed);

void check_params_match(const ModelSpec& spec, const ModelParams& params,
                        const char* who);

/// Propagation operator cached per (graph, arch): gcn_norm for GCN, mean_norm
/// for SAGE, always built from the degrees of the graph it is given.
struct PropagationCache {
  Arch arch = Arch::kGcn;
  CsrMat norm;
};

PropagationCache prepare(const CsrGraph& g, Arch arch);

/// Logits via the allocation-lean eval path: no dropout, intermediate
/// activations freed as soon as the next one exists.
DenseMat forward_eval(const ModelSpec& spec, const ModelParams& params,
                      const PropagationCache& cache, const DenseMat& features);

/// Taped forward over externally created parameter vars (one per layer/group,
/// same order as ModelParams). Training mode applies dropout with per-layer
/// streams derived from dropout_seed.
Var forward_tape(GradTape& tape, const ModelSpec& spec,
                 const std::vector<std::vector<Var>>& layer_groups,
                 const PropagationCache& cache, Var features, bool training,
                 std::uint64_t dropout_seed);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Masked mean cross-entropy and argmax accuracy (ties -> lowest class).
EvalResult loss_and_accuracy(const DenseMat& logits,
                             const std::vector<std::uint32_t>& labels,
                             const std::vector<std::uint8_t>& mask);

/// forward_eval + loss_and_accuracy in one call.
EvalResult evaluate(const ModelSpec& spec, const ModelParams& params,
                    const PropagationCache& cache, const CsrGraph& g,
                    const std::vector<std::uint8_t>& mask);

void save_params(const ModelSpec& spec, const ModelParams& params,
                 const std::string& path);
std::pair<ModelSpec, ModelParams> load_params(const std::string& path);

}  // namespace soupkit
