#include "soupkit/ingredients.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <thread>

namespace soupkit {

Optimizer optimizer_from_string(const std::string& s) {
  if (s == "sgd") return Optimizer::kSgd;
  if (s == "adam") return Optimizer::kAdam;
  fail("unknown optimizer '" + s + "' (expected sgd or adam)");
}

std::string optimizer_name(Optimizer opt) {
  return opt == Optimizer::kSgd ? "sgd" : "adam";
}

namespace {

struct AdamState {
  // One f64 moment pair per parameter group, flattened.
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;
};

std::pair<ModelParams, double> train_one_impl(const CsrGraph& graph,
                                              const PropagationCache& cache,
                                              const ModelSpec& spec,
                                              const ModelParams& init,
                                              const TrainConfig& config,
                                              std::uint64_t ingredient_seed) {
  require(config.epochs >= 1, "train_one: epochs must be at least 1");
  require(config.lr >= 0.0, "train_one: negative learning rate");
  require(config.weight_decay >= 0.0, "train_one: negative weight decay");
  check_params_match(spec, init, "train_one");
  require(graph.features.cols() == spec.in_dim, "train_one: feature dim mismatch");
  require(static_cast<std::int64_t>(graph.num_classes) == spec.out_dim,
          "train_one: class count mismatch");

  ModelParams params = init;
  const std::int64_t ng = groups_per_layer(spec.arch);

  AdamState adam;
  if (config.optimizer == Optimizer::kAdam) {
    for (std::int64_t l = 0; l < spec.num_layers; ++l) {
      for (std::int64_t g = 0; g < ng; ++g) {
        adam.m.emplace_back(params.layers[l][g].size(), 0.0);
        adam.v.emplace_back(params.layers[l][g].size(), 0.0);
      }
    }
  }

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    try {
      GradTape tape;
      Var feats = tape.leaf(&graph.features, false);
      std::vector<std::vector<Var>> vars(spec.num_layers);
      for (std::int64_t l = 0; l < spec.num_layers; ++l) {
        for (const DenseMat& m : params.layers[l]) {
          vars[l].push_back(tape.leaf(&m, true));
        }
      }
      Var logits = soupkit::forward_tape(
          tape, spec, vars, cache, feats, true,
          mix_seed(ingredient_seed, static_cast<std::uint64_t>(epoch)));
      Var loss = tape.masked_cross_entropy(logits, &graph.labels, &graph.train_mask);
      tape.backward(loss);

      const bool jitter = config.diversity_jitter && spec.dropout == 0.0f;
      Rng jitter_rng(mix_seed(ingredient_seed, 0x6a69,
                              static_cast<std::uint64_t>(epoch)));

      std::size_t flat = 0;
      for (std::int64_t l = 0; l < spec.num_layers; ++l) {
        for (std::int64_t g = 0; g < ng; ++g, ++flat) {
          DenseMat& p = params.layers[l][g];
          const DenseMat& grad = tape.grad(vars[l][g]);
          for (std::int64_t i = 0; i < p.size(); ++i) {
            double gv = static_cast<double>(grad.data()[i]) +
                        config.weight_decay * static_cast<double>(p.data()[i]);
            if (jitter) gv += 1e-4 * jitter_rng.normal();
            double step;
            if (config.optimizer == Optimizer::kSgd) {
              step = config.lr * gv;
            } else {
              constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
              const std::int64_t t = adam.step + 1;
              double& m = adam.m[flat][i];
              double& v = adam.v[flat][i];
              m = b1 * m + (1.0 - b1) * gv;
              v = b2 * v + (1.0 - b2) * gv * gv;
              const double mhat = m / (1.0 - std::pow(b1, t));
              const double vhat = v / (1.0 - std::pow(b2, t));
              step = config.lr * mhat / (std::sqrt(vhat) + eps);
            }
            p.data()[i] = static_cast<float>(static_cast<double>(p.data()[i]) - step);
          }
        }
      }
      if (config.optimizer == Optimizer::kAdam) ++adam.step;
    } catch (const Error& e) {
      fail("train_one: diverged at epoch " + std::to_string(epoch) + ": " +
           e.what());
    }
  }

  const double val_acc =
      evaluate(spec, params, cache, graph, graph.val_mask).accuracy;
  return {std::move(params), val_acc};
}

}  // namespace

std::pair<ModelParams, double> train_one(const CsrGraph& graph,
                                         const ModelSpec& spec,
                                         const ModelParams& init,
                                         const TrainConfig& config,
                                         std::uint64_t ingredient_seed) {
  const PropagationCache cache = prepare(graph, spec.arch);
  return train_one_impl(graph, cache, spec, init, config, ingredient_seed);
}

IngredientSet train_population(const CsrGraph& graph, const ModelSpec& spec,
                               const TrainConfig& config, std::int64_t n,
                               std::int64_t workers) {
  require(n >= 1, "train_population: need at least one ingredient");
  require(workers >= 1, "train_population: need at least one worker");

  IngredientSet set;
  set.spec = spec;
  set.shared_init = init_params(spec, mix_seed(config.seed_base, 0x696e6974));
  set.members.resize(n);
  set.val_accs.assign(n, 0.0);
  set.train_seconds.assign(n, 0.0);

  const PropagationCache cache = prepare(graph, spec.arch);

  std::atomic<std::int64_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&]() {
    for (;;) {
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        const auto start = std::chrono::steady_clock::now();
        auto [params, acc] = train_one_impl(graph, cache, spec, set.shared_init,
                                            config, config.seed_base + i);
        const auto stop = std::chrono::steady_clock::now();
        set.members[i] = std::move(params);
        set.val_accs[i] = acc;
        set.train_seconds[i] =
            std::chrono::duration<double>(stop - start).count();
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const std::int64_t thread_count = std::min(workers, n);
  std::vector<std::thread> threads;
  for (std::int64_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();

  for (std::int64_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      fail("train_population: ingredient " + std::to_string(i) + ": " + e.what());
    }
  }
  return set;
}

}  // namespace soupkit
