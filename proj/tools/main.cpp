#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "soupkit/bench.hpp"
#include "soupkit/common.hpp"
#include "soupkit/gnn.hpp"
#include "soupkit/graph.hpp"
#include "soupkit/ingredients.hpp"
#include "soupkit/soup.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace soupkit;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  require(f.good(), "cannot write " + path);
  f << text;
}

std::string ingredient_path(const std::string& dir, std::int64_t i) {
  char name[48];
  std::snprintf(name, sizeof(name), "/ingredient_%03lld.gskp",
                static_cast<long long>(i));
  return dir + name;
}

/// Loads the members written by `train`, validating that they agree on one
/// model spec.
std::pair<ModelSpec, std::vector<ModelParams>> load_ingredients(
    const std::string& dir) {
  const json manifest = json::parse(slurp(dir + "/manifest.json"));
  const std::int64_t count = manifest.at("count").get<std::int64_t>();
  require(count >= 1, "manifest: ingredient count must be positive");
  ModelSpec spec;
  std::vector<ModelParams> members;
  for (std::int64_t i = 0; i < count; ++i) {
    auto [s, p] = load_params(ingredient_path(dir, i));
    if (i == 0)
      spec = s;
    else
      require(s == spec, "ingredient " + std::to_string(i) +
                             " disagrees with the manifest model spec");
    members.push_back(std::move(p));
  }
  return {spec, std::move(members)};
}

json counters_json(const PassCounters& c) {
  return {{"forward_passes", c.forward_passes},
          {"backward_passes", c.backward_passes},
          {"scoring_forwards", c.scoring_forwards},
          {"peak_tracked_bytes", c.peak_tracked_bytes},
          {"mean_nodes_per_pass", c.mean_nodes_per_pass()},
          {"nodes_touched_per_pass", c.nodes_touched_per_pass}};
}

json trace_json(const std::vector<TraceEntry>& trace) {
  json out = json::array();
  for (const TraceEntry& e : trace) {
    out.push_back({{"step", e.step},
                   {"val_acc", e.val_acc},
                   {"accepted", e.accepted},
                   {"ratio", e.ratio},
                   {"loss", e.loss},
                   {"lr", e.lr},
                   {"nodes", e.nodes}});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model souping for small graph neural networks"};
  app.require_subcommand(1);
  int rc = 0;

  // ---- gen-graph ----------------------------------------------------------
  SbmConfig sbm;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-graph", "generate a block-model graph file");
  gen->add_option("--nodes", sbm.num_nodes, "node count");
  gen->add_option("--classes", sbm.num_classes, "class/block count");
  gen->add_option("--feat-dim", sbm.feat_dim, "feature dimension");
  gen->add_option("--p-in", sbm.p_in, "within-block edge probability");
  gen->add_option("--p-out", sbm.p_out, "cross-block edge probability");
  gen->add_option("--noise", sbm.noise, "feature noise std");
  gen->add_option("--train-frac", sbm.train_frac, "train split fraction");
  gen->add_option("--val-frac", sbm.val_frac, "validation split fraction");
  gen->add_option("--seed", sbm.seed, "generator seed");
  gen->add_option("--out", gen_out, "output .gskg path")->required();
  gen->callback([&] {
    CsrGraph g = generate_sbm(sbm);
    save_graph(g, gen_out);
    std::printf("wrote %s: %lld nodes, %lld edges, %u classes\n", gen_out.c_str(),
                static_cast<long long>(g.num_nodes()),
                static_cast<long long>(g.num_directed_edges() / 2), g.num_classes);
  });

  // ---- train --------------------------------------------------------------
  std::string tr_graph, tr_arch = "gcn", tr_opt = "adam", tr_out;
  std::int64_t tr_layers = 2, tr_hidden = 64, tr_n = 10, tr_workers = 4;
  float tr_dropout = 0.5f;
  TrainConfig tr_cfg;
  std::uint64_t tr_seed = 1;
  bool tr_no_jitter = false;
  auto* train = app.add_subcommand("train", "train an ingredient population");
  train->add_option("--graph", tr_graph, "input .gskg graph")->required();
  train->add_option("--arch", tr_arch, "gcn or sage");
  train->add_option("--layers", tr_layers, "layer count");
  train->add_option("--hidden", tr_hidden, "hidden dimension");
  train->add_option("--dropout", tr_dropout, "dropout probability");
  train->add_option("--epochs", tr_cfg.epochs, "training epochs");
  train->add_option("--lr", tr_cfg.lr, "learning rate");
  train->add_option("--wd", tr_cfg.weight_decay, "weight decay");
  train->add_option("--opt", tr_opt, "sgd or adam");
  train->add_option("--n", tr_n, "ingredient count");
  train->add_option("--workers", tr_workers, "worker threads");
  train->add_option("--seed", tr_seed, "population seed");
  train->add_flag("--no-jitter", tr_no_jitter,
                  "disable the dropout-free diversity jitter");
  train->add_option("--out", tr_out, "output directory")->required();
  train->callback([&] {
    CsrGraph g = load_graph(tr_graph);
    ModelSpec spec;
    spec.arch = arch_from_string(tr_arch);
    spec.num_layers = tr_layers;
    spec.in_dim = g.features.cols();
    spec.hidden_dim = tr_hidden;
    spec.out_dim = g.num_classes;
    spec.dropout = tr_dropout;
    spec.validate();
    tr_cfg.optimizer = optimizer_from_string(tr_opt);
    tr_cfg.seed_base = tr_seed;
    tr_cfg.diversity_jitter = !tr_no_jitter;
    IngredientSet set = train_population(g, spec, tr_cfg, tr_n, tr_workers);

    fs::create_directories(tr_out);
    for (std::int64_t i = 0; i < tr_n; ++i)
      save_params(spec, set.members[i], ingredient_path(tr_out, i));
    json manifest = {{"count", tr_n},
                     {"graph", tr_graph},
                     {"seed", tr_seed},
                     {"arch", arch_name(spec.arch)},
                     {"layers", spec.num_layers},
                     {"hidden", spec.hidden_dim},
                     {"dropout", spec.dropout},
                     {"epochs", tr_cfg.epochs},
                     {"lr", tr_cfg.lr},
                     {"weight_decay", tr_cfg.weight_decay},
                     {"optimizer", optimizer_name(tr_cfg.optimizer)},
                     {"diversity_jitter", tr_cfg.diversity_jitter},
                     {"workers", tr_workers},
                     {"val_accs", set.val_accs},
                     {"train_seconds", set.train_seconds}};
    spill(tr_out + "/manifest.json", manifest.dump(2) + "\n");
    double mean_acc = 0.0;
    for (double a : set.val_accs) mean_acc += a;
    mean_acc /= double(tr_n);
    std::printf("trained %lld ingredients into %s (mean val acc %.4f)\n",
                static_cast<long long>(tr_n), tr_out.c_str(), mean_acc);
  });

  // ---- soup ---------------------------------------------------------------
  std::string sp_method, sp_dir, sp_graph, sp_out;
  std::int64_t sp_granularity = 20;
  LSConfig sp_ls;
  std::int64_t sp_parts = 32, sp_budget = 8, sp_interval = 10;
  bool sp_no_simplex = false;
  std::uint64_t sp_seed = 0;
  auto* soup = app.add_subcommand("soup", "combine trained ingredients");
  soup->add_option("--method", sp_method, "uniform|greedy|gis|ls|pls")->required();
  soup->add_option("--ingredients", sp_dir, "directory written by train")->required();
  soup->add_option("--graph", sp_graph, "input .gskg graph")->required();
  soup->add_option("--granularity", sp_granularity, "gis interpolation steps");
  soup->add_option("--epochs", sp_ls.epochs, "alpha training epochs");
  soup->add_option("--lr", sp_ls.base_lr, "alpha learning rate");
  soup->add_option("--wd", sp_ls.weight_decay, "alpha weight decay");
  soup->add_option("--t0", sp_ls.t0, "cosine warm-restart period");
  soup->add_option("--parts", sp_parts, "partition count (pls)");
  soup->add_option("--budget", sp_budget, "partitions per epoch (pls)");
  soup->add_option("--score-interval", sp_interval,
                   "full-validation scoring cadence (pls)");
  soup->add_flag("--no-simplex", sp_no_simplex,
                 "ablation: raw interpolation ratios without softmax");
  soup->add_option("--val-holdout", sp_ls.val_holdout,
                   "validation fraction held out for snapshot scoring");
  soup->add_option("--seed", sp_seed, "alpha/partition seed");
  soup->add_option("--out", sp_out, "output report path (.json)")->required();
  soup->callback([&] {
    CsrGraph g = load_graph(sp_graph);
    auto [spec, members] = load_ingredients(sp_dir);
    require(spec.in_dim == g.features.cols() && spec.out_dim == g.num_classes,
            "ingredients were trained for a different graph shape");
    sp_ls.simplex = !sp_no_simplex;
    sp_ls.alpha_seed = sp_seed;

    SoupReport rep;
    const SoupMethod method = method_from_string(sp_method);
    switch (method) {
      case SoupMethod::kUniform:
        rep = uniform_soup(spec, members, g);
        break;
      case SoupMethod::kGreedy:
        rep = greedy_soup(spec, members, g);
        break;
      case SoupMethod::kGis:
        rep = gis_soup(spec, members, g, sp_granularity);
        break;
      case SoupMethod::kLs:
        rep = learned_soup(spec, members, g, sp_ls);
        break;
      case SoupMethod::kPls: {
        PLSConfig cfg;
        static_cast<LSConfig&>(cfg) = sp_ls;
        cfg.k = sp_parts;
        cfg.r = sp_budget;
        cfg.score_interval = sp_interval;
        Partitioning parts = partition_graph(g, cfg.k, mix_seed(sp_seed, 0x706172));
        rep = pls_soup(spec, members, g, parts, cfg);
        break;
      }
    }

    std::string ckpt = sp_out;
    const std::string suffix = ".json";
    if (ckpt.size() > suffix.size() &&
        ckpt.compare(ckpt.size() - suffix.size(), suffix.size(), suffix) == 0)
      ckpt.resize(ckpt.size() - suffix.size());
    ckpt += ".gskp";
    if (fs::path(sp_out).has_parent_path())
      fs::create_directories(fs::path(sp_out).parent_path());
    save_params(spec, rep.result, ckpt);

    json config = {{"granularity", sp_granularity},
                   {"epochs", sp_ls.epochs},
                   {"base_lr", sp_ls.base_lr},
                   {"weight_decay", sp_ls.weight_decay},
                   {"t0", sp_ls.t0},
                   {"simplex", sp_ls.simplex},
                   {"val_holdout", sp_ls.val_holdout},
                   {"parts", sp_parts},
                   {"budget", sp_budget},
                   {"score_interval", sp_interval},
                   {"seed", sp_seed}};
    json out = {{"method", method_name(method)},
                {"graph", sp_graph},
                {"ingredients_dir", sp_dir},
                {"config", config},
                {"val_acc", rep.val_acc},
                {"test_acc", rep.test_acc},
                {"wall_seconds", rep.wall_seconds},
                {"counters", counters_json(rep.counters)},
                {"trace", trace_json(rep.trace)},
                {"checkpoint", ckpt}};
    spill(sp_out, out.dump(2) + "\n");
    std::printf("%s soup: val acc %.4f, test acc %.4f -> %s\n",
                method_name(method).c_str(), rep.val_acc, rep.test_acc,
                sp_out.c_str());
  });

  // ---- bench --------------------------------------------------------------
  std::string be_plan, be_out;
  bool be_print = false;
  auto* bench = app.add_subcommand("bench", "run an experiment plan");
  bench->add_option("--plan", be_plan, "plan json (defaults to the built-in plan)");
  bench->add_option("--out", be_out, "output directory");
  bench->add_flag("--print-plan", be_print, "print the default plan and exit");
  bench->callback([&] {
    if (be_print) {
      std::printf("%s\n", plan_to_json(default_plan()).c_str());
      return;
    }
    require(!be_out.empty(), "bench: --out is required");
    ExperimentPlan plan = be_plan.empty() ? default_plan() : parse_plan(slurp(be_plan));
    BenchRun run = run_plan(plan);
    write_bench_outputs(run, be_out);
    std::printf("%s", emit_table(run.table, TableFormat::kMarkdown).c_str());
    for (const CellFailure& f : run.failures) {
      std::fprintf(stderr, "cell %lld (%s) failed: %s\n",
                   static_cast<long long>(f.cell), f.method.c_str(),
                   f.message.c_str());
      rc = 1;
    }
    std::printf("results in %s\n", be_out.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
