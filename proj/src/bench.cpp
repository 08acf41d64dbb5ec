#include "soupkit/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <utility>

#include "json.hpp"
#include "soupkit/common.hpp"

namespace soupkit {

namespace {

using nlohmann::json;

double vec_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / double(xs.size());
}

double vec_std(const std::vector<double>& xs) {
  const double m = vec_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / double(xs.size() - 1));
}

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

LSConfig parse_ls(const json& c) {
  LSConfig ls;
  ls.epochs = c.value("epochs", ls.epochs);
  ls.base_lr = c.value("base_lr", ls.base_lr);
  ls.weight_decay = c.value("weight_decay", ls.weight_decay);
  ls.t0 = c.value("t0", ls.t0);
  ls.simplex = c.value("simplex", ls.simplex);
  ls.val_holdout = c.value("val_holdout", ls.val_holdout);
  return ls;
}

json ls_json(const LSConfig& ls) {
  return {{"epochs", ls.epochs},     {"base_lr", ls.base_lr},
          {"weight_decay", ls.weight_decay}, {"t0", ls.t0},
          {"simplex", ls.simplex},   {"val_holdout", ls.val_holdout}};
}

json counters_json(const PassCounters& c) {
  return {{"forward_passes", c.forward_passes},
          {"backward_passes", c.backward_passes},
          {"scoring_forwards", c.scoring_forwards},
          {"peak_tracked_bytes", c.peak_tracked_bytes},
          {"mean_nodes_per_pass", c.mean_nodes_per_pass()},
          {"nodes_touched_per_pass", c.nodes_touched_per_pass}};
}

}  // namespace

void ExperimentPlan::validate() const {
  require(!cells.empty(), "plan: needs at least one cell");
  require(reps >= 1, "plan: reps must be positive");
  require(ingredient_count >= 1, "plan: ingredient count must be positive");
  require(workers >= 1, "plan: workers must be positive");
  require(layers >= 2, "plan: model needs at least two layers");
  require(hidden >= 1, "plan: hidden dim must be positive");
}

ExperimentPlan default_plan() {
  ExperimentPlan p;
  p.sbm.num_nodes = 2000;
  p.sbm.num_classes = 7;
  p.sbm.feat_dim = 64;
  p.sbm.p_in = 0.03;
  p.sbm.p_out = 0.0075;
  p.sbm.noise = 1.5;
  p.sbm.seed = 9;
  p.arch = Arch::kGcn;
  p.layers = 2;
  p.hidden = 64;
  p.dropout = 0.5f;
  p.train.epochs = 100;
  p.train.lr = 0.01;
  p.train.optimizer = Optimizer::kAdam;
  p.ingredient_count = 10;
  p.workers = 4;
  p.reps = 4;
  p.seed = 1;

  PlanCell uniform;
  uniform.method = SoupMethod::kUniform;
  PlanCell greedy;
  greedy.method = SoupMethod::kGreedy;
  PlanCell gis;
  gis.method = SoupMethod::kGis;
  gis.granularity = 20;
  PlanCell ls;
  ls.method = SoupMethod::kLs;
  ls.ls.epochs = 100;
  ls.ls.base_lr = 10.0;
  ls.ls.t0 = 50;
  PlanCell pls;
  pls.method = SoupMethod::kPls;
  static_cast<LSConfig&>(pls.pls) = ls.ls;
  pls.pls.k = 32;
  pls.pls.r = 8;
  pls.pls.score_interval = 10;
  p.cells = {uniform, greedy, gis, ls, pls};
  return p;
}

ExperimentPlan parse_plan(const std::string& json_text) {
  try {
    const json j = json::parse(json_text);
    ExperimentPlan p = default_plan();
    p.cells.clear();

    if (j.contains("graph")) {
      const json& g = j.at("graph");
      if (g.contains("path")) p.graph_path = g.at("path").get<std::string>();
      if (g.contains("sbm")) {
        const json& s = g.at("sbm");
        p.sbm.num_nodes = s.value("nodes", p.sbm.num_nodes);
        p.sbm.num_classes = s.value("classes", p.sbm.num_classes);
        p.sbm.feat_dim = s.value("feat_dim", p.sbm.feat_dim);
        p.sbm.p_in = s.value("p_in", p.sbm.p_in);
        p.sbm.p_out = s.value("p_out", p.sbm.p_out);
        p.sbm.noise = s.value("noise", p.sbm.noise);
        p.sbm.train_frac = s.value("train_frac", p.sbm.train_frac);
        p.sbm.val_frac = s.value("val_frac", p.sbm.val_frac);
        p.sbm.seed = s.value("seed", p.sbm.seed);
      }
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      if (m.contains("arch")) p.arch = arch_from_string(m.at("arch").get<std::string>());
      p.layers = m.value("layers", p.layers);
      p.hidden = m.value("hidden", p.hidden);
      p.dropout = m.value("dropout", p.dropout);
    }
    if (j.contains("ingredients")) {
      const json& i = j.at("ingredients");
      p.ingredient_count = i.value("count", p.ingredient_count);
      p.workers = i.value("workers", p.workers);
      p.train.epochs = i.value("epochs", p.train.epochs);
      p.train.lr = i.value("lr", p.train.lr);
      p.train.weight_decay = i.value("weight_decay", p.train.weight_decay);
      p.train.diversity_jitter = i.value("diversity_jitter", p.train.diversity_jitter);
      if (i.contains("optimizer"))
        p.train.optimizer = optimizer_from_string(i.at("optimizer").get<std::string>());
    }
    require(j.contains("cells"), "plan: missing cells");
    for (const json& c : j.at("cells")) {
      PlanCell cell;
      cell.method = method_from_string(c.at("method").get<std::string>());
      if (cell.method == SoupMethod::kGis)
        cell.granularity = c.value("granularity", cell.granularity);
      if (cell.method == SoupMethod::kLs) cell.ls = parse_ls(c);
      if (cell.method == SoupMethod::kPls) {
        static_cast<LSConfig&>(cell.pls) = parse_ls(c);
        cell.pls.k = c.value("k", cell.pls.k);
        cell.pls.r = c.value("r", cell.pls.r);
        cell.pls.score_interval = c.value("score_interval", cell.pls.score_interval);
      }
      p.cells.push_back(cell);
    }
    p.reps = j.value("reps", p.reps);
    p.seed = j.value("seed", p.seed);
    p.validate();
    return p;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& ex) {
    fail(std::string("plan parse: ") + ex.what());
  }
}

std::string plan_to_json(const ExperimentPlan& p) {
  json j;
  if (!p.graph_path.empty()) {
    j["graph"] = {{"path", p.graph_path}};
  } else {
    j["graph"] = {{"sbm",
                   {{"nodes", p.sbm.num_nodes},
                    {"classes", p.sbm.num_classes},
                    {"feat_dim", p.sbm.feat_dim},
                    {"p_in", p.sbm.p_in},
                    {"p_out", p.sbm.p_out},
                    {"noise", p.sbm.noise},
                    {"train_frac", p.sbm.train_frac},
                    {"val_frac", p.sbm.val_frac},
                    {"seed", p.sbm.seed}}}};
  }
  j["model"] = {{"arch", arch_name(p.arch)},
                {"layers", p.layers},
                {"hidden", p.hidden},
                {"dropout", p.dropout}};
  j["ingredients"] = {{"count", p.ingredient_count},
                      {"workers", p.workers},
                      {"epochs", p.train.epochs},
                      {"lr", p.train.lr},
                      {"weight_decay", p.train.weight_decay},
                      {"optimizer", optimizer_name(p.train.optimizer)},
                      {"diversity_jitter", p.train.diversity_jitter}};
  j["cells"] = json::array();
  for (const PlanCell& c : p.cells) {
    json jc = {{"method", method_name(c.method)}};
    if (c.method == SoupMethod::kGis) jc["granularity"] = c.granularity;
    if (c.method == SoupMethod::kLs) {
      json ls = ls_json(c.ls);
      jc.update(ls);
    }
    if (c.method == SoupMethod::kPls) {
      json ls = ls_json(c.pls);
      jc.update(ls);
      jc["k"] = c.pls.k;
      jc["r"] = c.pls.r;
      jc["score_interval"] = c.pls.score_interval;
    }
    j["cells"].push_back(jc);
  }
  j["reps"] = p.reps;
  j["seed"] = p.seed;
  return j.dump(2);
}

BenchRun run_plan(const ExperimentPlan& plan) {
  plan.validate();
  BenchRun run;
  run.plan = plan;

  CsrGraph g =
      plan.graph_path.empty() ? generate_sbm(plan.sbm) : load_graph(plan.graph_path);
  run.graph_nodes = g.num_nodes();
  run.graph_edges = g.num_directed_edges() / 2;
  run.graph_classes = g.num_classes;

  ModelSpec spec;
  spec.arch = plan.arch;
  spec.num_layers = plan.layers;
  spec.in_dim = g.features.cols();
  spec.hidden_dim = plan.hidden;
  spec.out_dim = g.num_classes;
  spec.dropout = plan.dropout;
  spec.validate();
  run.spec = spec;

  TrainConfig tc = plan.train;
  tc.seed_base = plan.seed;
  IngredientSet pool =
      train_population(g, spec, tc, plan.ingredient_count, plan.workers);
  run.ingredient_val_accs = pool.val_accs;
  run.ingredient_train_seconds = pool.train_seconds;
  PropagationCache cache = prepare(g, spec.arch);
  for (const ModelParams& m : pool.members)
    run.ingredient_test_accs.push_back(
        evaluate(spec, m, cache, g, g.test_mask).accuracy);

  std::map<std::int64_t, Partitioning> parts_by_k;
  for (std::size_t ci = 0; ci < plan.cells.size(); ++ci) {
    const PlanCell& cell = plan.cells[ci];
    std::vector<SoupReport> rep_reports;
    try {
      for (std::int64_t rep = 0; rep < plan.reps; ++rep) {
        const std::uint64_t rep_seed =
            mix_seed(plan.seed, std::uint64_t(ci + 1), std::uint64_t(rep + 1));
        switch (cell.method) {
          case SoupMethod::kUniform:
            rep_reports.push_back(uniform_soup(spec, pool.members, g));
            break;
          case SoupMethod::kGreedy:
            rep_reports.push_back(greedy_soup(spec, pool.members, g));
            break;
          case SoupMethod::kGis:
            rep_reports.push_back(gis_soup(spec, pool.members, g, cell.granularity));
            break;
          case SoupMethod::kLs: {
            LSConfig c = cell.ls;
            c.alpha_seed = rep_seed;
            rep_reports.push_back(learned_soup(spec, pool.members, g, c));
            break;
          }
          case SoupMethod::kPls: {
            PLSConfig c = cell.pls;
            c.alpha_seed = rep_seed;
            auto it = parts_by_k.find(c.k);
            if (it == parts_by_k.end()) {
              it = parts_by_k
                       .emplace(c.k, partition_graph(g, c.k, mix_seed(plan.seed, 0x706172)))
                       .first;
            }
            rep_reports.push_back(pls_soup(spec, pool.members, g, it->second, c));
            break;
          }
        }
      }
    } catch (const std::exception& ex) {
      rep_reports.clear();
      run.failures.push_back(
          {std::int64_t(ci), method_name(cell.method), ex.what()});
    }
    if (!rep_reports.empty()) {
      CellStats s;
      s.method = method_name(cell.method);
      s.reps = std::int64_t(rep_reports.size());
      std::vector<double> accs, vals, secs, peaks;
      for (const SoupReport& r : rep_reports) {
        accs.push_back(r.test_acc);
        vals.push_back(r.val_acc);
        secs.push_back(r.wall_seconds);
        peaks.push_back(double(r.counters.peak_tracked_bytes));
      }
      s.test_acc_mean = vec_mean(accs);
      s.has_std = accs.size() >= 2;
      if (s.has_std) s.test_acc_std = vec_std(accs);
      s.val_acc_mean = vec_mean(vals);
      s.seconds_mean = vec_mean(secs);
      s.peak_mb_mean = vec_mean(peaks) / (1024.0 * 1024.0);
      const PassCounters& c0 = rep_reports.front().counters;
      s.forward_passes = c0.forward_passes;
      s.backward_passes = c0.backward_passes;
      s.scoring_forwards = c0.scoring_forwards;
      s.mean_nodes_per_pass = c0.mean_nodes_per_pass();
      run.table.rows.push_back(std::move(s));
    }
    run.cell_reports.push_back(std::move(rep_reports));
  }
  return run;
}

std::string emit_table(const ResultTable& table, TableFormat format) {
  require(!table.rows.empty(), "emit_table: empty table");
  std::ostringstream out;
  if (format == TableFormat::kCsv) {
    out << "method,test_acc_mean,test_acc_std,seconds,peak_mb,forward_passes,"
           "backward_passes\n";
    for (const CellStats& r : table.rows) {
      out << r.method << ',' << fmt(r.test_acc_mean, 4) << ','
          << (r.has_std ? fmt(r.test_acc_std, 4) : std::string()) << ','
          << fmt(r.seconds_mean, 4) << ',' << fmt(r.peak_mb_mean, 2) << ','
          << r.forward_passes << ',' << r.backward_passes << '\n';
    }
    return out.str();
  }

  double best_acc = -1.0;
  double best_secs = std::numeric_limits<double>::infinity();
  for (const CellStats& r : table.rows) {
    best_acc = std::max(best_acc, r.test_acc_mean);
    best_secs = std::min(best_secs, r.seconds_mean);
  }
  out << "| method | test acc mean | test acc std | seconds | peak MB | fwd | bwd |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const CellStats& r : table.rows) {
    const std::string acc = fmt(r.test_acc_mean, 4);
    const std::string secs = fmt(r.seconds_mean, 4);
    out << "| " << r.method << " | "
        << (r.test_acc_mean == best_acc ? "**" + acc + "**" : acc) << " | "
        << (r.has_std ? fmt(r.test_acc_std, 4) : std::string("-")) << " | "
        << (r.seconds_mean == best_secs ? "**" + secs + "**" : secs) << " | "
        << fmt(r.peak_mb_mean, 2) << " | " << r.forward_passes << " | "
        << r.backward_passes << " |\n";
  }
  return out.str();
}

std::vector<MethodRatio> speedup_and_memory_summary(const ResultTable& table,
                                                    const std::string& baseline) {
  const CellStats* base = nullptr;
  for (const CellStats& r : table.rows) {
    if (r.method == baseline) {
      base = &r;
      break;
    }
  }
  require(base != nullptr, "speedup summary: baseline " + baseline + " not in table");
  std::vector<MethodRatio> out;
  for (const CellStats& r : table.rows) {
    MethodRatio m;
    m.method = r.method;
    m.speedup = base->seconds_mean / r.seconds_mean;
    m.memory_ratio = r.peak_mb_mean / base->peak_mb_mean;
    out.push_back(m);
  }
  return out;
}

void write_bench_outputs(const BenchRun& run, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/table.csv");
    require(f.good(), "cannot write " + out_dir + "/table.csv");
    f << emit_table(run.table, TableFormat::kCsv);
  }
  {
    std::ofstream f(out_dir + "/table.md");
    require(f.good(), "cannot write " + out_dir + "/table.md");
    f << emit_table(run.table, TableFormat::kMarkdown);
  }

  json j;
  j["plan"] = json::parse(plan_to_json(run.plan));
  j["graph"] = {{"nodes", run.graph_nodes},
                {"edges", run.graph_edges},
                {"classes", run.graph_classes}};
  j["model"] = {{"arch", arch_name(run.spec.arch)},
                {"layers", run.spec.num_layers},
                {"hidden", run.spec.hidden_dim},
                {"in_dim", run.spec.in_dim},
                {"out_dim", run.spec.out_dim},
                {"dropout", run.spec.dropout}};
  j["ingredients"] = {{"val_accs", run.ingredient_val_accs},
                      {"test_accs", run.ingredient_test_accs},
                      {"mean_val_acc", vec_mean(run.ingredient_val_accs)},
                      {"mean_test_acc", vec_mean(run.ingredient_test_accs)},
                      {"train_seconds", run.ingredient_train_seconds}};
  j["cells"] = json::array();
  for (std::size_t ci = 0; ci < run.cell_reports.size(); ++ci) {
    json jc;
    jc["method"] = method_name(run.plan.cells[ci].method);
    jc["failed"] = run.cell_reports[ci].empty();
    jc["reps"] = json::array();
    for (const SoupReport& r : run.cell_reports[ci]) {
      jc["reps"].push_back({{"val_acc", r.val_acc},
                            {"test_acc", r.test_acc},
                            {"wall_seconds", r.wall_seconds},
                            {"trace_len", r.trace.size()},
                            {"counters", counters_json(r.counters)}});
    }
    j["cells"].push_back(jc);
  }
  j["failures"] = json::array();
  for (const CellFailure& f : run.failures)
    j["failures"].push_back(
        {{"cell", f.cell}, {"method", f.method}, {"message", f.message}});

  auto row_secs = [&](const std::string& m) -> const CellStats* {
    for (const CellStats& r : run.table.rows)
      if (r.method == m) return &r;
    return nullptr;
  };
  const CellStats* ls = row_secs("ls");
  const CellStats* gis = row_secs("gis");
  const CellStats* pls = row_secs("pls");
  json checks = json::array();
  if (ls && gis)
    checks.push_back({{"claim", "ls wall < gis wall"},
                      {"holds", ls->seconds_mean < gis->seconds_mean},
                      {"ls_seconds", ls->seconds_mean},
                      {"gis_seconds", gis->seconds_mean}});
  if (ls && pls)
    checks.push_back({{"claim", "pls wall < ls wall"},
                      {"holds", pls->seconds_mean < ls->seconds_mean},
                      {"pls_seconds", pls->seconds_mean},
                      {"ls_seconds", ls->seconds_mean}});
  j["wall_checks"] = checks;
  if (gis) {
    json ratios = json::array();
    for (const MethodRatio& m : speedup_and_memory_summary(run.table, "gis"))
      ratios.push_back({{"method", m.method},
                        {"speedup", m.speedup},
                        {"memory_ratio", m.memory_ratio}});
    j["summary"] = {{"baseline", "gis"}, {"ratios", ratios}};
  }

  {
    std::ofstream f(out_dir + "/report.json");
    require(f.good(), "cannot write " + out_dir + "/report.json");
    f << j.dump(2) << '\n';
  }

  for (std::size_t ci = 0; ci < run.cell_reports.size(); ++ci) {
    for (std::size_t rep = 0; rep < run.cell_reports[ci].size(); ++rep) {
      char name[96];
      std::snprintf(name, sizeof(name), "/soup_c%02zu_%s_r%zu.gskp", ci,
                    method_name(run.plan.cells[ci].method).c_str(), rep);
      save_params(run.spec, run.cell_reports[ci][rep].result, out_dir + name);
    }
  }
}

}  // namespace soupkit
