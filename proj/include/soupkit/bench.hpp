#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/gnn.hpp"
#include "soupkit/graph.hpp"
#include "soupkit/ingredients.hpp"
#include "soupkit/soup.hpp"

namespace soupkit {

struct PlanCell {
  SoupMethod method = SoupMethod::kUniform;
  std::int64_t granularity = 20;  // gis
  LSConfig ls;                    // ls
  PLSConfig pls;                  // pls
};

/// One benchmark run: graph source, model shape, ingredient training setup,
/// and the method cells to evaluate. Model input/output dims come from the
/// graph at run time.
struct ExperimentPlan {
  std::string graph_path;  // when set, load this file instead of generating
  SbmConfig sbm;
  Arch arch = Arch::kGcn;
  std::int64_t layers = 2;
  std::int64_t hidden = 64;
  float dropout = 0.5f;
  TrainConfig train;
  std::int64_t ingredient_count = 10;
  std::int64_t workers = 4;
  std::vector<PlanCell> cells;
  std::int64_t reps = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

/// The desk-scale defaults: SBM(2000 nodes, 7 classes, feat 64), GCN with
/// hidden 64, 10 ingredients, cells {uniform, greedy, gis(20), ls, pls(8/32)},
/// 4 repetitions.
ExperimentPlan default_plan();

ExperimentPlan parse_plan(const std::string& json_text);
std::string plan_to_json(const ExperimentPlan& plan);

struct CellStats {
  std::string method;
  std::int64_t reps = 0;
  double test_acc_mean = 0.0;
  double test_acc_std = 0.0;  // only meaningful when has_std
  bool has_std = false;       // requires >= 2 repetitions
  double val_acc_mean = 0.0;
  double seconds_mean = 0.0;
  double peak_mb_mean = 0.0;
  std::int64_t forward_passes = 0;
  std::int64_t backward_passes = 0;
  std::int64_t scoring_forwards = 0;
  double mean_nodes_per_pass = 0.0;
};

struct ResultTable {
  std::vector<CellStats> rows;
};

struct CellFailure {
  std::int64_t cell = 0;
  std::string method;
  std::string message;
};

/// Everything a plan run produced: the resolved model spec, per-ingredient
/// accuracies, per-cell per-repetition soup reports (row empty if the cell
/// failed), recorded failures, and the aggregated table.
struct BenchRun {
  ExperimentPlan plan;
  ModelSpec spec;
  std::int64_t graph_nodes = 0;
  std::int64_t graph_edges = 0;
  std::uint32_t graph_classes = 0;
  std::vector<double> ingredient_val_accs;
  std::vector<double> ingredient_test_accs;
  std::vector<double> ingredient_train_seconds;
  std::vector<std::vector<SoupReport>> cell_reports;
  std::vector<CellFailure> failures;
  ResultTable table;
};

/// Trains one shared ingredient pool, then runs every cell x repetition
/// sequentially. Repetition seeds are derived from (plan seed, cell,
/// repetition). A failing cell is recorded and the remaining cells still run.
BenchRun run_plan(const ExperimentPlan& plan);

enum class TableFormat { kCsv, kMarkdown };

/// Stable column order: method, acc mean, acc std, seconds, peak MB, fwd,
/// bwd. Markdown bolds the best accuracy and the best time.
std::string emit_table(const ResultTable& table, TableFormat format);

struct MethodRatio {
  std::string method;
  double speedup = 1.0;       // baseline seconds / method seconds
  double memory_ratio = 1.0;  // method peak / baseline peak
};

std::vector<MethodRatio> speedup_and_memory_summary(const ResultTable& table,
                                                    const std::string& baseline);

/// Writes table.csv, table.md, report.json, and one checkpoint per soup
/// (soup_c<cell>_<method>_r<rep>.gskp) into out_dir, creating it if needed.
void write_bench_outputs(const BenchRun& run, const std::string& out_dir);

}  // namespace soupkit
