#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "soupkit/bench.hpp"
#include "soupkit/common.hpp"
#include "soupkit/gnn.hpp"
#include "soupkit/graph.hpp"
#include "soupkit/ingredients.hpp"
#include "soupkit/soup.hpp"

namespace py = pybind11;
using namespace soupkit;

namespace {

const std::vector<std::uint8_t>& split_mask(const CsrGraph& g,
                                            const std::string& split) {
  if (split == "train") return g.train_mask;
  if (split == "val") return g.val_mask;
  if (split == "test") return g.test_mask;
  fail("unknown split: " + split + " (expected train/val/test)");
}

LSConfig ls_config(std::int64_t epochs, double lr, double weight_decay,
                   std::int64_t t0, std::uint64_t seed, bool simplex,
                   double val_holdout) {
  LSConfig cfg;
  cfg.epochs = epochs;
  cfg.base_lr = lr;
  cfg.weight_decay = weight_decay;
  cfg.t0 = t0;
  cfg.alpha_seed = seed;
  cfg.simplex = simplex;
  cfg.val_holdout = val_holdout;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "model souping for small graph neural networks";

  py::register_exception<Error>(m, "SoupkitError");

  py::class_<CsrGraph>(m, "Graph")
      .def_property_readonly("num_nodes", &CsrGraph::num_nodes)
      .def_property_readonly("num_edges",
                             [](const CsrGraph& g) { return g.num_directed_edges() / 2; })
      .def_property_readonly("num_classes",
                             [](const CsrGraph& g) { return g.num_classes; })
      .def_property_readonly("feat_dim",
                             [](const CsrGraph& g) { return g.features.cols(); })
      .def("__repr__", [](const CsrGraph& g) {
        return "Graph(" + std::to_string(g.num_nodes()) + " nodes, " +
               std::to_string(g.num_directed_edges() / 2) + " edges, " +
               std::to_string(g.num_classes) + " classes)";
      });

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_property_readonly("arch",
                             [](const ModelSpec& s) { return arch_name(s.arch); })
      .def_readonly("layers", &ModelSpec::num_layers)
      .def_readonly("hidden", &ModelSpec::hidden_dim)
      .def_readonly("dropout", &ModelSpec::dropout)
      .def("__repr__", [](const ModelSpec& s) {
        return "ModelSpec(" + arch_name(s.arch) + ", " +
               std::to_string(s.num_layers) + " layers, hidden " +
               std::to_string(s.hidden_dim) + ")";
      });

  py::class_<ModelParams>(m, "Params");

  py::class_<Partitioning>(m, "Partitioning")
      .def_readonly("num_parts", &Partitioning::num_parts)
      .def_property_readonly("part_sizes", [](const Partitioning& p) {
        std::vector<std::size_t> sizes;
        for (const auto& part : p.nodes_of) sizes.push_back(part.size());
        return sizes;
      });

  py::class_<IngredientSet>(m, "IngredientSet")
      .def_readonly("members", &IngredientSet::members)
      .def_readonly("val_accs", &IngredientSet::val_accs)
      .def_readonly("train_seconds", &IngredientSet::train_seconds)
      .def_property_readonly("spec",
                             [](const IngredientSet& s) { return s.spec; })
      .def("__len__", [](const IngredientSet& s) { return s.members.size(); });

  py::class_<PassCounters>(m, "PassCounters")
      .def_readonly("forward_passes", &PassCounters::forward_passes)
      .def_readonly("backward_passes", &PassCounters::backward_passes)
      .def_readonly("scoring_forwards", &PassCounters::scoring_forwards)
      .def_readonly("peak_tracked_bytes", &PassCounters::peak_tracked_bytes)
      .def_readonly("nodes_touched_per_pass", &PassCounters::nodes_touched_per_pass)
      .def("mean_nodes_per_pass", &PassCounters::mean_nodes_per_pass);

  py::class_<TraceEntry>(m, "TraceEntry")
      .def_readonly("step", &TraceEntry::step)
      .def_readonly("val_acc", &TraceEntry::val_acc)
      .def_readonly("accepted", &TraceEntry::accepted)
      .def_readonly("ratio", &TraceEntry::ratio)
      .def_readonly("loss", &TraceEntry::loss)
      .def_readonly("lr", &TraceEntry::lr)
      .def_readonly("nodes", &TraceEntry::nodes);

  py::class_<SoupReport>(m, "SoupReport")
      .def_property_readonly("method",
                             [](const SoupReport& r) { return method_name(r.method); })
      .def_readonly("result", &SoupReport::result)
      .def_readonly("val_acc", &SoupReport::val_acc)
      .def_readonly("test_acc", &SoupReport::test_acc)
      .def_readonly("wall_seconds", &SoupReport::wall_seconds)
      .def_readonly("counters", &SoupReport::counters)
      .def_readonly("trace", &SoupReport::trace)
      .def("__repr__", [](const SoupReport& r) {
        return "SoupReport(" + method_name(r.method) +
               ", val_acc=" + std::to_string(r.val_acc) +
               ", test_acc=" + std::to_string(r.test_acc) + ")";
      });

  m.def(
      "generate_sbm",
      [](std::int64_t nodes, std::uint32_t classes, std::int64_t feat_dim,
         double p_in, double p_out, double noise, double train_frac,
         double val_frac, std::uint64_t seed) {
        SbmConfig cfg;
        cfg.num_nodes = nodes;
        cfg.num_classes = classes;
        cfg.feat_dim = feat_dim;
        cfg.p_in = p_in;
        cfg.p_out = p_out;
        cfg.noise = noise;
        cfg.train_frac = train_frac;
        cfg.val_frac = val_frac;
        cfg.seed = seed;
        return generate_sbm(cfg);
      },
      py::arg("nodes") = 1000, py::arg("classes") = 5, py::arg("feat_dim") = 32,
      py::arg("p_in") = 0.02, py::arg("p_out") = 0.002, py::arg("noise") = 0.8,
      py::arg("train_frac") = 0.5, py::arg("val_frac") = 0.25, py::arg("seed") = 0);

  m.def("save_graph", &save_graph, py::arg("graph"), py::arg("path"));
  m.def("load_graph", &load_graph, py::arg("path"));
  m.def("partition_graph", &partition_graph, py::arg("graph"), py::arg("k"),
        py::arg("seed") = 0);

  m.def(
      "make_spec",
      [](const CsrGraph& g, const std::string& arch, std::int64_t layers,
         std::int64_t hidden, float dropout) {
        ModelSpec s;
        s.arch = arch_from_string(arch);
        s.num_layers = layers;
        s.in_dim = g.features.cols();
        s.hidden_dim = hidden;
        s.out_dim = g.num_classes;
        s.dropout = dropout;
        s.validate();
        return s;
      },
      py::arg("graph"), py::arg("arch") = "gcn", py::arg("layers") = 2,
      py::arg("hidden") = 64, py::arg("dropout") = 0.5f);

  m.def(
      "train_population",
      [](const CsrGraph& g, const ModelSpec& spec, std::int64_t n,
         std::int64_t workers, std::int64_t epochs, double lr,
         double weight_decay, const std::string& optimizer, std::uint64_t seed,
         bool diversity_jitter) {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.lr = lr;
        cfg.weight_decay = weight_decay;
        cfg.optimizer = optimizer_from_string(optimizer);
        cfg.seed_base = seed;
        cfg.diversity_jitter = diversity_jitter;
        return train_population(g, spec, cfg, n, workers);
      },
      py::arg("graph"), py::arg("spec"), py::arg("n") = 10,
      py::arg("workers") = 4, py::arg("epochs") = 100, py::arg("lr") = 0.01,
      py::arg("weight_decay") = 0.0, py::arg("optimizer") = "adam",
      py::arg("seed") = 0, py::arg("diversity_jitter") = true,
      py::call_guard<py::gil_scoped_release>());

  m.def(
      "evaluate",
      [](const ModelSpec& spec, const ModelParams& params, const CsrGraph& g,
         const std::string& split) {
        PropagationCache cache = prepare(g, spec.arch);
        EvalResult r = evaluate(spec, params, cache, g, split_mask(g, split));
        return py::make_tuple(r.loss, r.accuracy);
      },
      py::arg("spec"), py::arg("params"), py::arg("graph"),
      py::arg("split") = "val");

  m.def("uniform_soup", &uniform_soup, py::arg("spec"), py::arg("members"),
        py::arg("graph"), py::call_guard<py::gil_scoped_release>());
  m.def("greedy_soup", &greedy_soup, py::arg("spec"), py::arg("members"),
        py::arg("graph"), py::call_guard<py::gil_scoped_release>());
  m.def("gis_soup", &gis_soup, py::arg("spec"), py::arg("members"),
        py::arg("graph"), py::arg("granularity") = 20,
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "learned_soup",
      [](const ModelSpec& spec, const std::vector<ModelParams>& members,
         const CsrGraph& g, std::int64_t epochs, double lr, double weight_decay,
         std::int64_t t0, std::uint64_t seed, bool simplex, double val_holdout) {
        py::gil_scoped_release release;
        return learned_soup(spec, members, g,
                            ls_config(epochs, lr, weight_decay, t0, seed,
                                      simplex, val_holdout));
      },
      py::arg("spec"), py::arg("members"), py::arg("graph"),
      py::arg("epochs") = 200, py::arg("lr") = 5.0,
      py::arg("weight_decay") = 0.0, py::arg("t0") = 50, py::arg("seed") = 0,
      py::arg("simplex") = true, py::arg("val_holdout") = 0.0);

  m.def(
      "pls_soup",
      [](const ModelSpec& spec, const std::vector<ModelParams>& members,
         const CsrGraph& g, const Partitioning& parts, std::int64_t r,
         std::int64_t epochs, double lr, double weight_decay, std::int64_t t0,
         std::uint64_t seed, bool simplex, double val_holdout,
         std::int64_t score_interval) {
        py::gil_scoped_release release;
        PLSConfig cfg;
        static_cast<LSConfig&>(cfg) = ls_config(epochs, lr, weight_decay, t0,
                                                seed, simplex, val_holdout);
        cfg.k = parts.num_parts;
        cfg.r = r;
        cfg.score_interval = score_interval;
        return pls_soup(spec, members, g, parts, cfg);
      },
      py::arg("spec"), py::arg("members"), py::arg("graph"), py::arg("parts"),
      py::arg("r") = 8, py::arg("epochs") = 200, py::arg("lr") = 5.0,
      py::arg("weight_decay") = 0.0, py::arg("t0") = 50, py::arg("seed") = 0,
      py::arg("simplex") = true, py::arg("val_holdout") = 0.0,
      py::arg("score_interval") = 10);

  m.def("save_params", &save_params, py::arg("spec"), py::arg("params"),
        py::arg("path"));
  m.def("load_params", &load_params, py::arg("path"));

  m.def("default_plan_json", [] { return plan_to_json(default_plan()); });
  m.def(
      "run_bench",
      [](const std::string& out_dir, const std::string& plan_json) {
        ExperimentPlan plan =
            plan_json.empty() ? default_plan() : parse_plan(plan_json);
        BenchRun run;
        {
          py::gil_scoped_release release;
          run = run_plan(plan);
          write_bench_outputs(run, out_dir);
        }
        py::list failures;
        for (const CellFailure& f : run.failures) {
          py::dict d;
          d["cell"] = f.cell;
          d["method"] = f.method;
          d["message"] = f.message;
          failures.append(d);
        }
        py::dict out;
        out["table_csv"] = emit_table(run.table, TableFormat::kCsv);
        out["table_markdown"] = emit_table(run.table, TableFormat::kMarkdown);
        out["failures"] = failures;
        return out;
      },
      py::arg("out_dir"), py::arg("plan_json") = "");
}
