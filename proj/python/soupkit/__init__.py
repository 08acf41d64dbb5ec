"""Model souping for small graph neural networks."""

from soupkit._core import (
    Graph,
    IngredientSet,
    ModelSpec,
    Params,
    Partitioning,
    PassCounters,
    SoupReport,
    SoupkitError,
    TraceEntry,
    default_plan_json,
    evaluate,
    generate_sbm,
    gis_soup,
    greedy_soup,
    learned_soup,
    load_graph,
    load_params,
    make_spec,
    partition_graph,
    pls_soup,
    run_bench,
    save_graph,
    save_params,
    train_population,
    uniform_soup,
)

__all__ = [
    "Graph",
    "IngredientSet",
    "ModelSpec",
    "Params",
    "Partitioning",
    "PassCounters",
    "SoupReport",
    "SoupkitError",
    "TraceEntry",
    "default_plan_json",
    "evaluate",
    "generate_sbm",
    "gis_soup",
    "greedy_soup",
    "learned_soup",
    "load_graph",
    "load_params",
    "make_spec",
    "partition_graph",
    "pls_soup",
    "run_bench",
    "save_graph",
    "save_params",
    "train_population",
    "uniform_soup",
]
