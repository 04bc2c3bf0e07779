"""clDice, chamfer and Betti error on a ground-truth loop against a few
degraded versions of it."""

import numpy as np

from vesseltok.graph import SpatialGraph, subgraph
from vesseltok.metrics import MetricsConfig, evaluate, reports_to_csv
from vesseltok.synth import synth_graph

gt = synth_graph("loop", {"n_nodes": 24}, seed=0)
rng = np.random.default_rng(0)
cases = {
    "identical": gt,
    "jittered": gt.with_nodes(gt.nodes + rng.normal(scale=0.01, size=gt.nodes.shape)),
    "broken": SpatialGraph.from_arrays(gt.nodes, gt.edges[1:]),
    "half": subgraph(gt, np.arange(gt.n_nodes) <= 12),
}
cfg = MetricsConfig(radius=0.03, grid_dims=(64,) * 3)
print(reports_to_csv([(name, evaluate(g, gt, cfg)) for name, g in cases.items()]), end="")
