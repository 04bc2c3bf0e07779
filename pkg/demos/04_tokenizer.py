"""Train a small tokenizer on one tree, compress it to K x C numbers and
decode it back. Pass a larger epoch count for a closer fit."""

import sys

import numpy as np

from vesseltok.extract import extract_graph
from vesseltok.field import FieldConfig, OccupancyGrid, rasterize
from vesseltok.graph import betti_numbers
from vesseltok.metrics import MetricsConfig, evaluate
from vesseltok.synth import synth_graph
from vesseltok.tokenizer import (
                      ModelConfig,
                      TrainSchedule,
                      compression_ratio,
                      decode_grid,
                      encode,
                      train,
)

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 300
g = synth_graph("tree", {"depth": 3, "branching": 3}, seed=0)
cfg = ModelConfig(token_count=32, channel_dim=4)
sched = TrainSchedule(epochs=epochs, lr_peak=3e-3, lr_min=3e-5, warmup_steps=min(100, epochs // 10),
                      radius=0.04, augment=False, near_fraction=0.25)
res = train([g], cfg, sched, log_every=max(1, epochs // 6))

lat = encode(g.nodes, cfg, res.params)
print(f"{g.n_nodes} nodes -> tokens {lat.mu.shape}, kappa {compression_ratio([g.n_nodes], 32, 4):.3f}")
probs = decode_grid(lat.mu, OccupancyGrid.cube(64, dtype=np.float64), cfg, res.params)
src = rasterize(g, FieldConfig(0.04, (64,) * 3, 32)).values.astype(bool)
pred = probs.values >= 0.5
print(f"voxel IoU with the source field: {(pred & src).sum() / (pred | src).sum():.3f}")
out = extract_graph(probs)
rep = evaluate(out, g, MetricsConfig(radius=0.04, grid_dims=(64,) * 3))
print(f"extracted graph: betti {tuple(betti_numbers(out))} vs {tuple(betti_numbers(g))}, "
      f"clDice {rep.cldice:.4f}")
