"""Rasterize a synthetic tree into an occupancy grid and check it against the
brute-force distance oracle."""

import time

import numpy as np

from vesseltok.field import FieldConfig, OccupancyGrid, rasterize, rasterize_bruteforce
from vesseltok.synth import synth_graph

g = synth_graph("tree", {"depth": 4}, seed=1)
print(f"tree: {g.n_nodes} nodes, {g.n_edges} edges")

t = time.perf_counter()
fast = rasterize(g, FieldConfig(0.03, (48,) * 3, 16))
print(f"hashed rasterization: {fast.values.sum()} occupied voxels in {time.perf_counter() - t:.3f} s")

t = time.perf_counter()
slow = rasterize_bruteforce(g, OccupancyGrid.cube(48), 0.03)
print(f"brute force:          {slow.values.sum()} occupied voxels in {time.perf_counter() - t:.3f} s")
print("identical:", np.array_equal(fast.values, slow.values))
