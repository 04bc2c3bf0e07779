"""End-to-end drivers: non-learned round trip, chunked round trip, VAE
reconstruction and the two ablation sweeps."""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

import numpy as np
from scipy import ndimage

from .extract import (
    CHUNKED_MIN_COMPONENT,
    DEFAULT_TAU,
    extract_graph,
    skeleton_to_graph,
    skeletonize,
)
from .field import DEFAULT_CHUNK, FieldConfig, OccupancyGrid, rasterize
from .graph import SpatialGraph, merge_graphs
from .metrics import MetricsConfig, MetricsReport, evaluate
from .synth import hairpin, synth_graph
from .tokenizer import (
    ModelConfig,
    Params,
    TrainSchedule,
    compression_ratio,
    decode_grid,
    encode,
    train,
)

ABLATION_RADII = (0.008, 0.016, 0.032)
# full-scale reference row for K=512, C=4 on the airway set
FULL_SCALE_LATENT_ROW = {"K": 512, "C": 4, "cldice_pct": 96.61, "kappa": 7.03}


class TrendError(AssertionError):
    """An ablation sweep did not show the expected direction."""


def _check_in_cube(graph: SpatialGraph) -> None:
    if graph.n_nodes == 0:
        raise ValueError("graph has no nodes")
    if np.max(np.abs(graph.nodes)) > 1.0:
        raise ValueError("graph coordinates leave [-1, 1]^3; normalize it first")


def roundtrip(graph: SpatialGraph, radius: float, grid_dims, tau: float = DEFAULT_TAU,
              min_component: int = 0, chunk_edge: int = DEFAULT_CHUNK,
              ) -> tuple[SpatialGraph, MetricsReport]:
    """rasterize -> extract_graph -> evaluate, without any learned model."""
    _check_in_cube(graph)
    fc = FieldConfig(radius, grid_dims, chunk_edge)
    field = rasterize(graph, fc)
    out = extract_graph(field, tau, min_component)
    rep = evaluate(out, graph, MetricsConfig(radius=radius, grid_dims=fc.grid_dims,
                                             tau=tau, chunk_edge=fc.chunk_edge))
    return out, rep


def chunked_roundtrip(graph: SpatialGraph, radius: float, grid_dims, crop: int,
                      tau: float = DEFAULT_TAU,
                      min_component: int = CHUNKED_MIN_COMPONENT,
                      ) -> tuple[SpatialGraph, MetricsReport]:
    """Round trip over crop^3-voxel tiles.

    Each tile takes the edges whose dilated bounds reach it, moves them to
    their centre of mass without scaling and is rasterized on its own. Tiles
    are pasted back into the full volume as they are (no blending), 26-
    connected voxel components smaller than ``min_component`` voxels are
    dropped, and the graph is extracted from the assembled volume.
    """
    _check_in_cube(graph)
    if crop < 1:
        raise ValueError("crop size must be positive")
    fc = FieldConfig(radius, grid_dims, min(crop, DEFAULT_CHUNK))
    full = OccupancyGrid.cube(fc.grid_dims)
    a, b = graph.segments()
    pad = radius * (1 + 1e-9) + 1e-12
    lo_s, hi_s = np.minimum(a, b) - pad, np.maximum(a, b) + pad
    dims = full.dims
    for start in product(*(range(0, dims[d], crop) for d in range(3))):
        start = np.array(start)
        stop = np.minimum(start + crop, dims)
        blo, bhi = full.centers(start), full.centers(stop - 1)
        hit = np.all(lo_s <= bhi, axis=1) & np.all(hi_s >= blo, axis=1)
        if not hit.any():
            continue
        pa, pb = a[hit], b[hit]
        n = len(pa)
        part = SpatialGraph.from_arrays(np.concatenate([pa, pb]),
                                        [(i, n + i) for i in range(n)])
        com = part.nodes.mean(axis=0)
        local = part.with_nodes(part.nodes - com)
        tile = OccupancyGrid(np.zeros(tuple(stop - start), dtype=np.uint8),
                             full.centers(start) - com, full.spacing)
        tile = rasterize(local, fc, grid=tile)
        full.values[start[0]:stop[0], start[1]:stop[1], start[2]:stop[2]] = tile.values
    vol = drop_small_components(full.values > 0, min_component)
    field = OccupancyGrid(vol.astype(np.uint8), full.origin, full.spacing)
    out = skeleton_to_graph(skeletonize(field))
    rep = evaluate(out, graph, MetricsConfig(radius=radius, grid_dims=dims, tau=tau))
    return out, rep


def drop_small_components(mask: np.ndarray, min_voxels: int) -> np.ndarray:
    """Remove 26-connected components with fewer than ``min_voxels`` voxels."""
    if min_voxels <= 0:
        return mask
    lab, n = ndimage.label(mask, structure=np.ones((3, 3, 3)))
    if n == 0:
        return mask
    sizes = np.bincount(lab.ravel())
    keep = sizes >= min_voxels
    keep[0] = False
    return keep[lab]


# ---------------------------------------------------------------------------
# learned reconstruction

def reconstruct(graph: SpatialGraph, cfg: ModelConfig, params: Params, grid_dims,
                tau: float = DEFAULT_TAU, min_component: int = 0):
    """encode (posterior mean) -> decode on the grid -> extract. Returns the
    extracted graph and the probability grid."""
    lat = encode(graph.nodes, cfg, params)
    probs = decode_grid(lat.mu, OccupancyGrid.cube(grid_dims, dtype=np.float64),
                        cfg, params)
    return extract_graph(probs, tau, min_component), probs


# ---------------------------------------------------------------------------
# pseudo-radius sweep

def radius_phantoms() -> list[SpatialGraph]:
    """Near-parallel structures whose gaps close at different radii.

    Hairpin loops lose their hole once the radius reaches half their width; a
    ladder loses all rungs' holes together; a close tube pair fuses into one
    component.
    """
    out = [
        hairpin(0.030),
        hairpin(0.045, tilt_deg=1.0),
        hairpin(0.056, seed=3),
    ]
    rails = 0.05
    n = 7
    xs = np.linspace(-0.6, 0.6, n)
    top = np.stack([xs, np.full(n, rails / 2), np.zeros(n)], axis=1)
    bot = np.stack([xs, np.full(n, -rails / 2), np.zeros(n)], axis=1)
    edges = [(i, i + 1) for i in range(n - 1)] + [(n + i, n + i + 1) for i in range(n - 1)]
    edges += [(i, n + i) for i in range(0, n, 2)]
    out.append(SpatialGraph.from_arrays(np.concatenate([top, bot]), edges,
                                        {"kind": "ladder", "width": rails}))
    out.append(synth_graph("parallel-tubes", {"n_tubes": 2, "separation": 0.05,
                                              "tilt_deg": 0.5}, seed=7))
    return out


@dataclass
class RadiusRow:
    radius: float
    mean_d_beta0: float
    mean_d_beta1: float
    mean_cldice: float
    failures: int
    cases: int


def ablate_radius(graphs, radii=ABLATION_RADII, grid_dims=256, tau: float = DEFAULT_TAU,
                  check_trend: bool = True) -> list[RadiusRow]:
    """Round trip every graph at every radius. With more than one radius the
    loop error must not increase as the radius shrinks (``TrendError``)."""
    radii = [float(r) for r in radii]
    if not radii:
        raise ValueError("need at least one radius")
    if any(r <= 0 for r in radii):
        raise ValueError("radii must be positive")
    rows = []
    for r in radii:
        reps = [roundtrip(g, r, grid_dims, tau)[1] for g in graphs]
        rows.append(RadiusRow(
            r,
            float(np.mean([x.delta_beta0 for x in reps])),
            float(np.mean([x.delta_beta1 for x in reps])),
            float(np.mean([x.cldice for x in reps])),
            sum(1 for x in reps if x.delta_beta0 or x.delta_beta1),
            len(reps),
        ))
    if check_trend and len(rows) > 1:
        by_r = sorted(rows, key=lambda x: x.radius)
        errs = [x.mean_d_beta1 for x in by_r]
        if any(lo > hi for lo, hi in zip(errs, errs[1:])):
            raise TrendError(f"loop error does not shrink with the radius: "
                             f"{[(x.radius, x.mean_d_beta1) for x in by_r]}")
    return rows


# ---------------------------------------------------------------------------
# latent size sweep

@dataclass
class LatentRow:
    K: int
    C: int
    mean_cldice: float
    mean_chamfer: float
    mean_d_beta0: float
    mean_d_beta1: float
    kappa: float


def ablate_latent(graphs, K_list, C_list, base: ModelConfig, sched: TrainSchedule,
                  grid_dims=64, tau: float = DEFAULT_TAU) -> list[LatentRow]:
    """Train one model per (K, C) cell on ``graphs`` and score reconstructions
    of the same graphs."""
    graphs = list(graphs)
    if not graphs or not K_list or not C_list:
        raise ValueError("need graphs and non-empty K and C lists")
    counts = [g.n_nodes for g in graphs]
    if min(counts) < max(K_list):
        raise ValueError(f"every graph needs at least max(K)={max(K_list)} nodes")
    mc = MetricsConfig(radius=sched.radius, grid_dims=grid_dims, tau=tau)
    rows = []
    for K, C in product(K_list, C_list):
        cfg = replace(base, token_count=int(K), channel_dim=int(C))
        res = train(graphs, cfg, sched)
        kappa = compression_ratio(counts, cfg.token_count, cfg.channel_dim)
        reps = []
        for g in graphs:
            out, _ = reconstruct(g, cfg, res.params, grid_dims, tau)
            reps.append(evaluate(out, g, mc, kappa))
        rows.append(LatentRow(
            cfg.token_count, cfg.channel_dim,
            float(np.mean([x.cldice for x in reps])),
            float(np.mean([x.chamfer for x in reps])),
            float(np.mean([x.delta_beta0 for x in reps])),
            float(np.mean([x.delta_beta1 for x in reps])),
            kappa,
        ))
    return rows


def toy_dataset(count: int, seed: int = 0, min_nodes: int = 40) -> list[SpatialGraph]:
    """Mixed trees and loops with at least ``min_nodes`` nodes each."""
    out = []
    for i in range(count):
        if i % 2 == 0:
            g = synth_graph("tree", {"depth": 3, "branching": 3}, seed + i)
        else:
            g = synth_graph("loop", {"n_nodes": max(min_nodes, 16)}, seed + i)
        out.append(g)
    return out


def multi_component(seed: int) -> SpatialGraph:
    """A tree and a loop in disjoint halves of the cube."""
    t = synth_graph("tree", {"depth": 3, "branching": 2, "extent": 0.4}, seed)
    lp = synth_graph("loop", {"n_nodes": 12, "radius": 0.3}, seed)
    t = t.with_nodes(t.nodes * 0.9 + np.array([-0.5, 0.0, 0.0]))
    lp = lp.with_nodes(lp.nodes + np.array([0.5, 0.0, 0.0]))
    return merge_graphs(t, lp)
