"""Synthetic centerline graphs with known topology, for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .graph import (
    BettiPair,
    SpatialGraph,
    merge_graphs,
    min_clearance,
    min_edge_length,
    rotation_matrix,
)

KINDS = ("tree", "loop", "parallel-tubes", "grid")


def expected_betti(kind: str, params: dict) -> BettiPair:
    p = _with_defaults(kind, params)
    if kind == "tree":
        return BettiPair(1, 0)
    if kind == "loop":
        return BettiPair(1, 1)
    if kind == "parallel-tubes":
        return BettiPair(p["n_tubes"], 0)
    if kind == "grid":
        return BettiPair(1, (p["nx"] - 1) * (p["ny"] - 1))
    raise ValueError(f"unknown graph kind {kind!r}; expected one of {KINDS}")


_DEFAULTS = {
    "tree": {"depth": 4, "branching": 2, "spread_deg": 38.0, "decay": 0.72,
             "jitter": 0.15, "extent": 0.85, "min_clearance": 0.08,
             "min_edge": 0.07},
    "loop": {"n_nodes": 16, "radius": 0.6, "jitter": 0.05, "rotate": True},
    "parallel-tubes": {"n_tubes": 2, "separation": 0.2, "length": 1.2,
                       "nodes_per_tube": 8, "tilt_deg": 0.0, "rotate": True},
    "grid": {"nx": 3, "ny": 3, "cell": 0.5, "rotate": True},
}


def _with_defaults(kind: str, params: dict | None) -> dict:
    if kind not in _DEFAULTS:
        raise ValueError(f"unknown graph kind {kind!r}; expected one of {KINDS}")
    p = dict(_DEFAULTS[kind])
    unknown = set(params or {}) - set(p)
    if unknown:
        raise ValueError(f"unknown parameters for {kind}: {sorted(unknown)}")
    p.update(params or {})
    return p


def synth_graph(kind: str, params: dict | None = None, seed: int = 0) -> SpatialGraph:
    """Build a graph of the given kind; coordinates lie inside [-1, 1]^3.

    The returned graph's ``meta`` records kind, params, seed and the Betti pair
    that holds by construction.
    """
    p = _with_defaults(kind, params)
    rng = np.random.default_rng(seed)
    if kind == "tree":
        g = _tree(p, rng)
    elif kind == "loop":
        g = _loop(p, rng)
    elif kind == "parallel-tubes":
        g = _tubes(p, rng)
    else:
        g = _grid(p, rng)
    if np.max(np.abs(g.nodes)) > 1.0:
        raise ValueError(f"{kind} with {params} does not fit inside [-1, 1]^3")
    b = expected_betti(kind, p)
    meta = {"kind": kind, "params": p, "seed": seed, "betti": list(b)}
    return SpatialGraph.from_arrays(g.nodes, g.edges, meta)


def _perp_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(d, a)
    u /= np.linalg.norm(u)
    return u, np.cross(d, u)


def _tree(p: dict, rng: np.random.Generator) -> SpatialGraph:
    depth, b = int(p["depth"]), int(p["branching"])
    if depth < 1 or b < 1:
        raise ValueError("tree needs depth >= 1 and branching >= 1")
    spread = np.deg2rad(p["spread_deg"])
    for attempt in range(200):
        jitter = p["jitter"] * (0.97 ** attempt)
        nodes = [np.zeros(3)]
        edges = []
        # (node index, direction, level, in-plane rotation)
        frontier = [(0, np.array([0.0, -1.0, 0.0]), 0, 0.0)]
        while frontier:
            idx, d, level, phase = frontier.pop(0)
            if level == depth:
                continue
            u, v = _perp_basis(d)
            length = p["decay"] ** level
            for c in range(b):
                ang = phase + 2 * np.pi * c / b + rng.uniform(-jitter, jitter)
                tilt = spread * (1 + rng.uniform(-jitter, jitter)) if b > 1 else 0.0
                nd = np.cos(tilt) * d + np.sin(tilt) * (np.cos(ang) * u + np.sin(ang) * v)
                nd /= np.linalg.norm(nd)
                nodes.append(nodes[idx] + length * nd)
                edges.append((idx, len(nodes) - 1))
                frontier.append((len(nodes) - 1, nd, level + 1, phase + np.pi / 2))
        P = np.array(nodes)
        P -= 0.5 * (P.max(axis=0) + P.min(axis=0))
        P *= p["extent"] / np.max(np.abs(P))
        P = P @ rotation_matrix(rng).T
        P *= p["extent"] / max(np.max(np.abs(P)), p["extent"])
        g = SpatialGraph.from_arrays(P, edges)
        if (min_edge_length(g) > p["min_edge"]
                and min_clearance(g) > p["min_clearance"]):
            return g
    raise ValueError(f"could not place a tree satisfying clearance for {p}")


def _loop(p: dict, rng: np.random.Generator) -> SpatialGraph:
    n = int(p["n_nodes"])
    if n < 3:
        raise ValueError("loop needs at least 3 nodes")
    t = 2 * np.pi * np.arange(n) / n
    rad = p["radius"] * (1 + rng.uniform(-p["jitter"], p["jitter"], n))
    P = np.stack([rad * np.cos(t), rad * np.sin(t), np.zeros(n)], axis=1)
    if p["rotate"]:
        P = P @ rotation_matrix(rng).T
    edges = [(i, (i + 1) % n) for i in range(n)]
    return SpatialGraph.from_arrays(P, edges)


def _tubes(p: dict, rng: np.random.Generator) -> SpatialGraph:
    n_t, m = int(p["n_tubes"]), int(p["nodes_per_tube"])
    if n_t < 1 or m < 2 or p["separation"] <= 0 or p["length"] <= 0:
        raise ValueError("parallel-tubes needs n_tubes >= 1, nodes_per_tube >= 2, "
                         "positive separation and length")
    tilt = np.deg2rad(p["tilt_deg"])
    parts = []
    offsets = (np.arange(n_t) - (n_t - 1) / 2) * p["separation"]
    for k, y in enumerate(offsets):
        # alternate tubes lean by +-tilt/2 about the centre so the minimum
        # separation stays at the requested value
        a = (tilt / 2) * (1 if k % 2 else -1)
        s = np.linspace(-p["length"] / 2, p["length"] / 2, m)
        dy = np.abs(s) * np.tan(abs(a)) * (1 if a > 0 else -1) if n_t > 1 else 0 * s
        P = np.stack([s, y + dy, np.zeros(m)], axis=1)
        parts.append(SpatialGraph.from_arrays(P, [(i, i + 1) for i in range(m - 1)]))
    g = merge_graphs(*parts)
    P = g.nodes
    if p["rotate"]:
        P = P @ rotation_matrix(rng).T
    return SpatialGraph.from_arrays(P, g.edges)


def _grid(p: dict, rng: np.random.Generator) -> SpatialGraph:
    nx, ny = int(p["nx"]), int(p["ny"])
    if nx < 1 or ny < 1 or p["cell"] <= 0:
        raise ValueError("grid needs nx, ny >= 1 and positive cell size")
    xs = (np.arange(nx) - (nx - 1) / 2) * p["cell"]
    ys = (np.arange(ny) - (ny - 1) / 2) * p["cell"]
    P = np.array([[x, y, 0.0] for x in xs for y in ys])
    idx = lambda i, j: i * ny + j
    edges = [(idx(i, j), idx(i + 1, j)) for i in range(nx - 1) for j in range(ny)]
    edges += [(idx(i, j), idx(i, j + 1)) for i in range(nx) for j in range(ny - 1)]
    if p["rotate"]:
        P = P @ rotation_matrix(rng).T
    return SpatialGraph.from_arrays(P, edges)


def hairpin(width: float, length: float = 1.2, n_side: int = 10,
            tilt_deg: float = 0.0, seed: int | None = None) -> SpatialGraph:
    """Closed loop made of two long, nearly parallel sides ``width`` apart.

    A single cycle whose hole closes up once the pseudo-radius reaches
    ``width / 2``. With ``tilt_deg`` the far end opens slightly wider.
    """
    s = np.linspace(-length / 2, length / 2, n_side)
    flare = (s + length / 2) * np.tan(np.deg2rad(tilt_deg))
    a = np.stack([s, np.zeros(n_side), np.zeros(n_side)], axis=1)
    b = np.stack([s[::-1], width + flare[::-1], np.zeros(n_side)], axis=1)
    P = np.concatenate([a, b])
    P[:, 1] -= P[:, 1].mean()
    n = len(P)
    if seed is not None:
        P = P @ rotation_matrix(np.random.default_rng(seed)).T
    return SpatialGraph.from_arrays(P, [(i, (i + 1) % n) for i in range(n)],
                                    {"kind": "hairpin", "width": width})
