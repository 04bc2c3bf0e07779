"""Spatial centerline graphs: data model, JSON I/O, normalization, sampling, topology."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class GraphFormatError(ValueError):
    """Graph file could not be parsed."""


class GraphValidationError(ValueError):
    """Graph content violates a structural invariant."""


@dataclass(frozen=True, eq=False)
class SpatialGraph:
    """Undirected graph with 3D node coordinates.

    ``nodes`` is an (n, 3) float64 array, ``edges`` an (m, 2) int64 array with
    ``i < j`` in every row. Construct through :meth:`from_arrays` to get
    canonicalized, validated arrays.
    """

    nodes: np.ndarray
    edges: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, nodes, edges=(), meta=None) -> SpatialGraph:
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1, 3)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            edges = np.sort(edges, axis=1)
        g = cls(nodes.copy(), edges.copy(), dict(meta or {}))
        g.validate()
        g.nodes.setflags(write=False)
        g.edges.setflags(write=False)
        return g

    @classmethod
    def empty(cls) -> SpatialGraph:
        return cls.from_arrays(np.zeros((0, 3)), np.zeros((0, 2)))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> None:
        if not np.all(np.isfinite(self.nodes)):
            raise GraphValidationError("node coordinates must be finite")
        n = len(self.nodes)
        seen = set()
        for i, j in self.edges.tolist():
            if i < 0 or j >= n:
                raise GraphValidationError(
                    f"edge ({i}, {j}) references a node outside 0..{n - 1}")
            if i == j:
                raise GraphValidationError(f"edge ({i}, {j}) is a self-loop")
            if (i, j) in seen:
                raise GraphValidationError(f"edge ({i}, {j}) is duplicated")
            seen.add((i, j))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if self.n_edges:
            np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (a, b) endpoint arrays: one row per edge, then one
        degenerate row per isolated node."""
        iso = np.flatnonzero(self.degrees() == 0)
        a = np.concatenate([self.nodes[self.edges[:, 0]], self.nodes[iso]])
        b = np.concatenate([self.nodes[self.edges[:, 1]], self.nodes[iso]])
        return a, b

    def with_nodes(self, nodes) -> SpatialGraph:
        return SpatialGraph.from_arrays(nodes, self.edges, self.meta)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpatialGraph):
            return NotImplemented
        return (self.nodes.shape == other.nodes.shape
                and self.edges.shape == other.edges.shape
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.edges, other.edges))

    __hash__ = None

    def __repr__(self) -> str:
        return f"SpatialGraph(n_nodes={self.n_nodes}, n_edges={self.n_edges})"


class BettiPair(NamedTuple):
    beta0: int
    beta1: int


# ---------------------------------------------------------------------------
# serialization

def graph_to_dict(graph: SpatialGraph) -> dict:
    out = {"nodes": graph.nodes.tolist(), "edges": graph.edges.tolist()}
    if graph.meta:
        out["meta"] = graph.meta
    return out


def graph_from_dict(doc: dict) -> SpatialGraph:
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise GraphFormatError("graph document needs a 'nodes' list")
    nodes = doc["nodes"]
    edges = doc.get("edges", [])
    if any(len(p) != 3 for p in nodes):
        raise GraphFormatError("every node must have exactly 3 coordinates")
    if any(len(e) != 2 for e in edges):
        raise GraphFormatError("every edge must have exactly 2 indices")
    return SpatialGraph.from_arrays(
        np.array(nodes, dtype=np.float64).reshape(-1, 3),
        np.array(edges, dtype=np.int64).reshape(-1, 2),
        doc.get("meta") or {},
    )


def save_graph(graph: SpatialGraph, path) -> None:
    path = Path(path)
    # repr-exact floats through json's float formatting
    path.write_text(json.dumps(graph_to_dict(graph)))


def load_graph(path) -> SpatialGraph:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        lines = text.splitlines()
        line = lines[e.lineno - 1] if 0 < e.lineno <= len(lines) else ""
        raise GraphFormatError(
            f"{path}: {e.msg} at line {e.lineno}, column {e.colno}: {line[:80]!r}"
        ) from e
    return graph_from_dict(doc)


# ---------------------------------------------------------------------------
# geometry

def _is_normalized(nodes: np.ndarray) -> bool:
    if not nodes.size:
        return False
    if np.all(nodes == 0):
        return True
    return (np.max(np.abs(nodes)) == 1.0
            and np.all(np.abs(nodes.mean(axis=0)) <= 1e-12))


def normalize_graph(graph: SpatialGraph) -> SpatialGraph:
    """Center on the node centroid and scale so the largest absolute
    coordinate is exactly 1. Graphs that already satisfy this are returned
    unchanged, which keeps the operation idempotent bit for bit."""
    if graph.n_nodes == 0:
        raise GraphValidationError("cannot normalize an empty graph")
    if _is_normalized(graph.nodes):
        return graph
    centered = graph.nodes - graph.nodes.mean(axis=0)
    scale = np.max(np.abs(centered))
    if scale == 0:
        return graph.with_nodes(np.zeros_like(centered))
    return graph.with_nodes(centered / scale)


def farthest_point_sampling(points, k: int, seed=None) -> np.ndarray:
    """Greedy farthest point sampling.

    Starts from the point farthest from the centroid; every tie is broken
    towards the lowest index, so the result is fully deterministic. ``seed`` is
    accepted for interface symmetry and does not affect the output.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    centroid = pts.mean(axis=0)
    d0 = np.sum((pts - centroid) ** 2, axis=1)
    first = int(np.argmax(d0))
    selected = np.empty(k, dtype=np.int64)
    selected[0] = first
    mind = np.sum((pts - pts[first]) ** 2, axis=1)
    mind[first] = -np.inf
    for t in range(1, k):
        nxt = int(np.argmax(mind))
        selected[t] = nxt
        d = np.sum((pts - pts[nxt]) ** 2, axis=1)
        np.minimum(mind, d, out=mind)
        mind[selected[: t + 1]] = -np.inf
    return selected


def segment_segment_distance(p0, p1, q0, q1) -> float:
    """Closest distance between segments [p0, p1] and [q0, q1]."""
    p0, p1, q0, q1 = (np.asarray(v, dtype=np.float64) for v in (p0, p1, q0, q1))
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = d1 @ d1
    e = d2 @ d2
    f = d2 @ r
    eps = 1e-300
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = d1 @ r
        if e <= eps:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(p0 + d1 * s - (q0 + d2 * t)))


def min_clearance(graph: SpatialGraph) -> float:
    """Smallest distance between two edges that share no node (inf if none)."""
    best = np.inf
    edges = graph.edges.tolist()
    P = graph.nodes
    for a in range(len(edges)):
        i, j = edges[a]
        for b in range(a + 1, len(edges)):
            k, m = edges[b]
            if len({i, j, k, m}) < 4:
                continue
            best = min(best, segment_segment_distance(P[i], P[j], P[k], P[m]))
    return best


def min_edge_length(graph: SpatialGraph) -> float:
    if not graph.n_edges:
        return np.inf
    d = graph.nodes[graph.edges[:, 1]] - graph.nodes[graph.edges[:, 0]]
    return float(np.min(np.linalg.norm(d, axis=1)))


# ---------------------------------------------------------------------------
# topology

class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.count = n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if ra > rb:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.count -= 1
        return True


def component_labels(graph: SpatialGraph) -> np.ndarray:
    """Per-node component id; ids are the smallest node index in the component."""
    uf = _UnionFind(graph.n_nodes)
    for i, j in graph.edges.tolist():
        uf.union(i, j)
    return np.array([uf.find(i) for i in range(graph.n_nodes)], dtype=np.int64)


def betti_numbers(graph: SpatialGraph) -> BettiPair:
    uf = _UnionFind(graph.n_nodes)
    for i, j in graph.edges.tolist():
        uf.union(i, j)
    b0 = uf.count
    return BettiPair(b0, graph.n_edges - graph.n_nodes + b0)


def merge_graphs(*graphs: SpatialGraph) -> SpatialGraph:
    """Disjoint union; node indices of later graphs are shifted."""
    nodes, edges, offset = [], [], 0
    for g in graphs:
        nodes.append(g.nodes)
        edges.append(g.edges + offset)
        offset += g.n_nodes
    return SpatialGraph.from_arrays(np.concatenate(nodes), np.concatenate(edges))


def subgraph(graph: SpatialGraph, keep) -> SpatialGraph:
    """Induced subgraph on the boolean node mask ``keep``; order preserving."""
    keep = np.asarray(keep, dtype=bool)
    remap = np.full(graph.n_nodes, -1, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    e = graph.edges
    e = e[keep[e[:, 0]] & keep[e[:, 1]]] if len(e) else e
    return SpatialGraph.from_arrays(graph.nodes[keep], remap[e], graph.meta)


def rotation_matrix(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random proper rotation (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
