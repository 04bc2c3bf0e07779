"""Graph recovery from a decoded field: threshold, thin, connect, prune."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import OccupancyGrid
from .graph import SpatialGraph, _UnionFind, component_labels, subgraph

DEFAULT_TAU = 0.5
CHUNKED_MIN_COMPONENT = 100

# the 13 "forward" offsets of the 26-neighbourhood (lexicographically positive)
_FORWARD = np.array([d for d in np.ndindex(3, 3, 3)
                     if (np.array(d) - 1).tolist() > [0, 0, 0]]) - 1


@dataclass
class VoxelSkeleton:
    dims: tuple[int, int, int]
    origin: np.ndarray
    spacing: float
    voxels: np.ndarray  # (m, 3) int64, lexicographically sorted

    def to_grid(self) -> OccupancyGrid:
        g = np.zeros(self.dims, dtype=np.uint8)
        if len(self.voxels):
            g[tuple(self.voxels.T)] = 1
        return OccupancyGrid(g, self.origin, self.spacing)

    def __len__(self) -> int:
        return len(self.voxels)


# ---------------------------------------------------------------------------
# thinning

_NB = [d for d in np.ndindex(3, 3, 3) if d != (1, 1, 1)]
_NB = np.array(_NB, dtype=np.int64) - 1  # 26 offsets, bit i <-> _NB[i]


def _masks():
    n = len(_NB)
    adj26 = [0] * n
    adj6 = [0] * n
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d = np.abs(_NB[i] - _NB[j])
            if d.max() == 1:
                adj26[i] |= 1 << j
            if d.sum() == 1:
                adj6[i] |= 1 << j
    l1 = np.abs(_NB).sum(axis=1)
    n18 = sum(1 << i for i in range(n) if l1[i] <= 2)
    face = sum(1 << i for i in range(n) if l1[i] == 1)
    return adj26, adj6, n18, face


_ADJ26, _ADJ6, _N18, _FACE = _masks()
_SIMPLE_CACHE: dict[int, bool] = {}


def _components(mask: int, adj: list[int], seeds: int) -> int:
    """Count components of ``mask`` (under ``adj``) that contain a seed bit."""
    count = 0
    todo = mask & seeds
    while todo:
        low = todo & -todo
        comp = low
        frontier = low
        while frontier:
            b = frontier & -frontier
            frontier ^= b
            new = adj[b.bit_length() - 1] & mask & ~comp
            comp |= new
            frontier |= new
        count += 1
        todo &= ~comp
    return count


def is_simple(code: int) -> bool:
    """Whether the centre of a 3x3x3 neighbourhood is a simple point for
    (26, 6) connectivity. ``code`` has bit i set when neighbour ``_NB[i]`` is
    foreground. Simple means exactly one 26-component of foreground among the
    26 neighbours and exactly one 6-component of background within the 18-
    neighbourhood that touches a face neighbour."""
    hit = _SIMPLE_CACHE.get(code)
    if hit is not None:
        return hit
    full = (1 << 26) - 1
    ok = (code != 0
          and _components(code, _ADJ26, full) == 1
          and _components(~code & _N18, _ADJ6, _FACE) == 1)
    _SIMPLE_CACHE[code] = ok
    return ok


_DIRECTIONS = [(0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0), (-1, 0, 0), (1, 0, 0)]


def thin(mask: np.ndarray) -> np.ndarray:
    """Curve thinning of a boolean volume by directional simple-point removal.

    Each pass sweeps the six face directions. A sweep collects the border
    voxels open towards that direction that are simple and not curve ends
    (exactly one neighbour), then visits them in index order and deletes each
    one that is still simple at that moment. Deleting
    one simple point at a time keeps the 26/6 topology of the set. Stops when
    a full pass deletes nothing. Voxels on the array boundary are never
    touched, so callers should pad by one.
    """
    vol = np.ascontiguousarray(mask, dtype=np.uint8).copy()
    shape = vol.shape
    if min(shape) < 3:
        return vol.astype(bool)
    strides = np.array([shape[1] * shape[2], shape[2], 1], dtype=np.int64)
    offs = (_NB @ strides).tolist()
    interior = np.zeros(shape, dtype=bool)
    interior[1:-1, 1:-1, 1:-1] = True
    flat = vol.reshape(-1)
    weights = (np.int64(1) << np.arange(26, dtype=np.int64))
    changed = True
    while changed:
        changed = False
        for d in _DIRECTIONS:
            step = int(np.dot(d, strides))
            idx = np.flatnonzero(flat.astype(bool) & interior.reshape(-1))
            if not len(idx):
                return vol.astype(bool)
            idx = idx[flat[idx + step] == 0]
            if not len(idx):
                continue
            nbr = flat[idx[:, None] + np.array(offs)[None, :]].astype(np.int64)
            codes = nbr @ weights
            keep = nbr.sum(axis=1) > 1
            idx, codes = idx[keep], codes[keep]
            uniq, inv = np.unique(codes, return_inverse=True)
            simple = np.array([is_simple(int(c)) for c in uniq], dtype=bool)
            cand = idx[simple[inv]]
            for p in cand.tolist():
                code = 0
                for i, o in enumerate(offs):
                    if flat[p + o]:
                        code |= 1 << i
                if is_simple(code):
                    flat[p] = 0
                    changed = True
    return vol.astype(bool)


def threshold_grid(prob_grid: OccupancyGrid, tau: float = DEFAULT_TAU) -> OccupancyGrid:
    """Voxels with probability >= tau become 1."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    vals = (prob_grid.values >= tau).astype(np.uint8)
    return OccupancyGrid(vals, prob_grid.origin, prob_grid.spacing)


def skeletonize(binary_grid: OccupancyGrid) -> VoxelSkeleton:
    """Topology-preserving 3D thinning (26/6 connectivity) to a curve skeleton.

    Work happens on the foreground bounding box plus a one-voxel margin.
    """
    mask = binary_grid.values > 0
    empty = VoxelSkeleton(binary_grid.dims, binary_grid.origin, binary_grid.spacing,
                          np.zeros((0, 3), dtype=np.int64))
    if not mask.any():
        return empty
    nz = np.argwhere(mask)
    lo = np.maximum(nz.min(axis=0) - 1, 0)
    hi = np.minimum(nz.max(axis=0) + 2, mask.shape)
    crop = np.zeros(tuple(hi - lo + 2), dtype=bool)
    crop[1:-1, 1:-1, 1:-1] = mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    kept = thin(crop)
    vox = np.argwhere(kept[1:-1, 1:-1, 1:-1]) + lo
    empty.voxels = vox.astype(np.int64)
    return empty


def skeleton_to_graph(skeleton: VoxelSkeleton) -> SpatialGraph:
    """Connect skeleton voxels into a graph.

    Candidate edges join 26-adjacent voxels and are ranked by step length,
    then lexicographically by voxel pair. Shortest edges first span each
    component; a remaining edge survives only if its cycle is not filled in by
    triangles of mutually adjacent voxels. Every diagonal shortcut across a
    face/edge step is dropped this way while genuine loops of the voxel set are
    kept, so the graph's Betti numbers equal those of the skeleton.
    """
    vox = np.asarray(skeleton.voxels, dtype=np.int64).reshape(-1, 3)
    if len(vox) == 0:
        return SpatialGraph.empty()
    order = np.lexsort(vox.T[::-1])
    vox = vox[order]
    nodes = skeleton.origin + skeleton.spacing * vox.astype(np.float64)

    dims = np.array(skeleton.dims, dtype=np.int64) + 2
    key = _linear(vox + 1, dims)
    pairs, lens = [], []
    for off in _FORWARD:
        nb = _linear(vox + 1 + off, dims)
        pos = np.searchsorted(key, nb)
        pos = np.minimum(pos, len(key) - 1)
        hit = key[pos] == nb
        src = np.flatnonzero(hit)
        pairs.append(np.stack([src, pos[hit]], axis=1))
        lens.append(np.full(len(src), int(off @ off)))
    pairs = np.concatenate(pairs)
    lens = np.concatenate(lens)
    if len(pairs) == 0:
        return SpatialGraph.from_arrays(nodes, np.zeros((0, 2)))
    pairs = np.sort(pairs, axis=1)
    rank = np.lexsort((pairs[:, 1], pairs[:, 0], lens))
    pairs = pairs[rank]
    edge_id = {(int(u), int(v)): e for e, (u, v) in enumerate(pairs.tolist())}

    # spanning forest from the shortest edges
    uf = _UnionFind(len(vox))
    positive = []
    keep = np.zeros(len(pairs), dtype=bool)
    for e, (u, v) in enumerate(pairs.tolist()):
        if uf.union(u, v):
            keep[e] = True
        else:
            positive.append(e)

    # reduce triangle boundaries; a positive edge that ends up as the pivot of
    # a reduced boundary only closes a filled cycle
    adj = [[] for _ in range(len(vox))]
    for u, v in pairs.tolist():
        adj[u].append(v)
        adj[v].append(u)
    nbrs = [set(a) for a in adj]
    pivots: dict[int, frozenset] = {}
    for u, v in pairs.tolist():
        for w in nbrs[u] & nbrs[v]:
            if w <= v:
                continue
            col = {edge_id[(u, v)], edge_id[(u, w)], edge_id[(v, w)]}
            while col:
                p = max(col)
                other = pivots.get(p)
                if other is None:
                    pivots[p] = frozenset(col)
                    break
                col ^= other
    for e in positive:
        if e not in pivots:
            keep[e] = True
    return SpatialGraph.from_arrays(nodes, pairs[keep])


def _linear(idx: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]


def prune_components(graph: SpatialGraph, min_nodes: int) -> SpatialGraph:
    """Drop connected components with fewer than ``min_nodes`` nodes."""
    if min_nodes < 0:
        raise ValueError("min_nodes must be non-negative")
    if min_nodes == 0 or graph.n_nodes == 0:
        return graph
    labels = component_labels(graph)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return subgraph(graph, counts[inverse] >= min_nodes)


def collapse_chains(graph: SpatialGraph) -> SpatialGraph:
    """Optional pass: splice out degree-2 nodes where that creates no duplicate
    edge. Betti numbers are unchanged."""
    adj = [set() for _ in range(graph.n_nodes)]
    for i, j in graph.edges.tolist():
        adj[i].add(j)
        adj[j].add(i)
    alive = np.ones(graph.n_nodes, dtype=bool)
    for v in range(graph.n_nodes):
        if len(adj[v]) != 2:
            continue
        a, b = sorted(adj[v])
        if b in adj[a]:
            continue
        adj[a].discard(v)
        adj[b].discard(v)
        adj[a].add(b)
        adj[b].add(a)
        adj[v].clear()
        alive[v] = False
    edges = sorted({(min(i, j), max(i, j)) for i in range(graph.n_nodes) for j in adj[i]})
    remap = np.cumsum(alive) - 1
    e = remap[np.array(edges, dtype=np.int64).reshape(-1, 2)]
    return SpatialGraph.from_arrays(graph.nodes[alive], e)


def extract_graph(prob_grid: OccupancyGrid, tau: float = DEFAULT_TAU,
                  min_component: int = 0, simplify: bool = False) -> SpatialGraph:
    """threshold -> skeletonize -> skeleton_to_graph -> prune_components."""
    skel = skeletonize(threshold_grid(prob_grid, tau))
    g = prune_components(skeleton_to_graph(skel), min_component)
    return collapse_chains(g) if simplify else g
