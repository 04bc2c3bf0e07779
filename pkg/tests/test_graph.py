import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vesseltok.graph import (
    BettiPair,
    GraphFormatError,
    GraphValidationError,
    SpatialGraph,
    betti_numbers,
    farthest_point_sampling,
    load_graph,
    normalize_graph,
    save_graph,
    segment_segment_distance,
)
from vesseltok.synth import expected_betti, hairpin, synth_graph


def test_roundtrip_two_nodes(tmp_path):
    g = SpatialGraph.from_arrays([[0.1, 0.2, 0.3], [-0.5, 1 / 3, 0.7]], [[0, 1]])
    save_graph(g, tmp_path / "g.json")
    h = load_graph(tmp_path / "g.json")
    assert h == g
    assert h.nodes.tobytes() == g.nodes.tobytes()


def test_out_of_range_edge_names_edge(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps(
        {"nodes": [[0, 0, 0], [1, 0, 0], [0, 1, 0]], "edges": [[0, 5]]}))
    with pytest.raises(GraphValidationError, match=r"\(0, 5\)"):
        load_graph(tmp_path / "bad.json")


def test_malformed_json_reports_line(tmp_path):
    (tmp_path / "bad.json").write_text('{"nodes": [[0,0,0]],\n "edges": [[0,1]\n')
    with pytest.raises(GraphFormatError, match="line"):
        load_graph(tmp_path / "bad.json")


def test_single_isolated_node_is_valid(tmp_path):
    g = SpatialGraph.from_arrays([[0.0, 0.0, 0.0]], [])
    save_graph(g, tmp_path / "g.json")
    assert load_graph(tmp_path / "g.json") == g
    assert betti_numbers(g) == (1, 0)


def test_edges_stored_sorted(tmp_path):
    g = SpatialGraph.from_arrays(np.zeros((3, 3)) + np.arange(3)[:, None], [[2, 0], [1, 2]])
    assert g.edges.tolist() == [[0, 2], [1, 2]]
    save_graph(g, tmp_path / "g.json")
    doc = json.loads((tmp_path / "g.json").read_text())
    assert all(i < j for i, j in doc["edges"])


@pytest.mark.parametrize("edges", [[[0, 0]], [[0, 1], [1, 0]]])
def test_invalid_edges(edges):
    with pytest.raises(GraphValidationError):
        SpatialGraph.from_arrays(np.eye(3), edges)


def test_nonfinite_rejected():
    with pytest.raises(GraphValidationError):
        SpatialGraph.from_arrays([[0, np.nan, 0]], [])


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from(["tree", "loop", "parallel-tubes", "grid"]),
       seed=st.integers(0, 10_000))
def test_save_load_identity_on_synth(tmp_path_factory, kind, seed):
    g = synth_graph(kind, {}, seed)
    p = tmp_path_factory.mktemp("g") / "g.json"
    save_graph(g, p)
    h = load_graph(p)
    assert h == g
    assert h.meta == json.loads(json.dumps(g.meta))


# --- normalization

def test_normalize_symmetric_pair():
    g = normalize_graph(SpatialGraph.from_arrays([[0, 0, 0], [2, 0, 0]], [[0, 1]]))
    assert g.nodes.tolist() == [[-1, 0, 0], [1, 0, 0]]
    assert g.edges.tolist() == [[0, 1]]


def test_normalize_single_node():
    g = normalize_graph(SpatialGraph.from_arrays([[5, 5, 5]]))
    assert g.nodes.tolist() == [[0, 0, 0]]


def test_normalize_three_nodes_direct_arithmetic():
    pts = np.array([[0, 0, 0], [1, 2, 0], [2, 0, 0]], dtype=float)
    g = normalize_graph(SpatialGraph.from_arrays(pts))
    c = pts.mean(axis=0)  # (1, 2/3, 0)
    expected = (pts - c) / np.max(np.abs(pts - c))  # scale 4/3
    np.testing.assert_allclose(g.nodes, expected, rtol=0, atol=1e-15)
    assert np.all(np.abs(g.nodes.mean(axis=0)) <= 1e-12)
    assert np.max(np.abs(g.nodes)) == 1.0


def test_normalize_empty_raises():
    with pytest.raises(GraphValidationError):
        normalize_graph(SpatialGraph.empty())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e3, 1e3)] * 3), min_size=1, max_size=30))
def test_normalize_properties(pts):
    g = SpatialGraph.from_arrays(pts)
    n = normalize_graph(g)
    assert np.all(np.abs(n.nodes.mean(axis=0)) <= 1e-12)
    m = np.max(np.abs(n.nodes))
    assert m == 1.0 or m == 0.0
    nn = normalize_graph(n)
    assert nn.nodes.tobytes() == n.nodes.tobytes()


# --- farthest point sampling

def _fps_bruteforce(pts, k):
    """Direct restatement: start farthest from centroid, then repeatedly take
    the point with the largest min distance; lowest index on ties."""
    c = [sum(p[d] for p in pts) / len(pts) for d in range(3)]
    dist = lambda a, b: sum((a[d] - b[d]) ** 2 for d in range(3))
    best = max(range(len(pts)), key=lambda i: (dist(pts[i], c), -i))
    sel = [best]
    while len(sel) < k:
        cand = [i for i in range(len(pts)) if i not in sel]
        sel.append(max(cand, key=lambda i: (min(dist(pts[i], pts[j]) for j in sel), -i)))
    return sel


def test_fps_collinear():
    pts = [[x, 0, 0] for x in range(11)]
    assert _fps_bruteforce(pts, 3) == [0, 10, 5]
    assert farthest_point_sampling(pts, 3).tolist() == [0, 10, 5]


def test_fps_all_and_one():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(9, 3))
    assert sorted(farthest_point_sampling(pts, 9).tolist()) == list(range(9))
    c = pts.mean(axis=0)
    assert farthest_point_sampling(pts, 1).tolist() == [int(np.argmax(((pts - c) ** 2).sum(1)))]


@pytest.mark.parametrize("k", [0, 4])
def test_fps_k_out_of_range(k):
    with pytest.raises(ValueError):
        farthest_point_sampling(np.zeros((3, 3)), k)


@pytest.mark.parametrize("seed", range(20))
def test_fps_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    pts = rng.integers(-3, 4, size=(15, 3)).astype(float)  # many ties
    k = int(rng.integers(1, 16))
    assert farthest_point_sampling(pts, k).tolist() == _fps_bruteforce(pts.tolist(), k)


@pytest.mark.parametrize("seed", range(10))
def test_fps_permutation_covariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(25, 3))  # continuous, so no ties
    perm = rng.permutation(25)
    a = farthest_point_sampling(pts, 8)
    b = farthest_point_sampling(pts[perm], 8)
    assert perm[b].tolist() == a.tolist()


def test_fps_duplicates_distinct():
    pts = np.array([[0, 0, 0], [1, 0, 0]] * 3, dtype=float)
    sel = farthest_point_sampling(pts, 6)
    assert sorted(sel.tolist()) == list(range(6))


# --- betti numbers

def test_betti_examples():
    P = np.random.default_rng(0).normal(size=(6, 3))
    path = SpatialGraph.from_arrays(P[:3], [[0, 1], [1, 2]])
    tri = SpatialGraph.from_arrays(P[:3], [[0, 1], [1, 2], [0, 2]])
    two = SpatialGraph.from_arrays(P, [[0, 1], [1, 2], [0, 2], [3, 4], [4, 5], [3, 5]])
    assert betti_numbers(path) == BettiPair(1, 0)
    assert betti_numbers(tri) == BettiPair(1, 1)
    assert betti_numbers(two) == BettiPair(2, 2)
    assert betti_numbers(SpatialGraph.empty()) == (0, 0)


def _betti_dfs(n, edges):
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, comps = set(), 0
    for s in range(n):
        if s in seen:
            continue
        comps += 1
        stack = [s]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            stack.extend(adj[v])
    return comps, len(edges) - n + comps


def test_betti_matches_dfs_on_random_graphs():
    rnd = random.Random(1234)
    for _ in range(1000):
        n = rnd.randint(0, 12)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        edges = rnd.sample(pairs, rnd.randint(0, len(pairs))) if pairs else []
        g = SpatialGraph.from_arrays(np.zeros((n, 3)), edges)
        assert tuple(betti_numbers(g)) == _betti_dfs(n, edges)


# --- synthetic graphs

def test_synth_loop():
    g = synth_graph("loop", {"n_nodes": 16}, 0)
    assert g.n_nodes == 16 and betti_numbers(g) == (1, 1)


def test_synth_tree():
    g = synth_graph("tree", {"depth": 4, "branching": 2}, 0)
    assert g.n_nodes == 31 and betti_numbers(g) == (1, 0)


def test_synth_tubes():
    g = synth_graph("parallel-tubes", {"n_tubes": 2, "separation": 0.1}, 0)
    assert betti_numbers(g) == (2, 0)


def test_synth_grid():
    g = synth_graph("grid", {"nx": 3, "ny": 4}, 0)
    assert betti_numbers(g) == (1, 6)


@pytest.mark.parametrize("kind", ["tree", "loop", "parallel-tubes", "grid"])
@pytest.mark.parametrize("seed", range(5))
def test_synth_in_cube_and_betti(kind, seed):
    g = synth_graph(kind, {}, seed)
    assert np.max(np.abs(g.nodes)) <= 1.0
    assert tuple(betti_numbers(g)) == tuple(g.meta["betti"]) == expected_betti(kind, {})


def test_synth_deterministic():
    assert synth_graph("tree", {}, 5) == synth_graph("tree", {}, 5)


@pytest.mark.parametrize("kind,params", [
    ("tree", {"depth": 0}), ("loop", {"n_nodes": 2}),
    ("parallel-tubes", {"separation": -1}), ("grid", {"nx": 0}),
    ("loop", {"bogus": 1}), ("spiral", {}),
])
def test_synth_invalid(kind, params):
    with pytest.raises(ValueError):
        synth_graph(kind, params, 0)


def test_hairpin_is_one_loop():
    assert betti_numbers(hairpin(0.05)) == (1, 1)


def test_segment_segment_distance():
    assert segment_segment_distance([0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]) == pytest.approx(1)
    assert segment_segment_distance([0, 0, 0], [1, 0, 0], [0.5, -1, 1], [0.5, 1, 1]) == pytest.approx(1)
    assert segment_segment_distance([0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]) == pytest.approx(1)
    assert segment_segment_distance([0, 0, 0], [0, 0, 0], [0, 0, 2], [0, 0, 2]) == pytest.approx(2)
    rng = np.random.default_rng(0)
    for _ in range(50):
        p0, p1, q0, q1 = rng.normal(size=(4, 3))
        t = np.linspace(0, 1, 401)
        A = p0 + t[:, None] * (p1 - p0)
        B = q0 + t[:, None] * (q1 - q0)
        brute = np.min(np.linalg.norm(A[:, None] - B[None], axis=-1))
        d = segment_segment_distance(p0, p1, q0, q1)
        assert d <= brute + 1e-12
        assert brute - d < 0.02
