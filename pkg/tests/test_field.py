import math

import numpy as np
import pytest

from vesseltok.field import (
    CapacityError,
    FieldConfig,
    OccupancyGrid,
    graph_distance,
    load_grid,
    occupancy,
    point_segment_distance,
    rasterize,
    rasterize_bruteforce,
    sample_queries,
    save_grid,
    save_points_obj,
)
from vesseltok.graph import SpatialGraph, rotation_matrix
from vesseltok.synth import synth_graph

SEG = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])


def random_graph(rng, n_max=50):
    n = int(rng.integers(1, n_max + 1))
    P = rng.uniform(-0.9, 0.9, (n, 3))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = int(rng.integers(0, min(len(pairs), 2 * n) + 1)) if pairs else 0
    idx = rng.choice(len(pairs), size=m, replace=False) if m else []
    # keep edges short, like centerline segments
    edges = [pairs[k] for k in idx if np.linalg.norm(P[pairs[k][0]] - P[pairs[k][1]]) < 0.5]
    return SpatialGraph.from_arrays(P, edges)


def test_point_segment_examples():
    assert point_segment_distance([0.5, 0.3, 0], *SEG) == pytest.approx(0.3, abs=1e-15)
    assert point_segment_distance([2, 0, 0], *SEG) == 1.0
    assert point_segment_distance([-1, 1, 0], *SEG) == math.sqrt(2)


def test_point_segment_degenerate():
    assert point_segment_distance([3, 4, 0], [0, 0, 0], [0, 0, 0]) == 5.0


def test_point_segment_vectorized_matches_scalar():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(20, 3))
    a, b = rng.normal(size=(2, 3))
    v = point_segment_distance(p, a, b)
    assert v.shape == (20,)
    for i in range(20):
        assert v[i] == point_segment_distance(p[i], a, b)


def test_graph_distance_isolated_node():
    g = SpatialGraph.from_arrays([[0, 0, 0]])
    assert graph_distance([0, 0, 0.2], g) == pytest.approx(0.2)


def test_graph_distance_shared_node():
    g = SpatialGraph.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1], [0, 2]])
    assert graph_distance([0, 0, 0], g) == 0.0


def test_graph_distance_empty_graph():
    with pytest.raises(ValueError):
        graph_distance([0, 0, 0], SpatialGraph.empty())


def test_graph_distance_bruteforce():
    rng = np.random.default_rng(3)
    P = rng.uniform(-1, 1, (10, 3))
    edges = [(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 4)]
    g = SpatialGraph.from_arrays(P, edges)  # nodes 7, 8, 9 isolated
    pts = rng.uniform(-1, 1, (100, 3))
    d = graph_distance(pts, g)
    for k, p in enumerate(pts):
        cands = []
        for i, j in edges:
            a, b = P[i], P[j]
            t = np.clip(np.dot(p - a, b - a) / np.dot(b - a, b - a), 0, 1)
            cands.append(np.linalg.norm(p - (a + t * (b - a))))
        cands += [np.linalg.norm(p - P[i]) for i in (7, 8, 9)]
        assert d[k] == pytest.approx(min(cands), abs=1e-14)


def test_occupancy_examples():
    g = SpatialGraph.from_arrays(SEG, [[0, 1]])
    assert occupancy([0.5, 0.5, 0], g, 0.5) == 1
    assert occupancy([0.5, 0.500001, 0], g, 0.5) == 0
    assert occupancy([1.05, 0, 0], g, 0.1) == 1
    with pytest.raises(ValueError):
        occupancy([0, 0, 0], g, 0.0)


# --- rasterization

def test_single_node_ball_matches_oracle():
    g = SpatialGraph.from_arrays([[0.01, -0.02, 0.03]])
    grid = OccupancyGrid.cube(32)
    cfg = FieldConfig(2 * grid.spacing, (32, 32, 32), 8)
    out = rasterize(g, cfg)
    ref = rasterize_bruteforce(g, grid, cfg.radius)
    assert np.array_equal(out.values, ref.values)
    assert 20 < out.values.sum() < 60  # ball of radius 2 voxels


@pytest.mark.parametrize("seed", range(6))
def test_synth_graph_matches_oracle(seed):
    g = synth_graph("tree", {"depth": 4}, seed) if seed % 2 else random_graph(
        np.random.default_rng(seed))
    cfg = FieldConfig(0.05, (32, 32, 32), 8)
    out = rasterize(g, cfg)
    ref = rasterize_bruteforce(g, OccupancyGrid.cube(32), 0.05)
    assert np.array_equal(out.values, ref.values)


def test_rasterize_matches_per_voxel_occupancy():
    g = synth_graph("loop", {"n_nodes": 8}, 1)
    out = rasterize(g, FieldConfig(0.1, (12, 12, 12), 5))
    idx = np.indices(out.dims).reshape(3, -1).T
    ref = occupancy(out.centers(idx), g, 0.1).reshape(out.dims)
    assert np.array_equal(out.values, ref)


def test_thin_radius_may_give_empty_grid():
    grid = OccupancyGrid.cube(16)
    h = grid.spacing
    # segment parallel to x, halfway between voxel-centre rows in y and z
    y = grid.origin[1] + 7.5 * h
    g = SpatialGraph.from_arrays([[-0.5, y, y], [0.5, y, y]], [[0, 1]])
    out = rasterize(g, FieldConfig(0.3 * h, (16, 16, 16), 8))
    assert out.values.sum() == 0


def test_grid_layout():
    g = OccupancyGrid.cube(128)
    assert g.spacing == 2 / 128
    assert g.centers([0, 0, 0])[0] == -1 + 1 / 128
    assert g.centers([127, 127, 127])[0] == pytest.approx(1 - 1 / 128)


def test_capacity_error():
    with pytest.raises(CapacityError):
        FieldConfig(0.016, (1 << 20, 1 << 20, 1 << 20))


def test_field_config_validation():
    with pytest.raises(ValueError):
        FieldConfig(-1.0)
    assert FieldConfig(0.1, (16, 16, 16), 64).chunk_edge == 16


def test_monotone_in_radius():
    rng = np.random.default_rng(11)
    for _ in range(5):
        g = random_graph(rng, 20)
        small = rasterize(g, FieldConfig(0.03, (24,) * 3, 8)).values
        big = rasterize(g, FieldConfig(0.06, (24,) * 3, 8)).values
        assert np.all(small <= big)


def test_rigid_motion_equivariance():
    rng = np.random.default_rng(5)
    g = random_graph(rng, 15)
    r = 0.1
    p = rng.uniform(-1, 1, (3000, 3))
    d = graph_distance(p, g)
    R = rotation_matrix(rng)
    t = rng.normal(size=3)
    g2 = g.with_nodes(g.nodes @ R.T + t)
    d2 = graph_distance(p @ R.T + t, g2)
    np.testing.assert_allclose(d, d2, atol=1e-9)
    band = np.abs(d - r) > 1e-9
    assert np.array_equal(occupancy(p, g, r)[band], occupancy(p @ R.T + t, g2, r)[band])


def test_parallel_chunks_identical(monkeypatch):
    g = synth_graph("grid", {}, 2)
    cfg = FieldConfig(0.04, (40, 40, 40), 16)
    a = rasterize(g, cfg)
    monkeypatch.setenv("VESSELTOK_THREADS", "4")
    b = rasterize(g, cfg)
    assert np.array_equal(a.values, b.values)


# --- queries

def test_queries_uniform_only():
    g = synth_graph("loop", {}, 0)
    q = sample_queries(g, 0.016, 500, near_fraction=0.0, seed=1)
    assert q.points.shape == (500, 3)
    assert np.all(np.abs(q.points) <= 1.0)


def test_queries_near_improves_balance():
    g = synth_graph("tree", {}, 0)
    near = sample_queries(g, 0.016, 4096, 0.5, (0.005, 0.05), seed=0)
    uni = sample_queries(g, 0.016, 4096, 0.0, (0.005, 0.05), seed=0)
    assert abs(near.labels.mean() - 0.5) < abs(uni.labels.mean() - 0.5)


def test_query_labels_match_oracle():
    g = synth_graph("grid", {}, 4)
    q = sample_queries(g, 0.03, 2000, 0.5, seed=9)
    for p, y in zip(q.points[::20], q.labels[::20]):
        assert occupancy(p, g, 0.03) == y
    assert np.array_equal(q.labels, occupancy(q.points, g, 0.03))


def test_queries_deterministic_and_errors():
    g = synth_graph("loop", {}, 0)
    a = sample_queries(g, 0.016, 100, seed=3)
    b = sample_queries(g, 0.016, 100, seed=3)
    assert np.array_equal(a.points, b.points)
    with pytest.raises(ValueError):
        sample_queries(g, 0.016, 0)
    with pytest.raises(ValueError):
        sample_queries(g, 0.016, 10, near_fraction=1.5)
    with pytest.raises(ValueError):
        sample_queries(g, 0.016, 10, sigma_range=(0.0, 0.1))


def test_queries_on_isolated_nodes():
    g = SpatialGraph.from_arrays([[0.1, 0.1, 0.1]])
    q = sample_queries(g, 0.05, 200, 1.0, seed=0)
    assert q.labels.sum() > 0


# --- file format

def test_grid_binary_roundtrip(tmp_path):
    g = rasterize(synth_graph("loop", {}, 0), FieldConfig(0.05, (20, 24, 28), 8))
    g.values[3, 4, 5] = 1
    save_grid(g, tmp_path / "g.vtgr")
    h = load_grid(tmp_path / "g.vtgr")
    assert h.dims == (20, 24, 28) and h.values.dtype == np.uint8
    assert np.array_equal(h.values, g.values)
    assert np.array_equal(h.origin, g.origin) and h.spacing == g.spacing
    save_grid(h, tmp_path / "h.vtgr")
    assert (tmp_path / "g.vtgr").read_bytes() == (tmp_path / "h.vtgr").read_bytes()


def test_grid_binary_layout(tmp_path):
    v = np.arange(24, dtype=np.float32).reshape(2, 3, 4) / 24
    g = OccupancyGrid(v, [0.5, -1, 2], 0.25)
    save_grid(g, tmp_path / "p.vtgr")
    raw = (tmp_path / "p.vtgr").read_bytes()
    assert raw[:4] == b"VTGR"
    head = 4 + 4 * 4 + 8 * 4 + 1
    payload = np.frombuffer(raw[head:], "<f4")
    # x fastest: element 1 is voxel (1, 0, 0)
    assert payload[1] == v[1, 0, 0] and payload[2] == v[0, 1, 0]
    h = load_grid(tmp_path / "p.vtgr")
    assert h.values.dtype == np.float32 and np.array_equal(h.values, v)


def test_grid_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError):
        load_grid(tmp_path / "x")


def test_obj_dump(tmp_path):
    save_points_obj(np.eye(3), tmp_path / "p.obj")
    assert (tmp_path / "p.obj").read_text().count("\nv ") == 2
