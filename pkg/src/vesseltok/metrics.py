"""Reconstruction metrics: clDice, Chamfer distance, Betti errors."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .extract import DEFAULT_TAU, skeletonize
from .field import (
    DEFAULT_CHUNK,
    DEFAULT_RADIUS,
    DESK_GRID,
    FieldConfig,
    OccupancyGrid,
    rasterize,
)
from .graph import SpatialGraph, betti_numbers

CSV_COLUMNS = ("case", "cldice", "cldice_pct", "chamfer", "d_beta0", "d_beta1", "kappa")


@dataclass(frozen=True)
class MetricsConfig:
    epsilon: float = 1e-8
    radius: float = DEFAULT_RADIUS
    grid_dims: tuple[int, int, int] = (DESK_GRID,) * 3
    tau: float = DEFAULT_TAU
    chunk_edge: int = DEFAULT_CHUNK

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def field_config(self) -> FieldConfig:
        return FieldConfig(self.radius, self.grid_dims, self.chunk_edge)


@dataclass(frozen=True)
class MetricsReport:
    cldice: float
    chamfer: float
    delta_beta0: int
    delta_beta1: int
    topo_precision: float
    topo_sensitivity: float
    kappa: float | None = None

    def row(self, case: str) -> dict:
        return {
            "case": case,
            "cldice": repr(float(self.cldice)),
            "cldice_pct": repr(100.0 * float(self.cldice)),
            "chamfer": repr(float(self.chamfer)),
            "d_beta0": str(int(self.delta_beta0)),
            "d_beta1": str(int(self.delta_beta1)),
            "kappa": "" if self.kappa is None else repr(float(self.kappa)),
        }


def harmonic_mean(a: float, b: float) -> float:
    return 2.0 * a * b / (a + b) if a + b > 0 else 0.0


def cldice(pred: OccupancyGrid, gt: OccupancyGrid, config: MetricsConfig | None = None):
    """Centerline Dice between two binary grids on the same lattice.

    Returns (clDice, topology precision, topology sensitivity).
    """
    eps = (config or MetricsConfig()).epsilon
    if pred.dims != gt.dims:
        raise ValueError(f"grid dims differ: {pred.dims} vs {gt.dims}")
    if pred.spacing != gt.spacing:
        raise ValueError(f"grid spacing differs: {pred.spacing} vs {gt.spacing}")
    for name, g in (("pred", pred), ("gt", gt)):
        if not np.isin(g.values, (0, 1)).all():
            raise ValueError(f"{name} grid is not binary")
    omega_hat = pred.values > 0
    omega = gt.values > 0
    v_hat = skeletonize(pred).to_grid().values > 0
    v = skeletonize(gt).to_grid().values > 0
    t_prec = (np.count_nonzero(v_hat & omega) + eps) / (np.count_nonzero(v_hat) + eps)
    t_sens = (np.count_nonzero(v & omega_hat) + eps) / (np.count_nonzero(v) + eps)
    return harmonic_mean(t_prec, t_sens), t_prec, t_sens


def chamfer(points_a, points_b) -> float:
    """Symmetric mean of unsquared nearest-neighbour distances:
    0.5 * (mean_a min_b |a - b| + mean_b min_a |a - b|)."""
    a = np.asarray(points_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(points_b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    dab, _ = cKDTree(b).query(a, k=1)
    dba, _ = cKDTree(a).query(b, k=1)
    return 0.5 * (float(np.mean(dab)) + float(np.mean(dba)))


def betti_error(pred: SpatialGraph, gt: SpatialGraph) -> tuple[int, int]:
    bp, bg = betti_numbers(pred), betti_numbers(gt)
    return abs(bp.beta0 - bg.beta0), abs(bp.beta1 - bg.beta1)


def evaluate(pred: SpatialGraph, gt: SpatialGraph, config: MetricsConfig | None = None,
             kappa: float | None = None) -> MetricsReport:
    """Render both graphs at the configured pseudo-radius and grid, then score.

    Chamfer runs on occupied voxel centres; it is ``inf`` if either field is
    empty.
    """
    config = config or MetricsConfig()
    fc = config.field_config()
    pg = rasterize(pred, fc)
    gg = rasterize(gt, fc)
    cl, tp, ts = cldice(pg, gg, config)
    pa, pb = pg.occupied_centers(), gg.occupied_centers()
    cd = chamfer(pa, pb) if len(pa) and len(pb) else float("inf")
    db0, db1 = betti_error(pred, gt)
    return MetricsReport(cl, cd, db0, db1, tp, ts, kappa)


def reports_to_csv(reports, path=None, append: bool = False) -> str:
    """Write (case, report) pairs with the fixed column order; returns the text."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    path = Path(path) if path is not None else None
    if not (append and path is not None and path.exists() and path.stat().st_size):
        w.writeheader()
    for case, rep in reports:
        w.writerow(rep.row(case))
    text = buf.getvalue()
    if path is not None:
        with open(path, "a" if append else "w") as f:
            f.write(text)
    return text


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)
