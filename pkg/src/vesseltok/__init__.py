"""Centerline graphs as occupancy fields, a set-latent tokenizer for them, and
the extraction and metrics needed to get graphs back out."""

from .extract import extract_graph, skeleton_to_graph, skeletonize, threshold_grid
from .field import (
    FieldConfig,
    OccupancyGrid,
    QuerySet,
    load_grid,
    rasterize,
    sample_queries,
    save_grid,
)
from .graph import SpatialGraph, betti_numbers, load_graph, normalize_graph, save_graph
from .metrics import MetricsConfig, MetricsReport, chamfer, cldice, evaluate
from .synth import synth_graph
from .tokenizer import (
    LatentTokens,
    ModelConfig,
    TrainSchedule,
    compression_ratio,
    decode,
    decode_grid,
    encode,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "FieldConfig", "LatentTokens", "MetricsConfig", "MetricsReport", "ModelConfig",
    "OccupancyGrid", "QuerySet", "SpatialGraph", "TrainSchedule", "betti_numbers", "chamfer",
    "cldice", "compression_ratio", "decode", "decode_grid", "encode", "evaluate",
    "extract_graph", "load_checkpoint", "load_graph", "load_grid", "normalize_graph",
    "rasterize", "sample_queries", "save_checkpoint", "save_graph", "save_grid",
    "skeleton_to_graph", "skeletonize", "synth_graph", "threshold_grid", "train",
]
