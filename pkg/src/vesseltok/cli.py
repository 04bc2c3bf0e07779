"""Command-line front end.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime or numeric
failure, 3 a round trip that ran fine but changed the topology.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .diffkit import NumericError
from .extract import CHUNKED_MIN_COMPONENT, DEFAULT_TAU, extract_graph
from .field import (
    DEFAULT_CHUNK,
    DEFAULT_RADIUS,
    DESK_GRID,
    CapacityError,
    FieldConfig,
    OccupancyGrid,
    load_grid,
    rasterize,
    save_grid,
)
from .graph import SpatialGraph, betti_numbers, load_graph, save_graph
from .metrics import MetricsConfig, evaluate, reports_to_csv
from .synth import KINDS, synth_graph
from .tokenizer import (
    ConfigError,
    ModelConfig,
    TrainSchedule,
    compression_ratio,
    decode_grid,
    encode,
    load_checkpoint,
    load_tokens,
    read_kv_config,
    save_checkpoint,
    save_tokens,
    train,
    write_history_csv,
)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_TOPOLOGY = 0, 1, 2, 3


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument helpers

def grid_dims(text: str) -> tuple[int, int, int]:
    parts = [int(p) for p in str(text).split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"grid must be N or X,Y,Z with positive sizes: {text}")
    return tuple(parts)


def float_list(text: str) -> list[float]:
    return [float(p) for p in str(text).split(",") if p.strip()]


def int_list(text: str) -> list[int]:
    return [int(p) for p in str(text).split(",") if p.strip()]


def _graphs_from(paths) -> list[tuple[str, SpatialGraph]]:
    out = []
    for p in map(Path, paths):
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        for f in files:
            if f.name == "manifest.json":
                continue
            out.append((f.stem, load_graph(f)))
    if not out:
        raise UsageError("no graph files found")
    return out


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _field(args) -> FieldConfig:
    return FieldConfig(args.radius, args.grid, args.chunk)


def _model_config(args, base: ModelConfig | None = None) -> ModelConfig:
    base = base or ModelConfig()
    if getattr(args, "config", None):
        kv = read_kv_config(args.config)
        keys = {f for f in base.to_dict()}
        base = ModelConfig.from_dict({**base.to_dict(), **{k: v for k, v in kv.items() if k in keys}})
    upd = {}
    if getattr(args, "k", None) is not None:
        upd["token_count"] = args.k
    if getattr(args, "c", None) is not None:
        upd["channel_dim"] = args.c
    if getattr(args, "lambda_kl", None) is not None:
        upd["kl_weight"] = args.lambda_kl
    if getattr(args, "seed", None) is not None:
        upd["seed"] = args.seed
    return ModelConfig.from_dict({**base.to_dict(), **upd})


def _schedule(args) -> TrainSchedule:
    d = {}
    if getattr(args, "config", None):
        kv = read_kv_config(args.config)
        keys = set(TrainSchedule.__dataclass_fields__)
        d.update({k: v for k, v in kv.items() if k in keys and k != "seed"})
    for flag, key in (("epochs", "epochs"), ("lr_peak", "lr_peak"), ("lr_min", "lr_min"),
                      ("radius", "radius"), ("queries", "n_queries"), ("seed", "seed"),
                      ("warmup", "warmup_steps")):
        v = getattr(args, flag, None)
        if v is not None:
            d[key] = v
    if getattr(args, "no_augment", False):
        d["augment"] = False
    return TrainSchedule.from_dict(d)


def _check_ckpt_flags(args, cfg: ModelConfig) -> None:
    for flag, have in (("k", cfg.token_count), ("c", cfg.channel_dim)):
        want = getattr(args, flag, None)
        if want is not None and want != have:
            raise ConfigError(f"--{flag} {want} does not match the checkpoint ({have})")


def _print_report(case: str, rep) -> None:
    print(f"{case}: clDice {rep.cldice:.4f} ({100 * rep.cldice:.2f}%)  "
          f"CD {rep.chamfer:.5f}  |d_beta0| {rep.delta_beta0}  |d_beta1| {rep.delta_beta1}"
          + ("" if rep.kappa is None else f"  kappa {rep.kappa:.3f}"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    params = json.loads(args.params) if args.params else {}
    out = _out_dir(args.out)
    manifest = []
    for i in range(args.count):
        seed = args.seed + i
        if args.kind == "multi":
            g = pipeline.multi_component(seed)
        else:
            g = synth_graph(args.kind, params, seed)
        name = f"{args.kind}_{i:04d}.json"
        save_graph(g, out / name)
        manifest.append({"file": name, "kind": args.kind, "params": params, "seed": seed,
                         "betti": list(betti_numbers(g))})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {args.count} graphs to {out}")
    return EXIT_OK


def cmd_rasterize(args) -> int:
    g = load_graph(args.graph)
    grid = rasterize(g, _field(args))
    save_grid(grid, args.out)
    print(f"{args.out}: {int(grid.values.sum())} occupied voxels of {grid.values.size}")
    return EXIT_OK


def cmd_roundtrip(args) -> int:
    g = load_graph(args.graph)
    if g.n_nodes == 0:
        raise UsageError(f"{args.graph}: graph is empty")
    if args.chunked:
        mc = args.min_component if args.min_component is not None else CHUNKED_MIN_COMPONENT
        out, rep = pipeline.chunked_roundtrip(g, args.radius, args.grid, args.chunked,
                                              args.tau, mc)
    else:
        out, rep = pipeline.roundtrip(g, args.radius, args.grid, args.tau,
                                      args.min_component or 0, args.chunk)
    case = Path(args.graph).stem
    _print_report(case, rep)
    if args.out:
        reports_to_csv([(case, rep)], args.out, append=True)
    if args.graph_out:
        save_graph(out, args.graph_out)
    return EXIT_OK if rep.delta_beta0 == 0 and rep.delta_beta1 == 0 else EXIT_TOPOLOGY


def cmd_train(args) -> int:
    graphs = [g for _, g in _graphs_from(args.graphs)]
    cfg = _model_config(args)
    sched = _schedule(args)
    res = train(graphs, cfg, sched, log_every=args.log_every)
    out = Path(args.out)
    save_checkpoint(res.params, cfg, out, {"node_counts": [g.n_nodes for g in graphs]})
    hist = Path(args.history) if args.history else out.with_suffix(".loss.csv")
    write_history_csv(res.history, hist)
    print(f"wrote {out} and {hist}; final loss {res.history[-1]['total']:.6f}")
    return EXIT_OK


def cmd_encode(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    _check_ckpt_flags(args, cfg)
    lat = encode(load_graph(args.graph).nodes, cfg, params)
    save_tokens(lat, args.out)
    print(f"{args.out}: {cfg.token_count} x {cfg.channel_dim} tokens")
    return EXIT_OK


def cmd_decode(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    _check_ckpt_flags(args, cfg)
    lat = load_tokens(args.tokens)
    if lat.mu.shape != (cfg.token_count, cfg.channel_dim):
        raise ConfigError(f"token shape {lat.mu.shape} does not match the checkpoint "
                          f"({cfg.token_count}, {cfg.channel_dim})")
    grid = decode_grid(lat.mu, OccupancyGrid.cube(args.grid, dtype=np.float32), cfg, params)
    grid = OccupancyGrid(grid.values.astype(np.float32), grid.origin, grid.spacing)
    save_grid(grid, args.out)
    print(f"{args.out}: probability grid {grid.dims}")
    return EXIT_OK


def cmd_extract(args) -> int:
    grid = load_grid(args.grid_file)
    g = extract_graph(grid, args.tau, args.min_component, simplify=args.simplify)
    save_graph(g, args.out)
    b = betti_numbers(g)
    print(f"{args.out}: {g.n_nodes} nodes, {g.n_edges} edges, betti ({b.beta0}, {b.beta1})")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred, gt = load_graph(args.pred), load_graph(args.gt)
    kappa = None
    if args.k is not None and args.c is not None:
        kappa = compression_ratio([gt.n_nodes], args.k, args.c)
    mc = MetricsConfig(radius=args.radius, grid_dims=args.grid, tau=args.tau, chunk_edge=args.chunk)
    rep = evaluate(pred, gt, mc, kappa)
    case = args.case or Path(args.pred).stem
    _print_report(case, rep)
    if args.out:
        reports_to_csv([(case, rep)], args.out, append=True)
    return EXIT_OK


def cmd_ablate_radius(args) -> int:
    radii = args.radius
    if not radii:
        raise UsageError("--radius needs at least one value")
    if any(r <= 0 for r in radii):
        raise UsageError("radii must be positive")
    graphs = ([g for _, g in _graphs_from(args.graphs)] if args.graphs
              else pipeline.radius_phantoms())
    rows = pipeline.ablate_radius(graphs, radii, args.grid, args.tau, check_trend=False)
    lines = ["radius,mean_d_beta0,mean_d_beta1,mean_cldice,failures,cases"]
    for r in rows:
        lines.append(f"{r.radius!r},{r.mean_d_beta0!r},{r.mean_d_beta1!r},"
                     f"{r.mean_cldice!r},{r.failures},{r.cases}")
        print(f"r={r.radius:<6} |d_beta1| {r.mean_d_beta1:.3f}  |d_beta0| {r.mean_d_beta0:.3f}  "
              f"clDice {r.mean_cldice:.4f}  failures {r.failures}/{r.cases}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    if len(rows) > 1:
        by_r = sorted(rows, key=lambda x: x.radius)
        errs = [x.mean_d_beta1 for x in by_r]
        if any(lo > hi for lo, hi in zip(errs, errs[1:])):
            print("loop error does not shrink with the radius", file=sys.stderr)
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_ablate_latent(args) -> int:
    if not args.k or not args.c:
        raise UsageError("--k and --c need at least one value each")
    graphs = ([g for _, g in _graphs_from(args.graphs)] if args.graphs
              else pipeline.toy_dataset(args.count, args.seed))
    base = _model_config(argparse.Namespace(seed=args.seed, lambda_kl=args.lambda_kl,
                                            config=None))
    sched = _schedule(args)
    rows = pipeline.ablate_latent(graphs, args.k, args.c, base, sched, args.grid, args.tau)
    lines = ["K,C,cldice,cldice_pct,chamfer,d_beta0,d_beta1,kappa"]
    for r in rows:
        lines.append(f"{r.K},{r.C},{r.mean_cldice!r},{100 * r.mean_cldice!r},{r.mean_chamfer!r},"
                     f"{r.mean_d_beta0!r},{r.mean_d_beta1!r},{r.kappa!r}")
        print(f"K={r.K:<4} C={r.C:<3} clDice {100 * r.mean_cldice:6.2f}%  CD {r.mean_chamfer:.4f}  "
              f"kappa {r.kappa:.3f}")
    ref = pipeline.FULL_SCALE_LATENT_ROW
    print(f"full-scale reference: K={ref['K']} C={ref['C']} clDice {ref['cldice_pct']}% "
          f"kappa {ref['kappa']}")
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_field(p, grid=DESK_GRID):
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--grid", type=grid_dims, default=grid_dims(str(grid)))
    p.add_argument("--chunk", type=int, default=DEFAULT_CHUNK)


def _add_train(p):
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--lambda-kl", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr-peak", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--queries", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vesseltok", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic centerline graphs")
    p.add_argument("--kind", choices=KINDS + ("multi",), required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--params", help="generator parameters as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rasterize", help="graph JSON -> occupancy grid")
    p.add_argument("graph")
    _add_field(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("roundtrip", help="rasterize, extract and score one graph")
    p.add_argument("graph")
    _add_field(p)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--chunked", type=int, metavar="N", help="process N^3-voxel crops")
    p.add_argument("--min-component", type=int)
    p.add_argument("--out", help="append the report to this CSV")
    p.add_argument("--graph-out", help="write the extracted graph here")
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("train", help="train the tokenizer")
    p.add_argument("graphs", nargs="+", help="graph files or directories")
    _add_train(p)
    p.add_argument("--radius", type=float)
    p.add_argument("--config", help="key = value file with model/schedule settings")
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--history", help="loss CSV path (default: next to the checkpoint)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="graph -> token file")
    p.add_argument("checkpoint")
    p.add_argument("graph")
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="token file -> probability grid")
    p.add_argument("checkpoint")
    p.add_argument("tokens")
    p.add_argument("--grid", type=grid_dims, default=grid_dims("64"))
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("extract", help="probability grid -> graph JSON")
    p.add_argument("grid_file")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--min-component", type=int, default=0)
    p.add_argument("--simplify", action="store_true", help="collapse degree-2 chains")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="score a predicted graph against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    _add_field(p)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--k", type=int)
    p.add_argument("--c", type=int)
    p.add_argument("--case")
    p.add_argument("--out", help="append the report to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-radius", help="pseudo-radius sweep over round trips")
    p.add_argument("graphs", nargs="*", help="graph files (default: built-in phantoms)")
    p.add_argument("--radius", type=float_list, default=list(pipeline.ABLATION_RADII))
    p.add_argument("--grid", type=grid_dims, default=grid_dims("256"))
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate_radius)

    p = sub.add_parser("ablate-latent", help="token count / width sweep")
    p.add_argument("graphs", nargs="*", help="graph files (default: toy dataset)")
    p.add_argument("--k", type=int_list, default=[8, 16, 32])
    p.add_argument("--c", type=int_list, default=[4])
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--lambda-kl", type=float)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr-peak", type=float)
    p.add_argument("--lr-min", type=float)
    p.add_argument("--queries", type=int, default=512)
    p.add_argument("--radius", type=float, default=0.04)
    p.add_argument("--grid", type=grid_dims, default=grid_dims("64"))
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate_latent)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except (NumericError, CapacityError, MemoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
