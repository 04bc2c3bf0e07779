"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line."""

import time
from fractions import Fraction

import numpy as np
import pytest
from conftest import ACCEPTANCE
from phantoms import phantom_suite
from test_field import random_graph

from vesseltok.cli import main
from vesseltok.extract import extract_graph, skeletonize
from vesseltok.field import (
    FieldConfig,
    OccupancyGrid,
    rasterize,
    rasterize_bruteforce,
    sample_queries,
)
from vesseltok.graph import min_clearance
from vesseltok.metrics import MetricsConfig, chamfer, cldice, evaluate, harmonic_mean
from vesseltok.pipeline import (
    ablate_radius,
    multi_component,
    radius_phantoms,
    roundtrip,
    toy_dataset,
)
from vesseltok.synth import synth_graph
from vesseltok.tokenizer import (
    MICRO_CONFIG,
    ModelConfig,
    TrainSchedule,
    compression_ratio,
    decode,
    decode_grid,
    encode,
    init_params,
    kl_divergence,
    loss_gradient_check,
    save_checkpoint,
    train,
)
from vesseltok.voxel_topology import voxel_betti


def record(num, title, ok, detail):
    ACCEPTANCE[num] = (title, bool(ok), detail)
    assert ok, f"criterion {num} ({title}) failed: {detail}"


def test_ac01_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatched = 0
    for _ in range(200):
        g = random_graph(rng)
        r = float(rng.uniform(0.02, 0.12))
        fast = rasterize(g, FieldConfig(r, (32,) * 3, 16))
        slow = rasterize_bruteforce(g, OccupancyGrid.cube(32), r)
        mismatched += int(not np.array_equal(fast.values, slow.values))
    dt = time.perf_counter() - t0
    record(1, "occupancy oracle equivalence", mismatched == 0 and dt < 60,
           f"{mismatched}/200 grids differ, {dt:.1f} s")


def _ac2_graphs():
    out, seed = [], 0
    r = 0.016
    while len(out) < 50:
        kind = ("tree", "loop", "multi")[len(out) % 3]
        g = multi_component(seed) if kind == "multi" else synth_graph(kind, {}, seed)
        seed += 1
        if min_clearance(g) > 4 * r:
            out.append(g)
    return out


def test_ac02_roundtrip_topology():
    t0 = time.perf_counter()
    reps = [roundtrip(g, 0.016, 128)[1] for g in _ac2_graphs()]
    dt = time.perf_counter() - t0
    exact = sum(1 for x in reps if x.delta_beta0 == 0 and x.delta_beta1 == 0)
    mean_cl = float(np.mean([x.cldice for x in reps]))
    record(2, "round-trip topology", exact == 50 and mean_cl >= 0.95 and dt < 600,
           f"{exact}/50 exact Betti, mean clDice {mean_cl:.4f}, {dt:.0f} s")


def test_ac03_radius_direction():
    rows = {x.radius: x for x in ablate_radius(radius_phantoms(), (0.008, 0.016, 0.032), 256,
                                               check_trend=False)}
    e = [rows[r].mean_d_beta1 for r in (0.008, 0.016, 0.032)]
    ok = e[2] >= e[1] >= e[0] and e[2] > e[0] and rows[0.032].failures >= 1
    record(3, "pseudo-radius direction", ok,
           "mean |d_beta1| at 0.008/0.016/0.032 = " + "/".join(f"{v:.2f}" for v in e)
           + f", failures at 0.032: {rows[0.032].failures}")


def test_ac04_gradient_check():
    cfg0 = ModelConfig(**MICRO_CONFIG)
    g = synth_graph("loop", {"n_nodes": 8}, 0)
    qs = sample_queries(g, 0.05, 16, 0.5, seed=1)
    worst = 0.0
    for draw in range(10):
        cfg = ModelConfig(**{**MICRO_CONFIG, "seed": draw})
        params = init_params(cfg)
        eps = np.random.default_rng(100 + draw).normal(size=(cfg0.token_count, cfg0.channel_dim))
        errs = loss_gradient_check(g.nodes, qs.points, qs.labels, cfg, params, eps,
                                   per_tensor=2, seed=draw)
        worst = max(worst, max(errs.values()))
    record(4, "gradient correctness", worst < 1e-4, f"max relative error {worst:.2e} over 10 draws")


# settings of the overfit run; see the README for how they were chosen
OVERFIT_MODEL = dict(token_count=32, channel_dim=4, ff_mult=4)
OVERFIT_SCHEDULE = dict(epochs=2000, lr_peak=3e-3, lr_min=3e-5, warmup_steps=100,
                        radius=0.04, augment=False, near_fraction=0.25)
OVERFIT_GRID = 64


def test_ac05_overfit():
    g = synth_graph("tree", {"depth": 3, "branching": 3}, 0)
    assert g.n_nodes == 40
    cfg = ModelConfig(**OVERFIT_MODEL)
    sched = TrainSchedule(**OVERFIT_SCHEDULE)
    t0 = time.perf_counter()
    res = train([g], cfg, sched)
    lat = encode(g.nodes, cfg, res.params)
    held = sample_queries(g, sched.radius, 4096, 0.5, seed=999)
    pred = decode(lat.mu, held.points, cfg, res.params) >= 0.5
    y = held.labels == 1
    bal = 0.5 * (pred[y].mean() + (~pred[~y]).mean())
    probs = decode_grid(lat.mu, OccupancyGrid.cube(OVERFIT_GRID, dtype=np.float64), cfg, res.params)
    out = extract_graph(probs)
    rep = evaluate(out, g, MetricsConfig(radius=sched.radius, grid_dims=(OVERFIT_GRID,) * 3))
    dt = time.perf_counter() - t0
    record(5, "overfit reconstruction", bal >= 0.95 and rep.cldice >= 0.90 and dt < 1800,
           f"balanced accuracy {bal:.4f}, clDice {rep.cldice:.4f}, {dt:.0f} s")


def test_ac06_kl():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        mu = rng.normal(size=(8, 4))
        lv = rng.normal(size=(8, 4))
        oracle = 0.5 * float(np.sum(mu ** 2 + np.exp(lv) - lv - 1))
        worst = max(worst, abs(kl_divergence(mu, lv).item() - oracle))
    zero = kl_divergence(np.zeros((8, 4)), np.zeros((8, 4))).item()
    record(6, "KL analytics", worst <= 1e-10 and zero == 0.0,
           f"max abs error {worst:.1e}, KL(N(0,I)||N(0,I)) = {zero}")


def test_ac07_compression_ratio(tmp_path):
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(20):
        counts = rng.integers(1, 5000, size=int(rng.integers(1, 10))).tolist()
        K, C = int(rng.integers(1, 600)), int(rng.integers(1, 16))
        hand = Fraction(3 * sum(counts), K * C * len(counts))
        bad += compression_ratio(counts, K, C) != float(hand)
    out = tmp_path / "lat.csv"
    code = main(["ablate-latent", "--k", "8,16", "--c", "2,4", "--count", "2", "--epochs", "1",
                 "--queries", "32", "--grid", "16", "--out", str(out)])
    lines = out.read_text().splitlines()
    head = lines[0].split(",")
    counts = [g.n_nodes for g in toy_dataset(2)]
    cli_bad = 0
    for ln in lines[1:]:
        row = dict(zip(head, ln.split(",")))
        want = float(Fraction(3 * sum(counts), int(row["K"]) * int(row["C"]) * len(counts)))
        cli_bad += float(row["kappa"]) != want
    ok = bad == 0 and code == 0 and cli_bad == 0 and len(lines) == 5
    record(7, "compression ratio", ok, f"{20 - bad}/20 exact, CLI kappa mismatches {cli_bad}")


def test_ac08_thinning_topology():
    suite = phantom_suite()
    bad = []
    for name, grid in suite:
        before = voxel_betti(grid.values)
        after = voxel_betti(skeletonize(grid).to_grid().values)
        if (before.beta0, before.beta1) != (after.beta0, after.beta1):
            bad.append(name)
    record(8, "thinning topology", len(suite) == 30 and not bad,
           f"{30 - len(bad)}/30 phantoms unchanged" + (f", failing {bad}" if bad else ""))


def test_ac09_metric_identities():
    suite = phantom_suite()[:20]
    cl_ok = sum(1 for _, g in suite if g.values.any() and cldice(g, g)[0] == 1.0)
    rng = np.random.default_rng(9)
    worst_self = worst_sym = 0.0
    for _ in range(100):
        a = rng.uniform(-1, 1, (int(rng.integers(1, 300)), 3))
        b = rng.uniform(-1, 1, (int(rng.integers(1, 300)), 3))
        worst_self = max(worst_self, chamfer(a, a))
        worst_sym = max(worst_sym, abs(chamfer(a, b) - chamfer(b, a)))
    hm_bad = 0
    for seed in range(5):
        g = synth_graph("loop", {"n_nodes": 16}, seed)
        pred = g.with_nodes(g.nodes + rng.normal(scale=0.02, size=g.nodes.shape))
        rep = evaluate(pred, g, MetricsConfig(radius=0.04, grid_dims=(48,) * 3))
        hm_bad += abs(rep.cldice - harmonic_mean(rep.topo_precision, rep.topo_sensitivity)) > 1e-12
    ok = cl_ok == 20 and worst_self == 0.0 and worst_sym <= 1e-12 and hm_bad == 0
    record(9, "metric identities", ok,
           f"clDice(X,X)=1 on {cl_ok}/20, max chamfer(A,A) {worst_self}, "
           f"max asymmetry {worst_sym:.1e}, harmonic-mean violations {hm_bad}")


def _pipeline_run(d):
    d.mkdir()
    main(["synth", "--kind", "tree", "--count", "2", "--seed", "5", "--out", str(d / "g")])
    cfg = d / "micro.cfg"
    cfg.write_text("hidden_dim = 16\nheads = 2\nencoder_self_layers = 1\n"
                   "decoder_self_layers = 1\nfourier_frequencies = 2\n")
    ck = d / "m.ckpt"
    main(["train", str(d / "g"), "--k", "8", "--c", "2", "--config", str(cfg), "--epochs", "3",
          "--queries", "64", "--seed", "3", "--out", str(ck)])
    g = d / "g" / "tree_0000.json"
    main(["encode", str(ck), str(g), "--out", str(d / "t.tok")])
    main(["roundtrip", str(g), "--grid", "64", "--radius", "0.03", "--out", str(d / "r.csv")])
    return [d / "m.ckpt", d / "m.loss.csv", d / "t.tok", d / "r.csv"]


def test_ac10_determinism(tmp_path):
    a = _pipeline_run(tmp_path / "a")
    b = _pipeline_run(tmp_path / "b")
    same = [x.exists() and x.read_bytes() == y.read_bytes() for x, y in zip(a, b)]
    # the library path as well: two in-process trainings
    cfg = ModelConfig(**MICRO_CONFIG)
    sched = TrainSchedule(epochs=3, n_queries=64)
    gs = [synth_graph("loop", {"n_nodes": 8}, 0)]
    for i in (1, 2):
        save_checkpoint(train(gs, cfg, sched).params, cfg, tmp_path / f"lib{i}.ckpt")
    same.append((tmp_path / "lib1.ckpt").read_bytes() == (tmp_path / "lib2.ckpt").read_bytes())
    names = ["checkpoint", "loss csv", "tokens", "report csv", "library checkpoint"]
    record(10, "determinism", all(same),
           ", ".join(f"{n} {'identical' if s else 'DIFFERENT'}" for n, s in zip(names, same)))


@pytest.fixture(autouse=True)
def _register(request):
    # a test that errors before record() still gets a FAIL line
    yield
    num = int(request.node.name[7:9])
    if num not in ACCEPTANCE:
        ACCEPTANCE[num] = (request.node.name[10:].replace("_", " "), False, "did not complete")
