"""Graph -> field -> skeleton -> graph without any learning, and what happens
when two tubes sit closer than twice the radius."""

from vesseltok.graph import betti_numbers
from vesseltok.pipeline import roundtrip
from vesseltok.synth import synth_graph

for kind in ("tree", "loop", "grid"):
    g = synth_graph(kind, {}, seed=0)
    out, rep = roundtrip(g, 0.016, 128)
    print(f"{kind:5s} betti {tuple(betti_numbers(g))} -> {tuple(betti_numbers(out))}"
          f"  clDice {rep.cldice:.4f}  chamfer {rep.chamfer:.4f}")

tubes = synth_graph("parallel-tubes", {"separation": 0.05}, seed=0)
for r in (0.016, 0.032):
    out, rep = roundtrip(tubes, r, 256)
    print(f"tubes 0.05 apart, r={r}: components {betti_numbers(tubes).beta0} -> "
          f"{betti_numbers(out).beta0}")
