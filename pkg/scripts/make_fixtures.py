"""Regenerate the bundled scenario fixtures from the reference instance data."""

import json
from pathlib import Path

from splitobs import instances as ref
from splitobs.scenario import SCHEMA_ID

OUT = Path(__file__).resolve().parents[1] / "src" / "splitobs" / "fixtures"


def rows(M):
    return [[float(v) for v in r] for r in M]


def one_based(arcs):
    return [[j + 1, i + 1] for j, i in arcs]


def plant(kind):
    return {"A": rows(ref.OSC_A), "C": [rows(c) for c in ref.OSC_C], "time_kind": kind, "sample_period": 1.0}


GRAPH_A = {"label": "ring with chord", "arcs": one_based(ref.RING_CHORD_ARCS)}
GRAPH_B = {"label": "ring", "arcs": one_based(ref.RING_ARCS)}
X0 = [1.0, -0.5, 0.8, 0.3]
XI0 = [[0.0, 0.0, 0.0, 0.0], [0.5, 0.5, -0.5, -0.5], [-1.0, 1.0, 0.0, 0.5]]
Q = [rows(q) for q in ref.OSC_Q]


def continuous_design(**extra):
    d = {"rate": ref.CT_RATE, "mode": "given", "K": [list(map(float, k)) for k in ref.CT_GAINS], "Q": Q}
    d.update(extra)
    return d


def discrete_design(**extra):
    d = {"rate": ref.DT_RATE, "mode": "given", "K": [list(map(float, k)) for k in ref.DT_GAINS], "Q": Q,
         "q": ref.DT_Q}
    d.update(extra)
    return d


FIXTURES = {
    "paper_4_1_fixed": {
        "description": "Two-oscillator plant, three agents, fixed ring-with-chord graph, g = 10.",
        "plant": plant("continuous"),
        "network": {"graphs": [GRAPH_A]},
        "signal": {"kind": "fixed"},
        "design": continuous_design(regime="fixed", g=ref.CT_G),
        "sim": {"horizon": 8.0, "h": 0.01, "x0": X0, "xi0": XI0},
    },
    "paper_4_1_switching": {
        "description": "Average-dwell switching between the two stand-in graphs; g from the dwell-time bound.",
        "plant": plant("continuous"),
        "network": {"graphs": [GRAPH_A, GRAPH_B]},
        "signal": {"kind": "avg_dwell", "tau_d": ref.CT_TAU_D, "delta0": 5.0, "seed": 7},
        "design": continuous_design(regime="dwell"),
        "sim": {"horizon": 8.0, "h": 0.01, "x0": X0, "xi0": XI0},
    },
    "paper_4_2_fixed": {
        "description": "Discrete-time plant, fixed graph, six consensus rounds per event.",
        "plant": plant("discrete"),
        "network": {"graphs": [GRAPH_A]},
        "signal": {"kind": "fixed"},
        "design": discrete_design(),
        "sim": {"horizon": 25, "x0": X0, "xi0": XI0},
    },
    "paper_4_2_switching": {
        "description": "Discrete-time plant, arbitrary switching between the two stand-in graphs.",
        "plant": plant("discrete"),
        "network": {"graphs": [GRAPH_A, GRAPH_B]},
        "signal": {"kind": "arbitrary", "seed": 3},
        "design": discrete_design(),
        "sim": {"horizon": 25, "x0": X0, "xi0": XI0},
    },
    "adaptive_fixed": {
        "description": "Adaptive per-agent coupling gains from zero on the fixed graph.",
        "plant": plant("continuous"),
        "network": {"graphs": [GRAPH_A]},
        "signal": {"kind": "fixed"},
        "design": continuous_design(regime="fixed", g=0.0),
        "sim": {"horizon": 40.0, "h": 0.05, "x0": X0, "xi0": XI0, "g0": [0.0, 0.0, 0.0], "adaptive": True},
    },
    "resilience_arc_drop": {
        "description": "Arc 1->3 fails at t = 3; the ring stays strongly connected.",
        "plant": plant("continuous"),
        "network": {"graphs": [GRAPH_A]},
        "signal": {"kind": "fixed"},
        "design": continuous_design(regime="fixed", g=ref.CT_G),
        "sim": {"horizon": 10.0, "h": 0.01, "x0": X0, "xi0": XI0,
                "faults": [{"time": 3.0, "kind": "remove_arc", "arc": [1, 3]}]},
    },
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, body in FIXTURES.items():
        doc = {"schema": SCHEMA_ID, "name": name, **body}
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print("wrote", name)


if __name__ == "__main__":
    main()
