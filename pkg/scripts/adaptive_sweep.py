"""Sweep the initial adaptive gain on the reference plant and report final gains and error.

    python3 scripts/adaptive_sweep.py [--g0 0 1 5 10] [--horizon 40]
"""

import argparse
from dataclasses import replace

import numpy as np

from splitobs.scenario import parse_scenario
from splitobs.simulator import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--g0", type=float, nargs="+", default=[0.0, 1.0, 5.0, 10.0])
    ap.add_argument("--horizon", type=float, default=40.0)
    args = ap.parse_args()
    base = parse_scenario("adaptive_fixed")
    print(f"{'g0':>6}  {'final gains':<28} {'|e(T)|/|e(0)|':>14} {'tail increase':>14}")
    for g0 in args.g0:
        sc = replace(base, g0=np.full(base.plant.m, g0), horizon=args.horizon)
        tr = simulate(sc)
        tail = tr.gains[tr.times >= 0.8 * args.horizon]
        gains = " ".join(f"{v:8.4f}" for v in tr.gains[-1])
        print(f"{g0:>6g}  {gains:<28} {tr.e_norm[-1] / tr.e_norm[0]:>14.2e} {np.max(tail[-1] - tail[0]):>14.2e}")


if __name__ == "__main__":
    main()
