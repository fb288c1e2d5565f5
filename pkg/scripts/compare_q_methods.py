"""Compare the weighted-norm and mixed-norm round counts on random discrete instances.

    python3 scripts/compare_q_methods.py [--count N] [--seed S] [--rate R]
"""

import argparse
from collections import Counter
from dataclasses import replace

import numpy as np

from splitobs import instances as ref
from splitobs.analyzer import envelope_check
from splitobs.simulator import simulate_discrete


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate", type=float, default=0.5)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    wins = Counter()
    print(f"{'n':>2} {'m':>2} {'q_weighted':>10} {'q_mixed':>8} {'p_mixed':>7} {'env_w':>6} {'env_m':>6}")
    for _ in range(args.count):
        n, m = int(rng.integers(2, 7)), int(rng.integers(2, 5))
        sc = ref.random_discrete_scenario(n, m, rng, rate=args.rate)
        w, mx = sc.design.choice, sc.design.alternative
        env = {}
        for c in (w, mx):
            tr = simulate_discrete(replace(sc, design=replace(sc.design, q=c.q)))
            env[c.method] = envelope_check(tr.e_norm, args.rate)["worst_ratio"]
        wins["weighted" if w.q < mx.q else "mixed" if mx.q < w.q else "tie"] += 1
        print(f"{n:>2} {m:>2} {w.q:>10} {mx.q:>8} {mx.p:>7} {env['weighted']:>6.2f} {env['mixed']:>6.2f}")
    print("smaller q:", dict(wins))


if __name__ == "__main__":
    main()
