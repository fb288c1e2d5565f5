"""Piecewise-constant switching signals over a finite graph family."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OutOfHorizon

KINDS = ("fixed", "dwell", "avg_dwell", "arbitrary")


@dataclass(frozen=True)
class SwitchingSignal:
    """Right-continuous signal: ``values[k]`` holds on [breakpoints[k], breakpoints[k+1]).

    ``breakpoints[0]`` is always 0 and is not a switch.
    """

    breakpoints: tuple
    values: tuple
    horizon: float
    kind: str = "fixed"
    tau_d: float | None = None
    delta0: float | None = None
    family_size: int | None = None

    def __post_init__(self):
        bps = tuple(float(t) for t in self.breakpoints)
        vals = tuple(int(v) for v in self.values)
        if not bps or bps[0] != 0.0:
            raise ValueError("first breakpoint must be 0")
        if len(bps) != len(vals):
            raise ValueError("breakpoints and values differ in length")
        if any(b <= a for a, b in zip(bps, bps[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        if bps[-1] > self.horizon:
            raise ValueError("breakpoint beyond horizon")
        if any(a == b for a, b in zip(vals, vals[1:])):
            raise ValueError("consecutive values must differ (no null switches)")
        if self.family_size is not None and any(not 0 <= v < self.family_size for v in vals):
            raise ValueError("signal value outside the graph family")
        if self.kind not in KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: int, horizon: float, family_size: int | None = None) -> "SwitchingSignal":
        return cls((0.0,), (value,), horizon, "fixed", family_size=family_size)

    @property
    def switch_times(self) -> tuple:
        return self.breakpoints[1:]

    @property
    def n_switches(self) -> int:
        return len(self.breakpoints) - 1

    def pairs(self) -> list:
        return [[t, v] for t, v in zip(self.breakpoints, self.values)]


def sample(signal: SwitchingSignal, t: float) -> int:
    if not 0 <= t <= signal.horizon:
        raise OutOfHorizon(f"t={t} outside [0, {signal.horizon}]")
    k = bisect.bisect_right(signal.breakpoints, t) - 1
    return signal.values[k]


@dataclass(frozen=True)
class Validation:
    ok: bool
    violation: str | None = None
    index: int | None = None

    def __bool__(self):
        return self.ok


def validate(signal: SwitchingSignal, kind: str | None = None, tau_d=None, delta0=None) -> Validation:
    """Check a signal against a dwell or average-dwell constraint.

    Average dwell: for switches a <= b the open-interval count b - a + 1
    (taking t0 just before t_a and t just after t_b) must not exceed
    delta0 + (t_b - t_a) / tau_d. With u_k = k - t_k / tau_d this is
    max_{a<=b} (u_b - u_a) + 1 <= delta0, a running-minimum scan.
    """
    kind = kind or signal.kind
    tau_d = signal.tau_d if tau_d is None else tau_d
    delta0 = signal.delta0 if delta0 is None else delta0
    ts = signal.switch_times
    if kind in ("fixed", "arbitrary"):
        if kind == "fixed" and ts:
            return Validation(False, "fixed signal has switches", 1)
        return Validation(True)
    if tau_d is None or tau_d <= 0:
        return Validation(False, "tau_d must be positive")
    if kind == "dwell":
        for k in range(1, len(ts)):
            gap = ts[k] - ts[k - 1]
            if gap < tau_d * (1 - 1e-12):
                return Validation(False, f"switch {k + 1} at t={ts[k]:.6g} follows the previous one "
                                         f"after {gap:.6g} < tau_d={tau_d:g}", k + 1)
        return Validation(True)
    if kind == "avg_dwell":
        if delta0 is None:
            return Validation(False, "average dwell needs a chatter bound delta0")
        slack = 1e-9
        umin = math.inf
        for k, t in enumerate(ts):
            u = k - t / tau_d
            umin = min(umin, u)
            if u - umin + 1 > delta0 + slack:
                return Validation(False, f"switch {k + 1} at t={t:.6g}: "
                                         f"{u - umin + 1:.6g} switches exceed delta0 + span/tau_d", k + 1)
        return Validation(True)
    raise ValueError(f"unknown kind {kind!r}")


def count_switches(signal: SwitchingSignal, t0: float, t1: float) -> int:
    """Number of discontinuities in the open interval (t0, t1)."""
    return sum(1 for t in signal.switch_times if t0 < t < t1)


def _next_value(rng, current, family_size):
    choice = int(rng.integers(family_size - 1))
    return choice if choice < current else choice + 1


def generate(
    kind: str,
    family_size: int,
    horizon: float,
    seed: int = 0,
    tau_d: float | None = None,
    delta0: float | None = None,
    min_step: float = 0.01,
    integer: bool = False,
) -> SwitchingSignal:
    """Seeded random signal that satisfies its own kind's constraint.

    dwell: gaps tau_d + Exp(tau_d).
    avg_dwell: gaps from a two-point mixture (bursts at tau_d/5, rests at
    2 tau_d), pushed later whenever the running average-dwell inequality
    would fail, so every prefix is valid by construction.
    arbitrary: gaps min_step + Exp(5 min_step); min_step is only a grid floor.
    ``integer`` rounds switch times up to whole event indices.
    """
    rng = np.random.default_rng(seed)
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if kind in ("dwell", "avg_dwell") and not (tau_d and tau_d > 0):
        raise ValueError(f"{kind} signals need tau_d > 0")
    if kind == "avg_dwell" and (delta0 is None or delta0 < 1):
        raise ValueError("avg_dwell generation needs delta0 >= 1")
    first = int(rng.integers(family_size))
    bps, vals = [0.0], [first]
    if family_size == 1 or kind == "fixed":
        return SwitchingSignal((0.0,), (first,), horizon, kind, tau_d, delta0, family_size)

    def snap(t):
        return float(math.ceil(t - 1e-9)) if integer else t

    umin = math.inf  # running min of u_k = k - s_k / tau_d over accepted switches
    t = 0.0
    while True:
        k = len(bps) - 1
        if kind == "dwell":
            cand = snap(t + tau_d + rng.exponential(tau_d))
        elif kind == "avg_dwell":
            gap = tau_d / 5 if rng.random() < 0.5 else 2 * tau_d
            earliest = tau_d * (k - delta0 + 1 - umin) if k > 0 else 0.0
            cand = snap(max(t + gap, earliest))
        else:
            cand = snap(t + min_step + rng.exponential(5 * min_step))
            if integer:
                cand = max(cand, t + 1)
        if cand >= horizon:
            break
        if kind == "avg_dwell":
            umin = min(umin, k - cand / tau_d)
        bps.append(cand)
        vals.append(_next_value(rng, vals[-1], family_size))
        t = cand
    return SwitchingSignal(tuple(bps), tuple(vals), horizon, kind, tau_d, delta0, family_size)


def indicator_rows(signal: SwitchingSignal, grid: Sequence[float]) -> list:
    return [(float(t), sample(signal, float(t))) for t in grid]


def write_indicator_csv(signal: SwitchingSignal, path, h: float = 0.001) -> None:
    """Graph id on a uniform grid (plus every switch instant), for plotting."""
    grid = np.arange(0.0, signal.horizon + 0.5 * h, h)
    grid = np.unique(np.concatenate([grid[grid <= signal.horizon], signal.switch_times]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "graph_id"])
        for t, v in indicator_rows(signal, grid):
            w.writerow([repr(t), v + 1])
