"""Trajectory generation for the plant together with every agent's estimator.

Continuous runs are piecewise exact: between consecutive events (grid
points, switches, faults) the joint system [x; x_1; ...; x_m] is linear
time-invariant and is advanced by one matrix exponential. A fixed-step RK4
integrator of the same equations is kept as an independent oracle. The
adaptive-gain mode is nonlinear and uses an embedded Cash-Karp RK4(5)
integrator whose weights are all nonnegative, so accumulated gains can
never decrease.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import matrixkit as mk
from .decomposition import Plant, joint_observability
from .designer import ContinuousDesign, DiscreteDesign
from .errors import DimensionMismatch, FaultBreaksAssumptions, SplitObsError, ToleranceNotMet
from .netgraph import NeighborGraph, flow_matrix, metropolis_weights, strongly_connected
from .switching import SwitchingSignal, sample, validate

log = logging.getLogger(__name__)

DUAL_PATH_TOL = 1e-9
ADAPTIVE_RTOL = 1e-8
ADAPTIVE_ATOL = 1e-12


class InvalidSignal(SplitObsError, ValueError):
    pass


@dataclass(frozen=True)
class Fault:
    """``kind`` is ``"remove_arc"`` (with ``arc=(j, i)``) or ``"remove_agent"``."""

    time: float
    kind: str
    arc: tuple | None = None
    agent: int | None = None

    def __post_init__(self):
        if self.kind == "remove_arc":
            if self.arc is None or len(self.arc) != 2:
                raise ValueError("remove_arc needs arc=(j, i)")
            object.__setattr__(self, "arc", (int(self.arc[0]), int(self.arc[1])))
        elif self.kind == "remove_agent":
            if self.agent is None:
                raise ValueError("remove_agent needs agent")
        else:
            raise ValueError(f"unknown fault kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Scenario:
    plant: Plant
    design: ContinuousDesign | DiscreteDesign
    graphs: tuple
    signal: SwitchingSignal
    x0: np.ndarray
    xi0: np.ndarray
    horizon: float
    h: float = 0.01
    g0: np.ndarray | None = None
    faults: tuple = ()
    weights: str = "uniform"
    adaptive: bool = False
    experimental: bool = False
    active: tuple | None = None
    name: str = ""
    source: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        n, m = self.plant.n, self.plant.m
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        xi0 = np.asarray(self.xi0, dtype=float)
        if x0.shape != (n,):
            raise DimensionMismatch(f"x0 has {x0.size} entries, expected {n}")
        if xi0.shape != (m, n):
            raise DimensionMismatch(f"xi0 has shape {xi0.shape}, expected {(m, n)}")
        if len(self.design.decs) != m:
            raise DimensionMismatch("design and plant disagree on the number of agents")
        if any(g.m != m for g in self.graphs):
            raise DimensionMismatch("every graph needs one vertex per agent")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "xi0", xi0)
        object.__setattr__(self, "graphs", tuple(self.graphs))
        object.__setattr__(self, "faults", tuple(sorted(self.faults, key=lambda f: f.time)))
        if self.active is None:
            object.__setattr__(self, "active", (True,) * m)
        if self.adaptive:
            if self.g0 is None:
                raise DimensionMismatch("adaptive mode needs g0")
            g0 = np.asarray(self.g0, dtype=float).reshape(-1)
            if g0.shape != (m,) or np.any(g0 < 0):
                raise DimensionMismatch("g0 needs one nonnegative gain per agent")
            object.__setattr__(self, "g0", g0)

    @property
    def kind(self) -> str:
        return self.design.kind

    @property
    def survivors(self) -> list:
        return [i for i, a in enumerate(self.active) if a]


# ----------------------------------------------------------------------------
# faults


def mixing_matrix(graph: NeighborGraph, active: Sequence[bool], weights: str = "uniform") -> np.ndarray:
    """m x m averaging matrix over surviving agents; removed agents get zero rows and columns."""
    keep = [i for i, a in enumerate(active) if a]
    sub = graph.restricted(keep)
    S_sub = flow_matrix(sub) if weights == "uniform" else metropolis_weights(sub)
    S = np.zeros((graph.m, graph.m))
    S[np.ix_(keep, keep)] = S_sub
    return S


def check_assumptions(sc: Scenario) -> None:
    keep = sc.survivors
    for k, g in enumerate(sc.graphs):
        if not strongly_connected(g.restricted(keep)):
            raise FaultBreaksAssumptions("strong connectivity", f"graph {k} over agents {keep}")
    if not joint_observability(sc.plant.subplant(keep)):
        raise FaultBreaksAssumptions("joint observability", f"agents {keep}")


def apply_fault(sc: Scenario, t: float, event: Fault) -> Scenario:
    """Scenario in force after ``event``; gains and g are left untouched."""
    if event.kind == "remove_arc":
        j, i = event.arc
        graphs = tuple(g.without_arc(j, i) if (j, i) in g.arcs else g for g in sc.graphs)
        out = replace(sc, graphs=graphs)
    else:
        a = event.agent
        if not sc.active[a]:
            raise ValueError(f"agent {a} already removed")
        active = tuple(False if k == a else v for k, v in enumerate(sc.active))
        graphs = tuple(NeighborGraph(g.m, frozenset((j, i) for j, i in g.arcs
                                                    if (j != a and i != a) or j == i))
                       for g in sc.graphs)
        out = replace(sc, graphs=graphs, active=active)
    try:
        check_assumptions(out)
    except FaultBreaksAssumptions as exc:
        log.warning("fault at t=%g rejected: %s", t, exc)
        raise
    return out


def _fault_epochs(sc: Scenario) -> list:
    """[(start_time, scenario), ...], validated up front so no integration
    happens before a bad fault is reported."""
    epochs = [(0.0, sc)]
    cur = sc
    for f in sc.faults:
        if not 0 <= f.time <= sc.horizon:
            raise ValueError(f"fault time {f.time} outside the horizon")
        cur = apply_fault(cur, f.time, f)
        epochs.append((f.time, cur))
    return epochs


# ----------------------------------------------------------------------------
# traces


@dataclass(frozen=True)
class SimulationTrace:
    times: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    e: np.ndarray
    e_norm: np.ndarray
    graph_id: np.ndarray
    active: np.ndarray
    kind: str = "continuous"
    gains: np.ndarray | None = None
    steps: np.ndarray | None = None
    dual_path_error: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.xi.shape[1]

    def check(self) -> float:
        """Max deviation between stored errors and x_i - x (should be exactly 0)."""
        return float(np.max(np.abs(self.e - (self.xi - self.x[:, None, :])))) if self.e.size else 0.0

    def header(self) -> list:
        cols = ["t"] + [f"x_{k + 1}" for k in range(self.n)]
        cols += [f"x{i + 1}_{k + 1}" for i in range(self.m) for k in range(self.n)]
        cols.append("e_norm")
        if self.gains is not None:
            cols += [f"g_{i + 1}" for i in range(self.m)]
        cols.append("graph_id")
        return cols

    def write_csv(self, path) -> None:
        """Columns: t, x_*, x<i>_*, e_norm, [g_*], graph_id (1-based). Floats as %.17g."""
        fmt = "{:.17g}".format
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for k in range(len(self.times)):
                row = [fmt(self.times[k])]
                row += [fmt(v) for v in self.x[k]]
                row += [fmt(v) for v in self.xi[k].reshape(-1)]
                row.append(fmt(self.e_norm[k]))
                if self.gains is not None:
                    row += [fmt(v) for v in self.gains[k]]
                row.append(str(int(self.graph_id[k]) + 1))
                w.writerow(row)


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    head, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]) if body else np.zeros((0, len(head)))
    return {name: data[:, k] for k, name in enumerate(head)}


def _build_trace(times, states, gids, actives, plant, kind, gains=None, steps=None, dual=None, meta=None):
    n, m = plant.n, plant.m
    Z = np.asarray(states)
    x = Z[:, :n]
    xi = Z[:, n:n + n * m].reshape(len(times), m, n)
    e = xi - x[:, None, :]
    act = np.asarray(actives, dtype=bool)
    e_norm = np.sqrt(np.sum((e * act[:, :, None]) ** 2, axis=(1, 2)))
    return SimulationTrace(
        times=np.asarray(times, dtype=float), x=x, xi=xi, e=e, e_norm=e_norm,
        graph_id=np.asarray(gids, dtype=int), active=act, kind=kind,
        gains=None if gains is None else np.asarray(gains),
        steps=None if steps is None else np.asarray(steps),
        dual_path_error=dual, meta=meta or {},
    )


# ----------------------------------------------------------------------------
# continuous time


def joint_generator(sc: Scenario, S: np.ndarray, g) -> np.ndarray:
    """Generator of z = [x; x_1; ...; x_m] for averaging matrix S.

    ``g`` is a scalar or one gain per agent. Removed agents have zero rows.
    """
    n, m = sc.plant.n, sc.plant.m
    A = sc.plant.A
    gv = np.broadcast_to(np.asarray(g, dtype=float), (m,))
    J = np.zeros((n * (m + 1), n * (m + 1)))
    J[:n, :n] = A
    for i, dec in enumerate(sc.design.decs):
        if not sc.active[i]:
            continue
        r = slice(n * (i + 1), n * (i + 2))
        KC = dec.K @ dec.C
        J[r, :n] = -KC
        J[r, r] = A + KC - gv[i] * dec.P
        for j in range(m):
            if S[i, j] != 0.0:
                c = slice(n * (j + 1), n * (j + 2))
                J[r, c] += gv[i] * S[i, j] * dec.P
    return J


def _event_times(sc: Scenario) -> np.ndarray:
    N = int(math.floor(sc.horizon / sc.h + 1e-9))
    grid = np.arange(N + 1) * sc.h
    extra = [t for t in sc.signal.switch_times if t <= sc.horizon]
    extra += [f.time for f in sc.faults]
    ts = np.unique(np.concatenate([grid, np.asarray(extra, dtype=float), [sc.horizon]]))
    ts = ts[ts <= sc.horizon]
    keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, sc.horizon)])
    return ts[keep]


def _epoch_at(epochs, t):
    cur = epochs[0][1]
    for start, s in epochs:
        if start <= t:
            cur = s
    return cur


def _check_continuous(sc: Scenario):
    if sc.kind != "continuous":
        raise ValueError("scenario does not carry a continuous design")
    if sc.plant.time_kind != "continuous":
        raise ValueError("plant is not continuous-time")
    v = validate(sc.signal)
    if not v:
        raise InvalidSignal(f"switching signal invalid: {v.violation}")
    if sc.signal.horizon < sc.horizon:
        raise InvalidSignal("signal horizon shorter than simulation horizon")
    if any(not 0 <= gid < len(sc.graphs) for gid in sc.signal.values):
        raise InvalidSignal("signal refers to a graph outside the family")


def simulate_continuous(sc: Scenario) -> SimulationTrace:
    _check_continuous(sc)
    if sc.adaptive:
        return simulate_adaptive(sc)
    epochs = _fault_epochs(sc)
    ts = _event_times(sc)
    z = np.concatenate([sc.x0, sc.xi0.reshape(-1)])
    cache = {}
    states, gids, actives = [z.copy()], [], []
    for k in range(len(ts)):
        t = ts[k]
        cur = _epoch_at(epochs, t)
        gid = sample(sc.signal, t)
        gids.append(gid)
        actives.append(cur.active)
        if k == len(ts) - 1:
            break
        dt = ts[k + 1] - t
        key = (id(cur), gid, round(dt, 14))
        Phi = cache.get(key)
        if Phi is None:
            S = mixing_matrix(cur.graphs[gid], cur.active, sc.weights)
            Phi = mk.matrix_exponential(joint_generator(cur, S, sc.design.g) * dt)
            cache[key] = Phi
        z = Phi @ z
        states.append(z.copy())
    return _build_trace(ts, states, gids, actives, sc.plant, "continuous",
                        meta={"expm_evaluations": len(cache)})


def simulate_continuous_rk4(sc: Scenario, h: float = 1e-4) -> SimulationTrace:
    """Fixed-step classical RK4 over the same event grid; verification oracle only."""
    _check_continuous(sc)
    epochs = _fault_epochs(sc)
    ts = _event_times(sc)
    z = np.concatenate([sc.x0, sc.xi0.reshape(-1)])
    states, gids, actives = [z.copy()], [], []
    for k in range(len(ts)):
        t = ts[k]
        cur = _epoch_at(epochs, t)
        gid = sample(sc.signal, t)
        gids.append(gid)
        actives.append(cur.active)
        if k == len(ts) - 1:
            break
        S = mixing_matrix(cur.graphs[gid], cur.active, sc.weights)
        J = joint_generator(cur, S, sc.design.g)
        span = ts[k + 1] - t
        nsteps = max(1, int(math.ceil(span / h - 1e-9)))
        dt = span / nsteps
        for _ in range(nsteps):
            k1 = J @ z
            k2 = J @ (z + 0.5 * dt * k1)
            k3 = J @ (z + 0.5 * dt * k2)
            k4 = J @ (z + dt * k3)
            z = z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(z.copy())
    return _build_trace(ts, states, gids, actives, sc.plant, "continuous")


# -- adaptive gains -------------------------------------------------------------

# Cash-Karp tableau; both weight rows are nonnegative
_CK_C = np.array([0.0, 1 / 5, 3 / 10, 3 / 5, 1.0, 7 / 8])
_CK_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [3 / 10, -9 / 10, 6 / 5],
    [-11 / 54, 5 / 2, -70 / 27, 35 / 27],
    [1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096],
]
_CK_B5 = np.array([37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771])
_CK_B4 = np.array([2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4])


def cash_karp_step(f, t, y, dt):
    """One embedded step; returns (5th-order solution, error estimate)."""
    ks = []
    for s in range(6):
        yi = y.copy()
        for a, kk in zip(_CK_A[s], ks):
            yi += dt * a * kk
        ks.append(f(t + _CK_C[s] * dt, yi))
    K = np.array(ks)
    y5 = y + dt * (_CK_B5 @ K)
    y4 = y + dt * (_CK_B4 @ K)
    return y5, y5 - y4


def integrate_cash_karp(f, t0, y0, t1, dt0, rtol=ADAPTIVE_RTOL, atol=ADAPTIVE_ATOL, max_steps=1_000_000):
    """Adaptive integration landing exactly on t1. Returns (y, last_dt, steps)."""
    t, y, dt = t0, np.asarray(y0, dtype=float).copy(), dt0
    steps = 0
    while t < t1:
        if steps >= max_steps:
            raise ToleranceNotMet(f"more than {max_steps} steps before t={t1}")
        last = t + dt >= t1 - 1e-14 * max(1.0, abs(t1))
        step = t1 - t if last else dt
        y_new, err = cash_karp_step(f, t, y, step)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = float(np.max(np.abs(err) / scale))
        if not np.isfinite(ratio):
            raise ToleranceNotMet(f"non-finite state near t={t}")
        if ratio <= 1.0:
            t = t1 if last else t + step
            y = y_new
            steps += 1
        fac = 0.9 * ratio ** -0.2 if ratio > 0 else 5.0
        dt = step * min(5.0, max(0.2, fac))
        if dt < 1e-14 * max(1.0, abs(t)):
            raise ToleranceNotMet(f"step size underflow at t={t}")
    return y, dt, steps


def adaptive_rhs(sc: Scenario, S: np.ndarray):
    n, m = sc.plant.n, sc.plant.m
    A = sc.plant.A
    decs = sc.design.decs
    KC = [d.K @ d.C for d in decs]

    def f(t, y):
        x = y[:n]
        X = y[n:n + n * m].reshape(m, n)
        g = y[n + n * m:]
        avg = S @ X
        dy = np.empty_like(y)
        dy[:n] = A @ x
        for i, d in enumerate(decs):
            r = slice(n + n * i, n + n * (i + 1))
            if not sc.active[i]:
                dy[r] = 0.0
                dy[n + n * m + i] = 0.0
                continue
            dis = avg[i] - X[i]
            dy[r] = (A + KC[i]) @ X[i] - KC[i] @ x + g[i] * (d.P @ dis)
            w = d.V.T @ dis
            dy[n + n * m + i] = float(w @ w)
        return dy

    return f


def simulate_adaptive(sc: Scenario) -> SimulationTrace:
    """Per-agent gains with g_i' = |V_i' (avg_j x_j - x_i)|^2, since e_j - e_i = x_j - x_i."""
    _check_continuous(sc)
    if sc.signal.n_switches and not sc.experimental:
        raise ValueError("adaptive gains under switching graphs require experimental=True")
    epochs = _fault_epochs(sc)
    ts = _event_times(sc)
    n, m = sc.plant.n, sc.plant.m
    y = np.concatenate([sc.x0, sc.xi0.reshape(-1), sc.g0])
    states, gains, gids, actives, steps = [y[:n + n * m].copy()], [y[n + n * m:].copy()], [], [], [0]
    dt = min(sc.h, 1e-3)
    rhs = {}
    for k in range(len(ts)):
        t = ts[k]
        cur = _epoch_at(epochs, t)
        gid = sample(sc.signal, t)
        gids.append(gid)
        actives.append(cur.active)
        if k == len(ts) - 1:
            break
        key = (id(cur), gid)
        if key not in rhs:
            rhs[key] = adaptive_rhs(cur, mixing_matrix(cur.graphs[gid], cur.active, sc.weights))
        y, dt, nst = integrate_cash_karp(rhs[key], t, y, ts[k + 1], dt)
        states.append(y[:n + n * m].copy())
        gains.append(y[n + n * m:].copy())
        steps.append(nst)
    return _build_trace(ts, states, gids, actives, sc.plant, "continuous", gains=gains, steps=steps)


# ----------------------------------------------------------------------------
# discrete time


def closed_form_step(sc: Scenario, S: np.ndarray, e: np.ndarray) -> np.ndarray:
    """e(t+1) = A_bar (I - P(I - S (x) I_n))^q e(t), restricted to surviving agents."""
    n = sc.plant.n
    keep = sc.survivors
    decs = [sc.design.decs[i] for i in keep]
    Ssub = S[np.ix_(keep, keep)]
    Abig = np.zeros((n * len(keep),) * 2)
    Pbig = np.zeros_like(Abig)
    for k, d in enumerate(decs):
        blk = slice(n * k, n * (k + 1))
        Abig[blk, blk] = d.closed_loop
        Pbig[blk, blk] = d.P
    I = np.eye(Abig.shape[0])
    mix = I - Pbig @ (I - np.kron(Ssub, np.eye(n)))
    out = np.array(e, dtype=float, copy=True)
    sub = e[keep].reshape(-1)
    sub = Abig @ np.linalg.matrix_power(mix, sc.design.q) @ sub
    out[keep] = sub.reshape(len(keep), n)
    return out


def _check_discrete(sc: Scenario):
    if sc.kind != "discrete":
        raise ValueError("scenario does not carry a discrete design")
    if sc.plant.time_kind != "discrete":
        raise ValueError("plant is not discrete-time")
    if sc.design.q < 1:
        raise ValueError("q must be at least 1")
    v = validate(sc.signal)
    if not v:
        raise InvalidSignal(f"switching signal invalid: {v.violation}")


def simulate_discrete(sc: Scenario, record_rounds: bool = False) -> SimulationTrace:
    """Event-indexed run: q inner consensus rounds on the projected
    components, then the injection step. Times are event indices times T.

    Each step is cross-checked against the closed-form error recursion;
    the largest discrepancy is stored as ``dual_path_error``.
    """
    _check_discrete(sc)
    epochs = _fault_epochs(sc)
    A = sc.plant.A
    q = int(sc.design.q)
    n_events = int(math.floor(sc.horizon + 1e-9))
    x = sc.x0.copy()
    X = sc.xi0.copy()
    states = [np.concatenate([x, X.reshape(-1)])]
    gids, actives, rounds = [], [], []
    worst = 0.0
    for tau in range(n_events + 1):
        cur = _epoch_at(epochs, tau)
        gid = sample(sc.signal, min(tau, sc.signal.horizon))
        gids.append(gid)
        actives.append(cur.active)
        if tau == n_events:
            break
        S = mixing_matrix(cur.graphs[gid], cur.active, sc.weights)
        Z = X.copy()
        inner = [Z.copy()] if record_rounds else None
        for _ in range(q):
            avg = S @ Z
            Znew = Z.copy()
            for i, d in enumerate(sc.design.decs):
                if cur.active[i]:
                    Znew[i] = Z[i] - d.P @ Z[i] + d.P @ avg[i]
            Z = Znew
            if record_rounds:
                inner.append(Z.copy())
        if record_rounds:
            rounds.append(np.array(inner))
        Xn = X.copy()
        for i, d in enumerate(sc.design.decs):
            if cur.active[i]:
                Xn[i] = d.closed_loop @ Z[i] - d.K @ (d.C @ x)
        e_pred = closed_form_step(cur, S, X - x)
        x = A @ x
        X = Xn
        e_now = X - x
        scale = max(1.0, float(np.max(np.abs(x))))
        worst = max(worst, float(np.max(np.abs((e_now - e_pred)[cur.survivors]))) / scale)
        states.append(np.concatenate([x, X.reshape(-1)]))
    times = np.arange(n_events + 1) * sc.plant.sample_period
    trace = _build_trace(times, states, gids, actives, sc.plant, "discrete", dual=worst,
                         meta={"rounds": rounds} if record_rounds else None)
    if worst > DUAL_PATH_TOL:
        log.warning("discrete dual-path discrepancy %.3e exceeds %.0e", worst, DUAL_PATH_TOL)
    return trace


def simulate(sc: Scenario) -> SimulationTrace:
    if sc.kind == "discrete":
        return simulate_discrete(sc)
    return simulate_continuous(sc)
