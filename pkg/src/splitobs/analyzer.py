"""Post-hoc verification of designs and traces."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import matrixkit as mk
from .decomposition import StackedDecomposition, stack
from .designer import certify_dwell_constants, certify_gain_fixed, rate_margin
from .errors import InsufficientData
from .netgraph import NetworkSnapshot

MIN_SAMPLES = 10
UNION_TOL = 1e-7


@dataclass(frozen=True)
class DecayFit:
    lambda_est: float
    intercept: float
    window: tuple
    residual: float
    floor: float
    samples: int
    ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit_decay_rate(trace=None, window=None, floor=None, *, times=None, norms=None, per_event=False) -> DecayFit:
    """Least-squares line through (t, ln ||e(t)||); lambda_est = -slope.

    Defaults: window drops the first 10% of the horizon, floor is
    1e-12 ||e(0)||. With ``per_event`` the abscissa is the event index and
    ``ratio`` = exp(-lambda_est) is the fitted per-step contraction.
    """
    if trace is not None:
        times = trace.times
        norms = trace.e_norm
        if per_event and trace.kind == "discrete":
            times = np.arange(len(times), dtype=float)
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t.shape != y.shape or t.size == 0:
        raise InsufficientData("times and norms must be non-empty and aligned")
    if floor is None:
        floor = 1e-12 * float(y[0]) if y[0] > 0 else 0.0
    if window is None:
        window = (t[0] + 0.1 * (t[-1] - t[0]), t[-1])
    ta, tb = float(window[0]), float(window[1])
    if not ta < tb:
        raise ValueError("window must satisfy t_a < t_b")
    keep = (t >= ta - 1e-12) & (t <= tb + 1e-12) & (y > floor) & (y > 0)
    if keep.sum() < MIN_SAMPLES:
        raise InsufficientData(f"{int(keep.sum())} usable samples in [{ta}, {tb}], need {MIN_SAMPLES}")
    tk, ly = t[keep], np.log(y[keep])
    slope, icpt = np.polyfit(tk, ly, 1)
    resid = float(np.max(np.abs(ly - (slope * tk + icpt))))
    return DecayFit(float(-slope), float(icpt), (ta, tb), resid, float(floor), int(keep.sum()),
                    float(math.exp(slope)) if per_event else None)


def envelope_check(norms, rate: float, fit_at: int = 1, factor: float = 1.1, upto: int | None = None) -> dict:
    """||e(k)|| <= factor * C * rate^k with C = ||e(fit_at)|| / rate^fit_at."""
    y = np.asarray(norms, dtype=float)
    upto = len(y) - 1 if upto is None else min(upto, len(y) - 1)
    C = y[fit_at] / rate ** fit_at
    ks = np.arange(upto + 1)
    env = factor * C * rate ** ks
    ratio = y[: upto + 1] / np.where(env > 0, env, np.inf)
    worst = int(np.argmax(ratio))
    return {"passed": bool(np.all(y[: upto + 1] <= env)), "C": float(C), "worst_index": worst,
            "worst_ratio": float(ratio[worst])}


def transient_envelope(M, rate: float, upto: int) -> float:
    """sup_k ||M^k|| / rate^k for k <= upto: the smallest C valid for all initial errors."""
    P = np.eye(M.shape[0])
    best = 1.0
    for k in range(1, upto + 1):
        P = M @ P
        best = max(best, mk.induced_two_norm(P) / rate ** k)
    return best


# ----------------------------------------------------------------------------
# spectra


def _matching(a, b):
    """Optimal one-to-one pairing of two eigenvalue multisets (max-distance objective via assignment)."""
    a, b = np.asarray(a, complex), np.asarray(b, complex)
    if a.size != b.size:
        return None
    if a.size == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return r, c, cost[r, c]


def _sigma_min_shift(M, mu) -> float:
    """Smallest singular value of M - mu I: distance from M to a matrix with eigenvalue mu."""
    return float(np.linalg.svd(M - mu * np.eye(M.shape[0]), compute_uv=False)[-1])


def _union_errors(M, blocks):
    """(forward, backward) errors of eig(M) = union of the blocks' spectra.

    forward: largest distance in the optimal pairing. backward: largest
    sigma_min(X - mu I) / scale over both directions of every pair, i.e. how
    far each side must move to carry the other's eigenvalue exactly.
    Forward error of a k-fold defective eigenvalue is bounded below by about
    eps^(1/k), so only the backward error is compared against a fixed tolerance.
    """
    full = mk.eigenvalues(M).eigenvalues
    parts = [mk.eigenvalues(B).eigenvalues for B in blocks]
    owner = np.concatenate([np.full(len(p), k) for k, p in enumerate(parts)]) if parts else np.zeros(0, int)
    joined = np.concatenate(parts) if parts else np.zeros(0, complex)
    match = _matching(full, joined)
    if match is None:
        return math.inf, math.inf, full, parts
    r, c, dist = match
    scale = max(1.0, mk.induced_two_norm(M))
    back = 0.0
    for i, j in zip(r, c):
        back = max(back, _sigma_min_shift(M, joined[j]), _sigma_min_shift(blocks[owner[j]], full[i]))
    return float(dist.max(initial=0.0)), back / scale, full, parts


def error_map(design, snapshot: NetworkSnapshot, stacked: StackedDecomposition | None = None) -> np.ndarray:
    st = stacked or stack(design.decs)
    if design.kind == "continuous":
        return st.continuous_error_map(snapshot.S, design.g)
    return st.discrete_error_map(snapshot.S, design.q)


def spectrum_report(design, snapshot: NetworkSnapshot) -> dict:
    """Spectrum of the error map, its two diagonal blocks, and the union check."""
    st = stack(design.decs)
    M = error_map(design, snapshot, st)
    (B11, B12), (_, B22) = st.split_blocks(M)
    blocks = [B for B in (B11, B22) if B.size]
    fwd, back, full, _ = _union_errors(M, blocks)
    ev_obs = mk.eigenvalues(B11).eigenvalues
    ev_unobs = mk.eigenvalues(B22).eigenvalues
    if design.kind == "continuous":
        worst = float(np.max(full.real)) if full.size else -math.inf
        margin = -design.rate - worst
    else:
        worst = float(np.max(np.abs(full))) if full.size else 0.0
        margin = design.rate - worst
    return {
        "kind": design.kind,
        "rate": design.rate,
        "eigenvalues": _cplx(full),
        "quotient_eigenvalues": _cplx(ev_obs),
        "unobservable_eigenvalues": _cplx(ev_unobs),
        "union_error": back,
        "union_forward_error": fwd,
        "union_ok": bool(back <= UNION_TOL),
        "upper_block_norm": float(np.max(np.abs(B12))) if B12.size else 0.0,
        "worst": worst,
        "margin": margin,
    }


def _cplx(z):
    return [[float(v.real), float(v.imag)] for v in np.asarray(z, complex)]


def lyapunov_residual(snapshot: NetworkSnapshot, stacked: StackedDecomposition) -> dict:
    """Frobenius residual of H X + X'H = V'(L (x) I)V with X = V'(I - S (x) I)V,
    and max eigenvalue of B'RB - R with B = V'(S (x) I)V, R = V'(Pi (x) I)V."""
    if stacked.n_bar == 0:
        return {"identity_residual": 0.0, "contraction_max_eig": -math.inf, "coupling_min_eig": math.inf}
    n = stacked.n
    V = stacked.V
    Sbar = np.kron(snapshot.S, np.eye(n))
    X = V.T @ (np.eye(Sbar.shape[0]) - Sbar) @ V
    H = np.diag(np.concatenate([np.full(k, snapshot.pi[i]) for i, k in enumerate(stacked.sizes)]))
    VLV = V.T @ np.kron(snapshot.L, np.eye(n)) @ V
    resid = float(np.linalg.norm(H @ X + X.T @ H - VLV))
    B = V.T @ Sbar @ V
    R = V.T @ np.kron(snapshot.Pi, np.eye(n)) @ V
    D = B.T @ R @ B - R
    return {
        "identity_residual": resid,
        "contraction_max_eig": float(np.linalg.eigvalsh(0.5 * (D + D.T))[-1]),
        "coupling_min_eig": float(np.linalg.eigvalsh(0.5 * (VLV + VLV.T))[0]),
        "generator_abscissa": mk.spectral_abscissa(-X),
    }


# ----------------------------------------------------------------------------
# certificate suite


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float | None = None
    detail: str = ""


@dataclass
class CheckReport:
    results: list = field(default_factory=list)

    def add(self, name, passed, value=None, detail=""):
        self.results.append(CheckResult(name, bool(passed), None if value is None else float(value), detail))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [asdict(r) for r in self.results]}

    def table(self) -> str:
        w = max((len(r.name) for r in self.results), default=4)
        lines = [f"{'check':<{w}}  status  value"]
        for r in self.results:
            v = "" if r.value is None else f"{r.value:.3e}"
            lines.append(f"{r.name:<{w}}  {'PASS' if r.passed else 'FAIL':<6}  {v}  {r.detail}".rstrip())
        return "\n".join(lines)


def check_design(design, snapshots, coupling: bool = True) -> CheckReport:
    """Structural identities, rate margins and the regime certificate.

    ``coupling=False`` skips everything that depends on a static coupling
    gain (used for adaptive runs, where g evolves).
    """
    rep = CheckReport()
    kind = design.kind
    for d in design.decs:
        worst = max(d.residuals().values(), default=0.0)
        rep.add(f"agent{d.index + 1}.identities", worst <= 1e-8, worst)
        marg = rate_margin(d, design.rate, kind)
        rep.add(f"agent{d.index + 1}.rate_margin", marg >= -1e-9, marg if math.isfinite(marg) else None)
    st = stack(design.decs)
    sres = max(st.residuals().values(), default=0.0)
    rep.add("stacked.identities", sres <= 1e-8, sres)
    for k, snap in enumerate(snapshots, start=1):
        lr = lyapunov_residual(snap, st)
        rep.add(f"graph{k}.lyapunov_identity", lr["identity_residual"] <= 1e-9, lr["identity_residual"])
        rep.add(f"graph{k}.contraction", lr["contraction_max_eig"] < 0, lr["contraction_max_eig"])
        sp = spectrum_report(design, snap)
        rep.add(f"graph{k}.spectrum_union", sp["union_ok"], sp["union_error"])
        if coupling and (kind == "discrete" or design.regime in ("fixed", "arbitrary")):
            rep.add(f"graph{k}.spectrum_margin", sp["margin"] >= -1e-6, sp["margin"])
    if kind == "continuous" and coupling:
        if design.regime == "fixed":
            cert = certify_gain_fixed(st, snapshots[0], design.rate, design.g)
            rep.add("gain.abscissa_certificate", cert.certified, cert.margin)
            meets = design.g >= design.bound.g * (1 - 1e-12)
            rep.add("gain.sufficient_bound", True, design.g - design.bound.g,
                    "g meets the sufficient bound" if meets else "g below the sufficient bound (informational)")
        elif design.regime == "dwell":
            res = certify_dwell_constants(st, snapshots, design.bound)
            rep.add("gain.dwell_constants", res["passed"], res["worst_ratio"])
            rep.add("gain.dwell_bound", design.g >= res["required_g"] * (1 - 1e-12), design.g - res["required_g"])
        else:
            rep.add("gain.arbitrary_certificate", design.bound.certified and design.g >= design.bound.g * (1 - 1e-12),
                    design.bound.margin)
    elif kind == "discrete":
        for choice in (design.choice, design.alternative):
            if choice is not None:
                rep.add(f"q.{choice.method}_certificate", choice.certified, choice.q)
    return rep


def clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer, np.bool_)):
        return obj.item()
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True)
