"""Observer parameter synthesis.

Per-agent injection gains at a prescribed rate, the network coupling gain
``g`` for fixed, dwell-time and doubly-stochastic arbitrary switching, and
the number ``q`` of consensus rounds per event for the discrete estimator.
Every returned value carries a certificate that was re-evaluated after
selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import matrixkit as mk
from .decomposition import AgentDecomposition, StackedDecomposition, set_injection_gain
from .errors import CouplingDegenerate, EmptyFamily
from .netgraph import NetworkSnapshot, require_doubly_stochastic, strongly_connected

CERT_TOL = 1e-9
DWELL_SAFETY = 0.99
Q_SEARCH_LIMIT = 10_000


# ----------------------------------------------------------------------------
# injection gains


def synth_gain(dec: AgentDecomposition, rate: float, kind: str = "continuous") -> AgentDecomposition:
    """Quotient gain so that A_bar + K_bar C_bar decays at least at ``rate``.

    continuous: Riccati design on the shifted pair (A_bar + rate I, C_bar),
    so the closed-loop abscissa is strictly below -rate.
    discrete: Riccati design on (A_bar / rate, C_bar) then scale by rate,
    so the closed-loop spectral radius is strictly below rate.
    """
    k = dec.A_bar.shape[0]
    if k == 0:
        return set_injection_gain(dec, np.zeros((0, dec.C.shape[0])))
    if kind == "continuous":
        if rate < 0:
            raise ValueError("continuous rate must be nonnegative")
        K_bar = mk.injection_gain(dec.A_bar + rate * np.eye(k), dec.C_bar, "continuous")
    elif kind == "discrete":
        if not 0 < rate < 1:
            raise ValueError("discrete rate must lie in (0, 1)")
        K_bar = rate * mk.injection_gain(dec.A_bar / rate, dec.C_bar, "discrete")
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return set_injection_gain(dec, K_bar)


def rate_margin(dec: AgentDecomposition, rate: float, kind: str) -> float:
    """Distance by which the quotient closed loop beats the rate (>= 0 is good)."""
    spectrum = mk.eigenvalues(dec.quotient_closed_loop)
    if len(spectrum) == 0:
        return math.inf
    if kind == "continuous":
        return -rate - spectrum.abscissa
    return rate - spectrum.radius


# ----------------------------------------------------------------------------
# coupling gain g


@dataclass(frozen=True)
class GainBound:
    g: float
    regime: str
    rate: float
    numerator: float = 0.0
    denominator: float = 0.0
    clamped: bool = False
    certified: bool = True
    margin: float = math.inf
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "g": self.g,
            "regime": self.regime,
            "rate": self.rate,
            "numerator": self.numerator,
            "denominator": self.denominator,
            "clamped": self.clamped,
            "certified": self.certified,
            "margin": self.margin,
            **self.details,
        }


def stacked_H(stacked: StackedDecomposition, pi) -> np.ndarray:
    """block diag {pi_i I_{n_i}}."""
    return np.diag(np.repeat(np.asarray(pi, dtype=float), stacked.sizes))


def lyapunov_gap(stacked: StackedDecomposition, snapshot: NetworkSnapshot, rate: float, g: float) -> float:
    """Max eigenvalue of H(rate I + A~) + (.)'H - g V'(L (x) I_n)V."""
    nb = stacked.n_bar
    if nb == 0:
        return -math.inf
    H = stacked_H(stacked, snapshot.pi)
    shifted = rate * np.eye(nb) + stacked.A_tilde
    VLV = stacked.V.T @ np.kron(snapshot.L, np.eye(stacked.n)) @ stacked.V
    M = H @ shifted + shifted.T @ H - g * VLV
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def unobservable_abscissa(stacked: StackedDecomposition, S, g: float) -> float:
    """Spectral abscissa of A~ - g V'(I - S (x) I_n)V."""
    if stacked.n_bar == 0:
        return -math.inf
    return mk.spectral_abscissa(stacked.A_tilde + g * stacked.consensus_generator(S))


def certify_gain_fixed(stacked, snapshot, rate, g) -> GainBound:
    """A posteriori certificate for a given g on a fixed graph."""
    absc = unobservable_abscissa(stacked, snapshot.S, g)
    return GainBound(
        g=float(g), regime="fixed", rate=rate,
        certified=bool(absc + rate <= CERT_TOL),
        margin=-(absc + rate),
        details={"abscissa": absc, "lyapunov_gap": lyapunov_gap(stacked, snapshot, rate, g)},
    )


def gain_bound_fixed(stacked: StackedDecomposition, snapshot: NetworkSnapshot, rate: float) -> GainBound:
    """Sufficient g from the Lyapunov identity with H = blockdiag{pi_i I}.

    g = lambda_max(H(rate I + A~) + (.)'H) / lambda_min(V'(L (x) I_n)V),
    clamped at 0 when the numerator is negative.
    """
    if stacked.n_bar == 0:
        return GainBound(0.0, "fixed", rate, details={"abscissa": -math.inf})
    if not strongly_connected(snapshot.graph):
        raise ValueError("fixed-graph gain bound needs a strongly connected graph")
    nb = stacked.n_bar
    H = stacked_H(stacked, snapshot.pi)
    shifted = rate * np.eye(nb) + stacked.A_tilde
    num = float(np.linalg.eigvalsh(H @ shifted + shifted.T @ H)[-1])
    VLV = stacked.V.T @ np.kron(snapshot.L, np.eye(stacked.n)) @ stacked.V
    den = float(np.linalg.eigvalsh(0.5 * (VLV + VLV.T))[0])
    if den <= 1e-12:
        raise CouplingDegenerate(f"lambda_min(V'(L (x) I)V) = {den:.3e}; joint observability lost?")
    g = max(0.0, num / den)
    cert = certify_gain_fixed(stacked, snapshot, rate, g)
    gap = cert.details["lyapunov_gap"]
    return replace(
        cert,
        numerator=num,
        denominator=den,
        clamped=num < 0,
        certified=cert.certified and gap <= CERT_TOL * max(1.0, abs(num)),
    )


# -- dwell / average dwell ----------------------------------------------------


def transient_constant(M, decay: float, dt: float | None = None) -> float:
    """Smallest c (up to grid inflation) with ||exp(M t)||_2 <= c exp(-decay t), t >= 0.

    ``decay`` must be below the true decay rate of M. The product
    f(t) = ||exp(M t)|| exp(decay t) is scanned on a grid until it drops
    to <= 1 at some T; by the semigroup property sup over [0, inf) equals
    sup over [0, T]. Between grid points f can grow by at most
    exp((||M|| + decay) dt), which inflates the grid maximum.
    """
    M = np.asarray(M, dtype=float)
    normM = mk.induced_two_norm(M)
    if dt is None:
        dt = min(0.05, 0.1 / max(normM + decay, 1e-12))
    step = mk.matrix_exponential(M * dt)
    E = np.eye(M.shape[0])
    best = 1.0
    t = 0.0
    for _ in range(2_000_000):
        E = E @ step
        t += dt
        f = mk.induced_two_norm(E) * math.exp(decay * t)
        best = max(best, f)
        if f <= 1.0:
            break
    else:
        raise ArithmeticError("transient bound did not settle; decay too close to the spectral abscissa")
    return best * math.exp((normM + decay) * dt)


def gain_bound_dwell(
    stacked: StackedDecomposition,
    family: Sequence[NetworkSnapshot],
    tau_d: float,
    rate: float,
) -> GainBound:
    """g >= (ln c + (rate + ||A~|| c) tau_d) / (lambda* tau_d).

    lambda* is 0.99 times the smallest decay margin of -V'(I - S(k))V over
    the family; c bounds ||exp(-V'(I - S(k))V t)|| e^{lambda* t} for all
    members. ``tau_d = inf`` gives the fixed-graph limit.
    """
    if not family:
        raise EmptyFamily("dwell-time gain bound needs at least one graph")
    if not tau_d > 0:
        raise ValueError("tau_d must be positive")
    if stacked.n_bar == 0:
        return GainBound(0.0, "dwell", rate, details={"c": 1.0, "lambda_star": math.inf, "tau_d": tau_d})
    gens = [stacked.consensus_generator(s.S) for s in family]
    absc = [mk.spectral_abscissa(G) for G in gens]
    if max(absc) >= 0:
        raise ValueError("a family member's consensus generator is not stable (graph not strongly connected?)")
    lam_star = DWELL_SAFETY * min(-a for a in absc)
    c = max(transient_constant(G, lam_star) for G in gens)
    c = max(c, 1.0 + 1e-12)
    normA = mk.induced_two_norm(stacked.A_tilde)
    if math.isinf(tau_d):
        g = (rate + normA * c) / lam_star
    else:
        g = (math.log(c) + (rate + normA * c) * tau_d) / (lam_star * tau_d)
    return GainBound(
        g=g, regime="dwell", rate=rate,
        numerator=(math.log(c) + (rate + normA * c) * tau_d) if not math.isinf(tau_d) else rate + normA * c,
        denominator=lam_star * tau_d if not math.isinf(tau_d) else lam_star,
        details={"c": c, "lambda_star": lam_star, "norm_A_tilde": normA, "tau_d": tau_d,
                 "member_abscissas": absc},
    )


def certify_dwell_constants(stacked, family, bound: GainBound, grid=None) -> dict:
    """Independent re-check of ||exp(G t)|| <= c exp(-lambda* t) on a fine grid
    and of g against the formula."""
    c = bound.details["c"]
    lam = bound.details["lambda_star"]
    if stacked.n_bar == 0:
        return {"passed": True, "worst_ratio": 0.0}
    worst = 0.0
    for s in family:
        G = stacked.consensus_generator(s.S)
        ts = np.linspace(0.0, 20.0 / lam, 4001) if grid is None else grid
        for t in ts:
            E = sla.expm(G * t)
            worst = max(worst, np.linalg.norm(E, 2) * math.exp(lam * t) / c)
    tau = bound.details["tau_d"]
    normA = bound.details["norm_A_tilde"]
    if math.isinf(tau):
        need = (bound.rate + normA * c) / lam
    else:
        need = (math.log(c) + (bound.rate + normA * c) * tau) / (lam * tau)
    return {"passed": bool(worst <= 1.0 + 1e-9 and bound.g >= need * (1 - 1e-12) and c > 1),
            "worst_ratio": worst, "required_g": need}


# -- arbitrary switching, doubly stochastic -------------------------------------


def gain_bound_arbitrary(stacked: StackedDecomposition, family: Sequence[NetworkSnapshot], rate: float) -> GainBound:
    """g making the symmetric part of rate I + A_V(t) negative semidefinite
    for every doubly stochastic member of the family."""
    if not family:
        raise EmptyFamily("arbitrary-switching gain bound needs at least one graph")
    require_doubly_stochastic(family)
    if stacked.n_bar == 0:
        return GainBound(0.0, "arbitrary", rate)
    nb = stacked.n_bar
    shifted = rate * np.eye(nb) + stacked.A_tilde
    num = float(np.linalg.eigvalsh(shifted + shifted.T)[-1])
    per_member = []
    for s in family:
        m = s.m
        Lsym = 2 * np.eye(m) - s.S - s.S.T
        W = stacked.V.T @ np.kron(Lsym, np.eye(stacked.n)) @ stacked.V
        den = float(np.linalg.eigvalsh(0.5 * (W + W.T))[0])
        if den <= 1e-12:
            raise CouplingDegenerate(f"member coupling lambda_min = {den:.3e}")
        per_member.append((num / den, den))
    g = max(0.0, max(v for v, _ in per_member))
    worst = -math.inf
    for s in family:
        AV = shifted + g * stacked.consensus_generator(s.S)
        worst = max(worst, mk.sym_eig_extremes(AV)[1])
    return GainBound(
        g=g, regime="arbitrary", rate=rate, numerator=num,
        denominator=min(d for _, d in per_member), clamped=num < 0,
        certified=bool(worst <= CERT_TOL * max(1.0, abs(num))), margin=-worst,
        details={"max_sym_eig": worst},
    )


# ----------------------------------------------------------------------------
# consensus rounds q


def weighted_norm(M, R) -> float:
    """||M||_R = largest singular value of R^{1/2} M R^{-1/2}."""
    if np.asarray(M).size == 0:
        return 0.0
    w, U = np.linalg.eigh(R)
    Rh = (U * np.sqrt(w)) @ U.T
    Rmh = (U / np.sqrt(w)) @ U.T
    return mk.induced_two_norm(Rh @ M @ Rmh)


def weighted_norm_check(M, R) -> float:
    """Same norm as ``weighted_norm`` via the pencil (M'RM, R); used for re-checks."""
    if np.asarray(M).size == 0:
        return 0.0
    mu = sla.eigh(M.T @ R @ M, R, eigvals_only=True)
    return float(math.sqrt(max(mu[-1], 0.0)))


def mixed_norm(M, row_sizes, col_sizes) -> float:
    """||<M>||_inf where <M>_ij = ||M_ij||_2 over the given block partition."""
    M = np.asarray(M, dtype=float)
    ri = np.concatenate([[0], np.cumsum(row_sizes)]).astype(int)
    ci = np.concatenate([[0], np.cumsum(col_sizes)]).astype(int)
    if ri[-1] != M.shape[0] or ci[-1] != M.shape[1]:
        raise ValueError("block partition does not match matrix shape")
    best = 0.0
    for a in range(len(row_sizes)):
        row = 0.0
        for b in range(len(col_sizes)):
            row += mk.induced_two_norm(M[ri[a]:ri[a + 1], ci[b]:ci[b + 1]])
        best = max(best, row)
    return best


def mixed_norm_check(M, row_sizes, col_sizes) -> float:
    """``mixed_norm`` recomputed with eigenvalues of block Gram matrices."""
    M = np.asarray(M, dtype=float)
    ri = np.cumsum([0, *row_sizes])
    ci = np.cumsum([0, *col_sizes])
    G = np.zeros((len(row_sizes), len(col_sizes)))
    for a in range(len(row_sizes)):
        for b in range(len(col_sizes)):
            blk = M[ri[a]:ri[a + 1], ci[b]:ci[b + 1]]
            if blk.size:
                G[a, b] = math.sqrt(max(np.linalg.eigvalsh(blk.T @ blk)[-1], 0.0))
    return float(np.abs(G).sum(axis=1).max()) if G.size else 0.0


@dataclass(frozen=True)
class QChoice:
    q: int
    method: str
    p: int = 1
    p_bar: int = 1
    certified: bool = True
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"q": self.q, "method": self.method, "p": self.p, "p_bar": self.p_bar,
                "certified": self.certified, **self.details}


def _R(stacked, snapshot):
    return stacked.V.T @ np.kron(snapshot.Pi, np.eye(stacked.n)) @ stacked.V


def choose_q_weighted(stacked: StackedDecomposition, snapshots, rate: float) -> QChoice:
    """Rounds per event from the weighted two-norm.

    One snapshot: smallest q with ||B||_R^q ||A~||_R <= rate.
    Several: p with |B_k^p|_2 < 1 for all k, then smallest p_bar with
    |A~ (B_k^p)^p_bar|_2 <= rate for all k; q = p * p_bar.
    """
    if isinstance(snapshots, NetworkSnapshot):
        snapshots = [snapshots]
    if not snapshots:
        raise EmptyFamily("choose_q_weighted needs at least one snapshot")
    if stacked.n_bar == 0:
        return QChoice(1, "weighted")
    At = stacked.A_tilde
    if len(snapshots) == 1:
        snap = snapshots[0]
        R = _R(stacked, snap)
        B = stacked.mixing_block(snap.S)
        nb = weighted_norm(B, R)
        na = weighted_norm(At, R)
        if na == 0.0 or nb == 0.0:
            q = 1
        else:
            if nb >= 1:
                raise ArithmeticError(f"||B||_R = {nb} >= 1; graph not strongly connected?")
            q = max(1, math.ceil(math.log(rate / na) / math.log(nb) - 1e-12))
            while nb ** q * na > rate:
                q += 1
        # independent re-evaluation through the generalized eigenproblem
        nb2 = weighted_norm_check(B, R)
        na2 = weighted_norm_check(At, R)
        direct = weighted_norm_check(At @ np.linalg.matrix_power(B, q), R)
        ok = nb2 ** q * na2 <= rate * (1 + 1e-9) and direct <= rate * (1 + 1e-9)
        return QChoice(q, "weighted", 1, q, ok, {
            "norm_B": nb, "norm_A_tilde": na, "bound": nb ** q * na, "direct_norm": direct})
    Bs = [stacked.mixing_block(s.S) for s in snapshots]
    p = 1
    while not all(mk.induced_two_norm(np.linalg.matrix_power(B, p)) < 1 for B in Bs):
        p += 1
        if p > Q_SEARCH_LIMIT:
            raise ArithmeticError("no p with |B^p|_2 < 1 found")
    Bp = [np.linalg.matrix_power(B, p) for B in Bs]
    p_bar = 1
    while not all(mk.induced_two_norm(At @ np.linalg.matrix_power(X, p_bar)) <= rate for X in Bp):
        p_bar += 1
        if p_bar > Q_SEARCH_LIMIT:
            raise ArithmeticError("no p_bar found")
    q = p * p_bar
    direct = [math.sqrt(max(np.linalg.eigvalsh((At @ np.linalg.matrix_power(B, q)).T
                                               @ (At @ np.linalg.matrix_power(B, q)))[-1], 0.0))
              for B in Bs]
    ok = max(direct) <= rate * (1 + 1e-9)
    return QChoice(q, "weighted", p, p_bar, ok, {"direct_norms": direct})


def choose_q_mixed(stacked: StackedDecomposition, snapshots, rate: float) -> QChoice:
    """Rounds per event from the mixed matrix norm.

    p = (m-1)^2 (at least 1), then the smallest p_bar with
    ||B_k^p||^p_bar <= rate / ||A~|| for every member; q = p * p_bar.
    If some ||B_k^p|| is not below one at that p, p is doubled until it is
    and the escalation is recorded.
    """
    if isinstance(snapshots, NetworkSnapshot):
        snapshots = [snapshots]
    if not snapshots:
        raise EmptyFamily("choose_q_mixed needs at least one snapshot")
    m = stacked.m
    p = max(1, (m - 1) ** 2)
    if stacked.n_bar == 0:
        return QChoice(p, "mixed", p, 1)
    sizes = stacked.sizes
    At = stacked.A_tilde
    na = mixed_norm(At, sizes, sizes)
    Bs = [stacked.mixing_block(s.S) for s in snapshots]
    p0 = p
    while True:
        nbp = [mixed_norm(np.linalg.matrix_power(B, p), sizes, sizes) for B in Bs]
        if max(nbp) < 1:
            break
        p *= 2
        if p > Q_SEARCH_LIMIT:
            raise ArithmeticError("mixed norm of B^p never dropped below 1")
    p_bars = []
    for v in nbp:
        if na == 0.0 or v == 0.0:
            p_bars.append(1)
            continue
        pb = max(1, math.ceil(math.log(rate / na) / math.log(v) - 1e-12))
        while v ** pb * na > rate:
            pb += 1
        p_bars.append(pb)
    p_bar = max(p_bars)
    q = p * p_bar
    nbp2 = [mixed_norm_check(np.linalg.matrix_power(B, p), sizes, sizes) for B in Bs]
    na2 = mixed_norm_check(At, sizes, sizes)
    ok = all(v ** p_bar * na2 <= rate * (1 + 1e-9) for v in nbp2)
    return QChoice(q, "mixed", p, p_bar, ok, {
        "norm_A_tilde": na, "norm_Bp": nbp, "p_escalated": p != p0})


# ----------------------------------------------------------------------------
# design containers


@dataclass(frozen=True)
class ContinuousDesign:
    rate: float
    decs: tuple
    g: float
    regime: str = "fixed"
    tau_d: float | None = None
    delta0: float | None = None
    bound: GainBound | None = None

    @property
    def kind(self) -> str:
        return "continuous"


@dataclass(frozen=True)
class DiscreteDesign:
    rate: float
    decs: tuple
    q: int
    method: str = "weighted"
    choice: QChoice | None = None
    alternative: QChoice | None = None

    @property
    def kind(self) -> str:
        return "discrete"

    def __post_init__(self):
        if int(self.q) < 1:
            raise ValueError("q must be a positive integer")


# ----------------------------------------------------------------------------
# end-to-end builders


def _gained(plant, rate, kind, K=None, Qs=None):
    from .decomposition import decompose, set_full_gain

    decs = decompose(plant, Qs)
    if K is None:
        return tuple(synth_gain(d, rate, kind) for d in decs)
    if len(K) != len(decs):
        raise ValueError("need one gain per agent")
    return tuple(set_full_gain(d, np.asarray(k, dtype=float).reshape(plant.n, -1)) for d, k in zip(decs, K))


def design_continuous(plant, graphs, rate, regime="fixed", K=None, g=None, Qs=None,
                      tau_d=None, delta0=None, weights="uniform") -> ContinuousDesign:
    """Gains plus coupling gain for one connectivity regime.

    ``K`` (full-coordinate gains) and ``g`` are synthesized when omitted;
    a supplied ``g`` is kept and the regime bound is still reported.
    """
    from .decomposition import stack

    decs = _gained(plant, rate, "continuous", K, Qs)
    st = stack(decs)
    snaps = [NetworkSnapshot.from_graph(gr, weights) for gr in graphs]
    if regime == "fixed":
        bound = gain_bound_fixed(st, snaps[0], rate)
    elif regime == "dwell":
        bound = gain_bound_dwell(st, snaps, math.inf if tau_d is None else tau_d, rate)
    elif regime == "arbitrary":
        bound = gain_bound_arbitrary(st, snaps, rate)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return ContinuousDesign(rate, decs, bound.g if g is None else float(g), regime, tau_d, delta0, bound)


def design_discrete(plant, graphs, rate, K=None, q=None, Qs=None, method="weighted",
                    weights="uniform") -> DiscreteDesign:
    """Gains plus round count; both q procedures are always run and reported."""
    from .decomposition import stack

    decs = _gained(plant, rate, "discrete", K, Qs)
    st = stack(decs)
    snaps = [NetworkSnapshot.from_graph(gr, weights) for gr in graphs]
    weighted = choose_q_weighted(st, snaps, rate)
    mixed = choose_q_mixed(st, snaps, rate)
    chosen, other = (weighted, mixed) if method == "weighted" else (mixed, weighted)
    return DiscreteDesign(rate, decs, chosen.q if q is None else int(q), method, chosen, other)
