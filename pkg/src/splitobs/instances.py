"""Reference instances and seeded random generators.

The three-agent reference plant is two decoupled oscillators (frequencies
1 and sqrt 2); agents 1 and 2 each see one coordinate of the first, agent
3 sees the second. Two stand-in topologies are provided: a directed ring
with one chord, and the bare ring.
"""

from __future__ import annotations

import numpy as np

from .decomposition import Plant, joint_observability
from .matrixkit import numerical_rank, observability_matrix
from .netgraph import NeighborGraph, strongly_connected

OSC_A = np.array([[0.0, 1.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, -2.0, 0.0]])
OSC_C = tuple(np.eye(4)[[k]] for k in range(3))
OSC_Q = (
    np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]),
    np.array([[-1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]),
    np.array([[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]]),
)
OSC_V = (np.eye(4)[:, [2, 3]], np.eye(4)[:, [2, 3]], np.eye(4)[:, [0, 1]])
OSC_QUOTIENT = (
    np.array([[0.0, -1.0], [1.0, 0.0]]),
    np.array([[0.0, -1.0], [1.0, 0.0]]),
    np.array([[0.0, -2.0], [1.0, 0.0]]),
)

CT_GAINS = (np.array([-5.0, -5.0, 0.0, 0.0]), np.array([5.0, -5.0, 0.0, 0.0]), np.array([0.0, 0.0, -5.0, -4.0]))
CT_RATE = 1.0
CT_G = 10.0
CT_TAU_D = 0.0369

DT_GAINS = (np.array([0.7, 0.88, 0.0, 0.0]), np.array([-0.8, 0.7, 0.0, 0.0]), np.array([0.0, 0.0, 0.7, 1.88]))
DT_RATE = 0.5
DT_Q = 6

# 0-based (j, i): j is a neighbor of i
RING_CHORD_ARCS = ((0, 1), (1, 2), (2, 0), (0, 2))
RING_ARCS = ((0, 1), (1, 2), (2, 0))


def oscillator_plant(kind: str = "continuous", sample_period: float = 1.0) -> Plant:
    return Plant(OSC_A, OSC_C, kind, sample_period)


def ring_chord_graph() -> NeighborGraph:
    return NeighborGraph.from_arcs(3, RING_CHORD_ARCS)


def ring_graph() -> NeighborGraph:
    return NeighborGraph.from_arcs(3, RING_ARCS)


def random_strong_digraph(m: int, rng, extra: float = 0.3) -> NeighborGraph:
    """A random Hamiltonian cycle (so strongly connected) plus random chords."""
    perm = rng.permutation(m)
    arcs = {(int(perm[k]), int(perm[(k + 1) % m])) for k in range(m)} if m > 1 else set()
    for j in range(m):
        for i in range(m):
            if j != i and rng.random() < extra:
                arcs.add((j, i))
    g = NeighborGraph.from_arcs(m, arcs)
    assert strongly_connected(g)
    return g


def random_digraph(m: int, rng, density: float = 0.35) -> NeighborGraph:
    """Erdos-Renyi digraph with self-loops; may or may not be strongly connected."""
    arcs = {(j, i) for j in range(m) for i in range(m) if j != i and rng.random() < density}
    return NeighborGraph.from_arcs(m, arcs)


def random_symmetric_graph(m: int, rng, extra: float = 0.3) -> NeighborGraph:
    g = random_strong_digraph(m, rng, extra)
    return NeighborGraph(m, g.arcs | {(i, j) for j, i in g.arcs})


def random_stochastic(m: int, rng) -> np.ndarray:
    """Row-stochastic matrix with positive diagonal and strongly connected pattern."""
    pattern = random_strong_digraph(m, rng).adjacency().T
    W = pattern * rng.uniform(0.1, 1.0, size=(m, m))
    return W / W.sum(axis=1, keepdims=True)


def random_joint_plant(n: int, m: int, rng, kind: str = "continuous", max_tries: int = 500,
                       min_gap: float = 1e-2) -> Plant:
    """Jointly observable plant where typically no single agent observes everything.

    The state is split into random groups of modes; agent i measures a
    random combination of the coordinates in one group, and the result is
    rotated by a random orthogonal change of coordinates so that
    unobservable subspaces are not axis aligned. Numerically degenerate
    draws (observability singular values below ``min_gap`` relative) are
    rejected.
    """
    for _ in range(max_tries):
        A = rng.normal(size=(n, n))
        blocks = _random_blocks(n, m, rng)
        A_blk = np.zeros((n, n))
        for b in blocks:
            A_blk[np.ix_(b, b)] = A[np.ix_(b, b)]
        if rng.random() < 0.5:
            # lower block-triangular coupling keeps some subspaces A-invariant
            for k in range(1, len(blocks)):
                A_blk[np.ix_(blocks[k], blocks[k - 1])] = 0.3 * rng.normal(size=(len(blocks[k]), len(blocks[k - 1])))
        # normalize after imposing structure: spectral radius 1.2 (discrete) or 1 (continuous)
        rho = float(np.max(np.abs(np.linalg.eigvals(A_blk))))
        if rho < 1e-6:
            continue
        A_blk *= (1.2 if kind == "discrete" else 1.0) / rho
        Cs = []
        for i in range(m):
            b = blocks[i % len(blocks)]
            s = 1 if rng.random() < 0.8 else 2
            Ci = np.zeros((s, n))
            Ci[:, b] = rng.normal(size=(s, len(b)))
            Cs.append(Ci)
        U, _ = np.linalg.qr(rng.normal(size=(n, n)))
        A_rot = U @ A_blk @ U.T
        Cs = [Ci @ U.T for Ci in Cs]
        plant = Plant(A_rot, tuple(Cs), kind)
        if joint_observability(plant) and _well_conditioned(plant, min_gap):
            return plant
    raise RuntimeError("could not draw a jointly observable plant")


def _well_conditioned(plant: Plant, min_gap: float) -> bool:
    """Observable directions of every agent, and of the stack, are
    separated from the numerical kernel by at least ``min_gap`` (relative)."""
    mats = [observability_matrix(plant.A, Ci) for Ci in plant.C]
    mats.append(observability_matrix(plant.A, np.vstack(plant.C)))
    for O in mats:
        s = np.linalg.svd(O, compute_uv=False)
        r = numerical_rank(O)
        if r == 0 or s[r - 1] < min_gap * s[0]:
            return False
    return True


def _random_blocks(n: int, m: int, rng) -> list:
    k = min(n, m)
    cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False)) if k > 1 else np.array([], dtype=int)
    order = rng.permutation(n)
    return [list(map(int, b)) for b in np.split(order, cuts)]


def random_continuous_scenario(n: int, m: int, rng, horizon: float = 5.0, h: float = 0.05,
                               switching: bool = True, rate: float = 0.5):
    """Random plant, two strongly connected graphs and a dwell-time signal.

    g comes from the fixed-graph bound on the first graph; the scenario is
    meant for propagation checks, not for rate certification.
    """
    from .designer import design_continuous
    from .simulator import Scenario
    from .switching import SwitchingSignal, generate

    plant = random_joint_plant(n, m, rng)
    graphs = (random_strong_digraph(m, rng), random_strong_digraph(m, rng))
    design = design_continuous(plant, graphs[:1], rate)
    seed = int(rng.integers(2**31))
    signal = (generate("dwell", 2, horizon, seed=seed, tau_d=0.5) if switching
              else SwitchingSignal.constant(0, horizon, 2))
    return Scenario(plant, design, graphs, signal, rng.normal(size=n), rng.normal(size=(m, n)), horizon, h)


def random_discrete_scenario(n: int, m: int, rng, horizon: int = 25, rate: float = 0.5, method: str = "weighted"):
    """Random discrete plant on one strongly connected graph, q from ``method``."""
    from .designer import design_discrete
    from .simulator import Scenario
    from .switching import SwitchingSignal

    plant = random_joint_plant(n, m, rng, kind="discrete")
    graph = random_strong_digraph(m, rng)
    design = design_discrete(plant, (graph,), rate, method=method)
    signal = SwitchingSignal.constant(0, float(horizon), 1)
    return Scenario(plant, design, (graph,), signal, rng.normal(size=n), rng.normal(size=(m, n)), float(horizon), 1.0)
