import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitobs import instances as ref
from splitobs.errors import MissingSelfLoop, NotDoublyStochastic, NotIrreducible, NotSymmetricGraph
from splitobs.netgraph import (
    NeighborGraph,
    NetworkSnapshot,
    discrete_laplacian,
    flow_matrix,
    generalized_laplacian_of,
    is_doubly_stochastic,
    metropolis_weights,
    perron_vector,
    require_doubly_stochastic,
    strongly_connected,
)


def closure_strongly_connected(g):
    """Warshall transitive closure: independent of the BFS implementation."""
    R = g.adjacency().astype(bool) | np.eye(g.m, dtype=bool)
    for k in range(g.m):
        R = R | (R[:, [k]] & R[[k], :])
    return bool(R.all())


def test_flow_matrix_ring_with_chord():
    S = flow_matrix(ref.ring_chord_graph())
    # agent 0 hears {0, 2}; agent 1 hears {0, 1}; agent 2 hears {0, 1, 2}
    expected = np.array([[0.5, 0, 0.5], [0.5, 0.5, 0], [1 / 3, 1 / 3, 1 / 3]])
    assert np.allclose(S, expected)


def test_flow_matrix_complete_graph():
    assert np.allclose(flow_matrix(NeighborGraph.complete(4)), np.full((4, 4), 0.25))


def test_flow_matrix_needs_self_loops():
    with pytest.raises(MissingSelfLoop):
        flow_matrix(NeighborGraph(2, frozenset({(0, 1), (1, 0)})))


def test_arc_endpoints_checked():
    with pytest.raises(ValueError):
        NeighborGraph.from_arcs(2, [(0, 2)])


def test_self_loop_not_removable():
    with pytest.raises(ValueError):
        ref.ring_graph().without_arc(1, 1)


def test_neighbors_and_restriction():
    g = ref.ring_chord_graph()
    assert g.neighbors(2) == [0, 1, 2]
    sub = g.restricted([0, 2])
    assert sub.arcs == frozenset({(0, 0), (1, 1), (0, 1), (1, 0)})


def test_reference_graphs_strongly_connected():
    assert strongly_connected(ref.ring_chord_graph())
    assert strongly_connected(ref.ring_graph())
    assert not strongly_connected(ref.ring_graph().without_arc(0, 1))


@settings(max_examples=300)
@given(st.integers(1, 7), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_strong_connectivity_matches_closure(m, density, seed):
    g = ref.random_digraph(m, np.random.default_rng(seed), density)
    assert strongly_connected(g) == closure_strongly_connected(g)


@settings(max_examples=200)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_flow_matrix_row_stochastic(m, seed):
    g = ref.random_digraph(m, np.random.default_rng(seed))
    S = flow_matrix(g)
    assert np.allclose(S.sum(axis=1), 1) and np.all(S >= 0) and np.all(np.diag(S) > 0)
    assert np.array_equal(S > 0, g.adjacency().T > 0)


def test_perron_two_by_two():
    pi = perron_vector([[0.5, 0.5], [0.25, 0.75]])
    assert np.allclose(pi, [1 / 3, 2 / 3], atol=1e-12)


def test_perron_ring_chord():
    pi = perron_vector(flow_matrix(ref.ring_chord_graph()))
    # solve pi' S = pi' with sum one by hand: pi = (4, 2, 3) / 9
    assert np.allclose(pi, np.array([4, 2, 3]) / 9, atol=1e-12)


def test_perron_doubly_stochastic_is_uniform():
    assert np.allclose(perron_vector(flow_matrix(NeighborGraph.complete(5))), 0.2)


def test_perron_rejects_reducible():
    with pytest.raises(NotIrreducible):
        perron_vector([[1.0, 0.0], [0.5, 0.5]])


@settings(max_examples=200)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_perron_fixed_point(m, seed):
    S = ref.random_stochastic(m, np.random.default_rng(seed))
    pi = perron_vector(S)
    assert np.all(pi > 0) and pi.sum() == pytest.approx(1.0)
    assert np.max(np.abs(S.T @ pi - pi)) <= 1e-10


@settings(max_examples=200)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_generalized_laplacian_properties(m, seed):
    S = ref.random_stochastic(m, np.random.default_rng(seed))
    L = generalized_laplacian_of(S)
    ev = np.linalg.eigvalsh(L)
    assert np.allclose(L, L.T)
    assert np.max(np.abs(L @ np.ones(m))) <= 1e-10
    assert ev[0] >= -1e-10 and ev[1] > 1e-9  # PSD, one-dimensional kernel


@settings(max_examples=200)
@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_discrete_laplacian_properties(m, seed):
    M = ref.random_stochastic(m, np.random.default_rng(seed))
    Pi, L = discrete_laplacian(M)
    ev = np.linalg.eigvalsh(L)
    assert np.allclose(np.diag(Pi).sum(), 1)
    assert np.max(np.abs(L @ np.ones(m))) <= 1e-10
    assert ev[0] >= -1e-10 and ev[1] > 1e-9


def test_laplacian_of_complete_graph():
    S = np.full((3, 3), 1 / 3)
    L = generalized_laplacian_of(S)
    assert np.allclose(L, (2 / 3) * (np.eye(3) - S))


def test_metropolis_path_graph():
    g = NeighborGraph.from_arcs(3, [(0, 1), (1, 0), (1, 2), (2, 1)])
    W = metropolis_weights(g)
    expected = np.array([[2 / 3, 1 / 3, 0], [1 / 3, 1 / 3, 1 / 3], [0, 1 / 3, 2 / 3]])
    assert np.allclose(W, expected)


def test_metropolis_needs_symmetry():
    with pytest.raises(NotSymmetricGraph):
        metropolis_weights(ref.ring_graph())


@settings(max_examples=200)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_metropolis_doubly_stochastic(m, seed):
    g = ref.random_symmetric_graph(m, np.random.default_rng(seed))
    W = metropolis_weights(g)
    assert is_doubly_stochastic(W) and np.allclose(W, W.T) and np.all(np.diag(W) > 0)
    assert np.allclose(perron_vector(W), 1 / m)


def test_snapshot_weights_and_family_check():
    sym = NetworkSnapshot.from_graph(ref.random_symmetric_graph(4, np.random.default_rng(1)), "metropolis")
    require_doubly_stochastic([sym])
    with pytest.raises(NotDoublyStochastic):
        require_doubly_stochastic([sym, NetworkSnapshot.from_graph(ref.ring_chord_graph())])
    with pytest.raises(ValueError):
        NetworkSnapshot.from_graph(ref.ring_graph(), "bogus")


def test_snapshot_from_matrix_matches_graph():
    g = ref.ring_chord_graph()
    a, b = NetworkSnapshot.from_graph(g), NetworkSnapshot.from_matrix(flow_matrix(g))
    assert a.graph == b.graph and np.allclose(a.L, b.L) and np.allclose(a.pi, b.pi)
    with pytest.raises(ValueError):
        NetworkSnapshot.from_matrix([[0.5, 0.6], [0.5, 0.5]])
