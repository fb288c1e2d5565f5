import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitobs import instances as ref
from splitobs import matrixkit as mk
from splitobs.decomposition import (
    Plant,
    decompose,
    decompose_agent,
    joint_observability,
    set_full_gain,
    set_injection_gain,
    stack,
)
from splitobs.designer import synth_gain
from splitobs.errors import DimensionMismatch, IntertwiningViolated
from splitobs.netgraph import flow_matrix


def osc_decs(gains=ref.CT_GAINS, kind="continuous"):
    plant = ref.oscillator_plant(kind)
    return [set_full_gain(d, k) for d, k in zip(decompose(plant, ref.OSC_Q), gains)]


def test_agent1_matches_reference_decomposition(osc_plant):
    d = decompose_agent(osc_plant, 0, ref.OSC_Q[0])
    assert np.allclose(d.P, ref.OSC_V[0] @ ref.OSC_V[0].T)
    assert np.allclose(d.A_bar, ref.OSC_QUOTIENT[0])


def test_agent3_matches_reference_decomposition(osc_plant):
    d = decompose_agent(osc_plant, 2, ref.OSC_Q[2])
    assert np.allclose(d.P, ref.OSC_V[2] @ ref.OSC_V[2].T)
    assert np.allclose(d.A_bar, ref.OSC_QUOTIENT[2])


def test_reference_quotients_for_all_agents(osc_plant):
    for i in range(3):
        d = decompose_agent(osc_plant, i, ref.OSC_Q[i])
        assert np.allclose(ref.OSC_Q[i] @ osc_plant.A, d.A_bar @ ref.OSC_Q[i])
        assert np.allclose(d.A_bar, ref.OSC_QUOTIENT[i])


def test_default_q_is_orthonormal(osc_plant):
    d = decompose_agent(osc_plant, 1)
    assert np.allclose(d.Q @ d.Q.T, np.eye(2))
    assert np.allclose(d.Q_right_inv, d.Q.T)
    assert max(d.residuals().values()) <= 1e-12


def test_observable_agent_has_empty_unobservable_space(rng):
    A = rng.normal(size=(3, 3))
    d = decompose_agent(Plant(A, (np.eye(3),)), 0)
    assert d.V.shape == (3, 0)
    assert np.allclose(d.Q, np.eye(3)) and np.allclose(d.A_bar, A) and np.allclose(d.C_bar, np.eye(3))
    assert np.allclose(d.P, 0)


def test_agent_index_checked(osc_plant):
    with pytest.raises(IndexError):
        decompose_agent(osc_plant, 3)


def test_supplied_q_must_annihilate_v(osc_plant):
    with pytest.raises(IntertwiningViolated):
        decompose_agent(osc_plant, 0, ref.OSC_Q[2])
    with pytest.raises(DimensionMismatch):
        decompose_agent(osc_plant, 0, np.eye(4))


def test_agent1_reference_gain():
    d = osc_decs()[0]
    assert np.allclose(d.K_bar.ravel(), [-5, -5])
    assert sorted(np.linalg.eigvals(d.quotient_closed_loop).real) == pytest.approx([-3, -2])
    assert mk.spectral_abscissa(d.quotient_closed_loop) <= -1


def test_agent3_reference_gain():
    d = osc_decs()[2]
    assert np.allclose(d.K_bar.ravel(), [-4, -5])
    assert mk.spectral_abscissa(d.quotient_closed_loop) < -1


def test_zero_gain(osc_plant):
    d = set_injection_gain(decompose_agent(osc_plant, 0), np.zeros((2, 1)))
    assert np.allclose(d.K, 0)
    assert np.allclose(d.A_restricted, d.V.T @ osc_plant.A @ d.V)


def test_gain_inside_unobservable_space_rejected(osc_plant):
    d = decompose_agent(osc_plant, 0)
    with pytest.raises(IntertwiningViolated):
        set_full_gain(d, [0.0, 0.0, 1.0, 0.0])


def test_stack_single_agent(osc_plant):
    d = osc_decs()[0]
    s = stack([d])
    assert np.array_equal(s.V, d.V) and np.array_equal(s.A_tilde, d.A_restricted)


def test_stack_reference_three_agents():
    s = stack(osc_decs())
    assert s.n_bar == 6
    assert max(s.residuals().values()) <= 1e-9


def test_stack_of_observable_agents(rng):
    A = rng.normal(size=(3, 3))
    plant = Plant(A, (np.eye(3), np.eye(3)))
    s = stack([synth_gain(d, 1.0) for d in decompose(plant)])
    assert s.n_bar == 0 and np.allclose(s.P, 0) and s.A_tilde.shape == (0, 0)


def test_joint_observability_reference(osc_plant):
    rep = joint_observability(osc_plant)
    assert rep
    assert all(r < 4 for r in rep.agent_ranks)
    assert rep.intersection_dim == 0


def test_joint_observability_trivial_and_negative(rng):
    A = rng.normal(size=(3, 3))
    assert joint_observability(Plant(A, (np.eye(3),)))
    C = ref.OSC_C[0]
    rep = joint_observability(Plant(ref.OSC_A, (C, C, C)))
    assert not rep and rep.intersection_dim == 2


@settings(max_examples=500)
@given(st.integers(2, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_random_plant_invariants(n, m, seed):
    rng = np.random.default_rng(seed)
    plant = ref.random_joint_plant(n, m, rng)
    for i, d in enumerate(decompose(plant)):
        d = synth_gain(d, 0.5)
        assert max(d.residuals().values()) <= 1e-8
        rank = mk.numerical_rank(mk.observability_matrix(plant.A, plant.C[i]))
        assert d.n_unobs == n - rank


@settings(max_examples=100)
@given(st.integers(2, 5), st.integers(2, 4), st.floats(0, 20), st.integers(0, 2**32 - 1))
def test_block_triangular_split(n, m, g, seed):
    rng = np.random.default_rng(seed)
    plant = ref.random_joint_plant(n, m, rng)
    s = stack([synth_gain(d, 0.5) for d in decompose(plant)])
    S = flow_matrix(ref.random_strong_digraph(m, rng))
    M = s.continuous_error_map(S, g)
    (B11, B12), (_, B22) = s.split_blocks(M)
    assert np.max(np.abs(B12), initial=0.0) <= 1e-9 * max(1.0, np.linalg.norm(M))
    assert np.allclose(B11, s.A_bar_V, atol=1e-9)
    assert np.allclose(B22, s.A_tilde + g * s.consensus_generator(S), atol=1e-9 * max(1.0, g))
