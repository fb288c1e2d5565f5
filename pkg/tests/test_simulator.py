from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import splitobs.simulator as simmod
from splitobs import instances as ref
from splitobs import matrixkit as mk
from splitobs.analyzer import error_map
from splitobs.decomposition import Plant
from splitobs.designer import design_continuous
from splitobs.errors import FaultBreaksAssumptions, ToleranceNotMet
from splitobs.netgraph import NeighborGraph, NetworkSnapshot
from splitobs.scenario import parse_scenario
from splitobs.simulator import (
    Fault,
    InvalidSignal,
    Scenario,
    cash_karp_step,
    integrate_cash_karp,
    joint_generator,
    mixing_matrix,
    read_trace_csv,
    simulate,
    simulate_continuous,
    simulate_continuous_rk4,
    simulate_discrete,
)
from splitobs.switching import SwitchingSignal


def stacked_state(tr):
    return np.concatenate([tr.x, tr.xi.reshape(len(tr.times), -1)], axis=1)


@pytest.fixture(scope="module")
def ct_fixed():
    return parse_scenario("paper_4_1_fixed")


@pytest.fixture(scope="module")
def dt_fixed():
    return parse_scenario("paper_4_2_fixed")


def test_exact_initial_estimates_stay_exact(ct_fixed):
    sc = replace(ct_fixed, xi0=np.tile(ct_fixed.x0, (3, 1)), horizon=2.0)
    tr = simulate(sc)
    assert np.max(tr.e_norm) <= 1e-12 * np.max(np.abs(tr.x))


def test_exact_initial_estimates_stay_exact_discrete(dt_fixed):
    sc = replace(dt_fixed, xi0=np.tile(dt_fixed.x0, (3, 1)))
    assert np.max(simulate(sc).e_norm) <= 1e-12


def test_error_does_not_depend_on_plant_state(ct_fixed):
    # the error dynamics are autonomous: shifting x0 and every xi0 together changes nothing in e
    shift = np.array([3.0, -1.0, 2.0, 0.5])
    a = simulate(replace(ct_fixed, horizon=3.0))
    b = simulate(replace(ct_fixed, horizon=3.0, x0=ct_fixed.x0 + shift, xi0=ct_fixed.xi0 + shift))
    assert np.allclose(a.e, b.e, atol=1e-10)


def test_error_autonomy_discrete(dt_fixed):
    shift = np.array([1.0, 2.0, -1.0, 0.0])
    a = simulate(dt_fixed)
    b = simulate(replace(dt_fixed, x0=dt_fixed.x0 + shift, xi0=dt_fixed.xi0 + shift))
    assert np.allclose(a.e, b.e, atol=1e-9)


def test_joint_generator_error_block(ct_fixed):
    # in error coordinates the generator reduces to the stacked error map
    n, m = 4, 3
    S = mixing_matrix(ct_fixed.graphs[0], ct_fixed.active)
    J = joint_generator(ct_fixed, S, ct_fixed.design.g)
    T = np.zeros((n * (m + 1),) * 2)
    T[:n, :n] = np.eye(n)
    for i in range(m):
        T[n * (i + 1):n * (i + 2), :n] = -np.eye(n)
        T[n * (i + 1):n * (i + 2), n * (i + 1):n * (i + 2)] = np.eye(n)
    Je = T @ J @ np.linalg.inv(T)
    assert np.allclose(Je[n:, :n], 0, atol=1e-12)
    Abar = np.zeros((n * m,) * 2)
    Pbig = np.zeros_like(Abar)
    for i, d in enumerate(ct_fixed.design.decs):
        Abar[n * i:n * (i + 1), n * i:n * (i + 1)] = d.closed_loop
        Pbig[n * i:n * (i + 1), n * i:n * (i + 1)] = d.P
    expected = Abar - ct_fixed.design.g * Pbig @ (np.eye(n * m) - np.kron(S, np.eye(n)))
    assert np.allclose(Je[n:, n:], expected, atol=1e-12)


def test_rk4_matches_exponential_reference(ct_fixed):
    sc = replace(ct_fixed, horizon=1.0)
    a, b = simulate(sc), simulate_continuous_rk4(sc)
    assert np.max(np.abs(stacked_state(a) - stacked_state(b))) <= 1e-9


def test_rk4_matches_exponential_switching():
    sc = replace(parse_scenario("paper_4_1_switching"), horizon=0.5)
    a, b = simulate(sc), simulate_continuous_rk4(sc, h=1e-4)
    assert np.max(np.abs(stacked_state(a) - stacked_state(b))) <= 1e-8
    assert set(a.graph_id) == {0, 1}


def test_switch_times_are_on_the_grid():
    sc = parse_scenario("paper_4_1_switching")
    tr = simulate(replace(sc, horizon=0.3))
    for t in sc.signal.switch_times:
        if t <= 0.3:
            assert np.any(np.isclose(tr.times, t, rtol=0, atol=1e-14))


def test_discrete_dual_path(dt_fixed):
    tr = simulate_discrete(dt_fixed, record_rounds=True)
    assert tr.dual_path_error <= 1e-9
    rounds = tr.meta["rounds"]
    assert len(rounds) == 25 and rounds[0].shape == (dt_fixed.design.q + 1, 3, 4)


def test_discrete_rounds_leave_observable_part_alone(dt_fixed):
    # consensus rounds only move the unobservable components: Q_i z is invariant
    tr = simulate_discrete(dt_fixed, record_rounds=True)
    for block in tr.meta["rounds"]:
        for i, d in enumerate(dt_fixed.design.decs):
            obs = block[:, i, :] @ d.Q.T
            assert np.allclose(obs, obs[0], atol=1e-12)


def test_discrete_switching_dual_path():
    tr = simulate(parse_scenario("paper_4_2_switching"))
    assert tr.dual_path_error <= 1e-9 and len(set(tr.graph_id)) == 2


def test_simulation_is_deterministic(tmp_path, ct_fixed):
    sc = replace(ct_fixed, horizon=1.0)
    simulate(sc).write_csv(tmp_path / "a.csv")
    simulate(sc).write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_csv_round_trip(tmp_path, ct_fixed):
    tr = simulate(replace(ct_fixed, horizon=0.5))
    tr.write_csv(tmp_path / "t.csv")
    cols = read_trace_csv(tmp_path / "t.csv")
    assert list(cols) == tr.header()
    assert np.array_equal(cols["t"], tr.times)
    assert np.array_equal(cols["x3_4"], tr.xi[:, 2, 3])
    assert np.array_equal(cols["e_norm"], tr.e_norm)
    assert np.all(cols["graph_id"] == 1)


def test_invalid_signal_rejected(ct_fixed):
    bad = SwitchingSignal((0.0, 1.0, 1.001), (0, 1, 0), 8.0, "dwell", tau_d=0.5)
    with pytest.raises(InvalidSignal):
        simulate(replace(ct_fixed, graphs=(ct_fixed.graphs[0], ref.ring_graph()), signal=bad))
    short = SwitchingSignal.constant(0, 1.0)
    with pytest.raises(InvalidSignal):
        simulate(replace(ct_fixed, signal=short))


# -- faults ----------------------------------------------------------------------------


def test_arc_drop_keeps_running():
    sc = parse_scenario("resilience_arc_drop")
    tr = simulate(sc)
    after = tr.times >= sc.faults[0].time
    assert tr.e_norm[-1] < 1e-3 * tr.e_norm[after][0]


def test_mixing_matrix_drops_agent():
    S = mixing_matrix(ref.ring_chord_graph(), (True, False, True))
    assert np.allclose(S[1], 0) and np.allclose(S[:, 1], 0)
    assert np.allclose(S[[0, 2]].sum(axis=1), 1)


def test_fault_breaking_observability_raises_before_integration(ct_fixed, monkeypatch):
    # agent 3 is the only one that sees the second oscillator
    calls = []
    real = simmod.mk.matrix_exponential
    monkeypatch.setattr(simmod.mk, "matrix_exponential", lambda M: calls.append(1) or real(M))
    sc = replace(ct_fixed, graphs=(NeighborGraph.complete(3),), faults=(Fault(2.0, "remove_agent", agent=2),))
    with pytest.raises(FaultBreaksAssumptions) as info:
        simulate(sc)
    assert info.value.assumption == "joint observability"
    assert calls == []


def test_fault_breaking_connectivity_raises(ct_fixed):
    sc = replace(ct_fixed, faults=(Fault(1.0, "remove_arc", arc=(2, 0)),))
    with pytest.raises(FaultBreaksAssumptions):
        simulate(sc)


def test_redundant_agent_removal():
    # four agents, two of which see the first oscillator: losing one is harmless
    plant = Plant(ref.OSC_A, (*ref.OSC_C, ref.OSC_C[0]))
    g = NeighborGraph.complete(4)
    des = design_continuous(plant, [g], 1.0)
    rng = np.random.default_rng(0)
    sc = Scenario(plant, des, (g,), SwitchingSignal.constant(0, 6.0), rng.normal(size=4),
                  rng.normal(size=(4, 4)), 6.0, 0.05, faults=(Fault(2.0, "remove_agent", agent=0),))
    tr = simulate(sc)
    assert not tr.active[-1][0] and tr.active[0][0]
    assert tr.e_norm[-1] < 1e-2 * tr.e_norm[np.searchsorted(tr.times, 2.0)]


# -- adaptive ----------------------------------------------------------------------------


def test_cash_karp_exact_on_cubic():
    # fifth-order solution is exact for polynomial right-hand sides of low degree
    y, err = cash_karp_step(lambda t, y: np.array([3 * t**2]), 0.0, np.array([0.0]), 0.5)
    assert y[0] == pytest.approx(0.125, abs=1e-15) and abs(err[0]) < 1e-14


def test_cash_karp_integrates_exponential():
    y, dt, steps = integrate_cash_karp(lambda t, y: -2 * y, 0.0, np.array([1.0]), 3.0, 0.1, rtol=1e-10, atol=1e-14)
    assert y[0] == pytest.approx(np.exp(-6.0), rel=1e-8) and steps > 0


def test_cash_karp_reports_failure():
    with pytest.raises(ToleranceNotMet):
        integrate_cash_karp(lambda t, y: y**2, 0.0, np.array([1.0]), 2.0, 0.1, max_steps=200)


def test_adaptive_gains_monotone_and_error_small():
    sc = replace(parse_scenario("adaptive_fixed"), horizon=10.0)
    tr = simulate(sc)
    assert np.all(np.diff(tr.gains, axis=0) >= 0)
    assert np.all(tr.gains[0] == 0)
    assert tr.e_norm[-1] < tr.e_norm[0]


def test_adaptive_switching_needs_flag():
    sc = parse_scenario("paper_4_1_switching")
    sc = replace(sc, adaptive=True, g0=np.zeros(3), horizon=0.2)
    with pytest.raises(ValueError):
        simulate(sc)
    tr = simulate(replace(sc, experimental=True))
    assert np.all(np.diff(tr.gains, axis=0) >= 0)


# -- random scenarios ------------------------------------------------------------------


@settings(max_examples=15)
@given(st.integers(2, 5), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_random_scenarios_error_consistent(n, m, seed):
    sc = ref.random_continuous_scenario(n, m, np.random.default_rng(seed), horizon=1.0, h=0.1)
    tr = simulate_continuous(sc)
    assert tr.check() == 0.0
    assert len(tr.times) >= 11


@settings(max_examples=15)
@given(st.integers(2, 5), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_random_discrete_dual_path(n, m, seed):
    sc = ref.random_discrete_scenario(n, m, np.random.default_rng(seed), horizon=10)
    tr = simulate_discrete(sc)
    assert tr.dual_path_error <= 1e-9


def test_continuous_error_follows_exponential_of_error_map(ct_fixed):
    M = error_map(ct_fixed.design, NetworkSnapshot.from_graph(ct_fixed.graphs[0]))
    tr = simulate(replace(ct_fixed, horizon=1.0))
    e1 = mk.matrix_exponential(M) @ tr.e[0].reshape(-1)
    assert np.allclose(tr.e[-1].reshape(-1), e1, atol=1e-10)
