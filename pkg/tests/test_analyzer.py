import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitobs import instances as ref
from splitobs.analyzer import (
    CheckReport,
    check_design,
    dumps,
    envelope_check,
    fit_decay_rate,
    lyapunov_residual,
    spectrum_report,
    transient_envelope,
)
from splitobs.decomposition import decompose, stack
from splitobs.designer import design_continuous, design_discrete, synth_gain
from splitobs.errors import InsufficientData
from splitobs.netgraph import NetworkSnapshot


@pytest.fixture(scope="module")
def ct_design():
    return design_continuous(ref.oscillator_plant(), [ref.ring_chord_graph()], 1.0,
                             K=ref.CT_GAINS, g=10.0, Qs=ref.OSC_Q)


@pytest.fixture(scope="module")
def dt_design():
    return design_discrete(ref.oscillator_plant("discrete"), [ref.ring_chord_graph()], 0.5,
                           K=ref.DT_GAINS, q=6, Qs=ref.OSC_Q)


def test_fit_pure_exponential():
    t = np.linspace(0, 5, 501)
    fit = fit_decay_rate(times=t, norms=3 * np.exp(-2 * t))
    assert fit.lambda_est == pytest.approx(2.0, abs=1e-12)
    assert math.exp(fit.intercept) == pytest.approx(3.0, rel=1e-10)
    assert fit.window == (0.5, 5.0) and fit.residual < 1e-12


def test_fit_geometric_per_event():
    k = np.arange(26, dtype=float)
    fit = fit_decay_rate(times=k, norms=0.5**k, window=(1, 25), per_event=True)
    assert fit.ratio == pytest.approx(0.5, rel=1e-12)
    assert fit.lambda_est == pytest.approx(math.log(2), rel=1e-12)


def test_fit_ignores_floor():
    t = np.linspace(0, 10, 1001)
    y = np.maximum(np.exp(-4 * t), 1e-15)
    fit = fit_decay_rate(times=t, norms=y, window=(0, 10), floor=1e-12)
    assert fit.lambda_est == pytest.approx(4.0, rel=1e-9)


def test_fit_needs_enough_samples():
    with pytest.raises(InsufficientData):
        fit_decay_rate(times=np.arange(5.0), norms=np.ones(5))
    with pytest.raises(InsufficientData):
        fit_decay_rate(times=[], norms=[])
    with pytest.raises(ValueError):
        fit_decay_rate(times=np.arange(20.0), norms=np.ones(20), window=(5, 5))


@settings(max_examples=100)
@given(st.floats(0.01, 10), st.floats(1e-3, 1e3))
def test_fit_recovers_rate(rate, scale):
    t = np.linspace(0, 3, 301)
    assert fit_decay_rate(times=t, norms=scale * np.exp(-rate * t)).lambda_est == pytest.approx(rate, rel=1e-8)


def test_envelope_check_geometric():
    y = 2 * 0.5 ** np.arange(10)
    res = envelope_check(y, 0.5)
    assert res["passed"] and res["C"] == pytest.approx(2.0)
    y[5] *= 1.2
    assert not envelope_check(y, 0.5)["passed"]


def test_transient_envelope_normal_vs_jordan():
    assert transient_envelope(0.4 * np.eye(2), 0.5, 20) == 1.0
    J = np.array([[0.4, 1.0], [0.0, 0.4]])
    assert transient_envelope(J, 0.5, 20) > 2.0


def test_spectrum_report_continuous(ct_design):
    sp = spectrum_report(ct_design, NetworkSnapshot.from_graph(ref.ring_chord_graph()))
    assert sp["union_ok"] and sp["upper_block_norm"] <= 1e-12
    assert sp["worst"] <= -1 + 1e-6
    q_ev = sorted(complex(*z).real for z in sp["quotient_eigenvalues"])
    # quotient blocks of the three agents: {-2, -3}, {-2, -3} (agent 2) and {-2, -2} (agent 3)
    assert len(q_ev) == 6 and max(q_ev) <= -1


def test_spectrum_report_discrete(dt_design):
    sp = spectrum_report(dt_design, NetworkSnapshot.from_graph(ref.ring_chord_graph()))
    assert sp["union_ok"] and sp["worst"] <= 0.5 + 1e-6


@settings(max_examples=40)
@given(st.integers(2, 5), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_lyapunov_identity_random(n, m, seed):
    rng = np.random.default_rng(seed)
    plant = ref.random_joint_plant(n, m, rng)
    s = stack([synth_gain(d, 0.5) for d in decompose(plant)])
    lr = lyapunov_residual(NetworkSnapshot.from_graph(ref.random_strong_digraph(m, rng)), s)
    assert lr["identity_residual"] <= 1e-9
    if s.n_bar:
        assert lr["coupling_min_eig"] > 0 and lr["generator_abscissa"] < 0 and lr["contraction_max_eig"] < 0


def test_check_design_passes_reference(ct_design, dt_design):
    snaps = [NetworkSnapshot.from_graph(ref.ring_chord_graph())]
    for des in (ct_design, dt_design):
        rep = check_design(des, snaps)
        assert rep.passed, rep.table()
    names = [r.name for r in check_design(dt_design, snaps).results]
    assert "q.weighted_certificate" in names and "q.mixed_certificate" in names


def test_check_design_flags_weak_gain():
    des = design_continuous(ref.oscillator_plant(), [ref.ring_chord_graph()], 1.0,
                            K=ref.CT_GAINS, g=0.01, Qs=ref.OSC_Q)
    rep = check_design(des, [NetworkSnapshot.from_graph(ref.ring_chord_graph())])
    failed = {r.name for r in rep.results if not r.passed}
    assert "gain.abscissa_certificate" in failed


def test_report_serialization():
    rep = CheckReport()
    rep.add("a", True, 1.5)
    rep.add("b", False, None, "why")
    d = json.loads(dumps(rep.to_dict()))
    assert d["passed"] is False and d["checks"][1]["detail"] == "why"
    assert json.loads(dumps({"x": np.float64(math.inf), "y": np.arange(2)})) == {"x": "inf", "y": [0, 1]}
    assert "FAIL" in rep.table()
