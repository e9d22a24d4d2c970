"""Counterportation protocol runs, Bloch sampling, and the fidelity sweep."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zenoport.counterport import (
    FidelityGrid,
    counterport,
    sample_bloch,
    sweep,
)
from zenoport.cqze import BobQubit, ProtocolConfig
from zenoport.qstate import QStateError

INV_SQRT2 = 1.0 / math.sqrt(2.0)
DEEP = ProtocolConfig(M=100, N=40000)
PAPER_EPS = ProtocolConfig(M=10, N=20, eps_reflect=0.10, eps_block=0.05)


def test_pole_qubit_arrives_perfectly_when_post_selected():
    r = counterport(BobQubit(1.0, 0.0), DEEP)
    assert r.fidelity_post_selected > 1.0 - 1e-12
    assert abs(r.fidelity - 0.962221112518495) < 1e-10


def test_equator_qubit_deep_chain_values():
    r = counterport(BobQubit(INV_SQRT2, INV_SQRT2), DEEP)
    assert abs(r.fidelity - 0.9726680682158899) < 1e-10
    assert abs(r.fidelity_post_selected - 0.9999701580170549) < 1e-10
    assert r.bob_purity["Port1"] > 0.999998
    assert r.bob_purity["Port2"] > 0.9999999


def test_deep_chain_is_a_faithful_identity_channel():
    # conditional infidelity stays below 1e-3 everywhere on the sphere
    worst = max(1.0 - counterport(q, DEEP).fidelity_post_selected
                for q in sample_bloch(100).qubits)
    assert worst < 1e-3
    assert abs(worst - 2.9830566080524257e-05) < 1e-12


def test_lossy_landmark_averages():
    qs = sample_bloch(100).qubits
    li = sum(counterport(q, PAPER_EPS).fidelity for q in qs) / 100
    ps = sum(counterport(q, PAPER_EPS).fidelity_post_selected for q in qs) / 100
    assert abs(li - 0.2838348154379594) < 1e-10
    assert abs(ps - 0.9144477983938747) < 1e-10
    assert ps > 2.0 / 3.0  # conditional figure clears the classical bound


def test_deeper_chains_beat_shallow_ones():
    q = BobQubit(INV_SQRT2, INV_SQRT2)
    deep = counterport(q, ProtocolConfig(M=50, N=50))
    shallow = counterport(q, ProtocolConfig(M=2, N=2))
    assert deep.fidelity > shallow.fidelity
    assert deep.fidelity_post_selected > shallow.fidelity_post_selected


def test_single_cycle_success_is_negligible():
    r = counterport(BobQubit(0.6, 0.8), ProtocolConfig(M=1, N=1))
    assert r.p_success < 1e-30
    assert abs(r.fidelity_post_selected - 0.5) < 1e-12


def test_probability_bookkeeping():
    r = counterport(BobQubit(0.6, 0.8), PAPER_EPS)
    assert abs(r.p_port1 + r.p_port2 + r.p_lost - 1.0) < 1e-12
    assert abs(r.p_success - (r.p_port1 + r.p_port2)) < 1e-15
    assert abs(sum(r.loss_breakdown.values()) - r.p_lost) < 1e-12
    assert abs(r.p_success - 0.3156546672726044) < 1e-12
    assert abs(r.fidelity - 0.28871437412195633) < 1e-12
    assert abs(r.fidelity_post_selected - 0.9146526380128509) < 1e-12


def test_round_trace_snapshots_present():
    r = counterport(BobQubit(0.6, 0.8), ProtocolConfig(M=3, N=3))
    assert set(r.round_trace) == {"round1", "between_rounds", "round2_ports", "final"}
    for s in r.round_trace.values():
        assert s.norm2() <= 1.0 + 1e-12


def test_bloch_sample_endpoints():
    one = sample_bloch(1)
    assert abs(one.qubits[0].alpha - 1.0) < 1e-12
    two = sample_bloch(2)
    assert abs(two.qubits[0].alpha - 1.0) < 1e-12
    assert abs(abs(two.qubits[1].beta) - 1.0) < 1e-12


def test_bloch_sample_deterministic():
    assert sample_bloch(50) == sample_bloch(50)
    a = sample_bloch(50, scheme="seeded-uniform", seed=7)
    assert a == sample_bloch(50, scheme="seeded-uniform", seed=7)
    b = sample_bloch(50, scheme="seeded-uniform", seed=8)
    assert a != b


def test_bloch_sample_validation():
    with pytest.raises(QStateError):
        sample_bloch(0)
    with pytest.raises(QStateError):
        sample_bloch(5, scheme="dartboard")


def small_grid(mode="loss-inclusive", workers=None):
    return sweep(3, 3, ProtocolConfig(M=1, N=1, eps_reflect=0.02),
                 sample_bloch(5), fidelity_mode=mode, workers=workers)


def test_sweep_grid_shape_and_cells():
    g = small_grid()
    assert g.m_values == (1, 2, 3) and g.n_values == (1, 2, 3)
    assert g.avg_fidelity.shape == (3, 3)
    f, p = g.cell(3, 2)
    assert 0.0 <= f <= 1.0 and 0.0 <= p <= 1.0
    assert g.meta["eps_reflect"] == 0.02
    assert g.meta["sample_count"] == 5


def test_sweep_cell_matches_direct_average():
    g = small_grid(mode="post-selected")
    qs = sample_bloch(5).qubits
    want = sum(counterport(q, ProtocolConfig(M=2, N=3, eps_reflect=0.02)).fidelity_post_selected
               for q in qs) / 5
    assert abs(g.cell(2, 3)[0] - want) < 1e-12


def test_sweep_worker_count_does_not_change_output():
    a = small_grid(workers=1)
    b = small_grid(workers=2)
    assert np.array_equal(a.avg_fidelity, b.avg_fidelity)
    assert np.array_equal(a.avg_success_prob, b.avg_success_prob)


def test_sweep_validation():
    with pytest.raises(QStateError):
        sweep(0, 3, ProtocolConfig(M=1, N=1), sample_bloch(2))
    with pytest.raises(QStateError):
        sweep(2, 2, ProtocolConfig(M=1, N=1), sample_bloch(2), fidelity_mode="hopeful")
    with pytest.raises(QStateError):
        sweep(2, 2, ProtocolConfig(M=1, N=1), [])


def test_grid_csv_round_trip():
    g = small_grid()
    again = FidelityGrid.from_csv(g.to_csv())
    assert again.m_values == g.m_values and again.n_values == g.n_values
    assert np.array_equal(again.avg_fidelity, g.avg_fidelity)
    assert np.array_equal(again.avg_success_prob, g.avg_success_prob)


def test_grid_json_round_trip():
    g = small_grid()
    again = FidelityGrid.from_json(g.to_json())
    assert np.array_equal(again.avg_fidelity, g.avg_fidelity)
    assert again.meta["sample_scheme"] == "fibonacci"


def test_grid_rejects_malformed_input():
    with pytest.raises(QStateError):
        FidelityGrid.from_csv("who,what\n1,2\n")
    # a missing cell leaves a ragged rectangle
    g = small_grid()
    ragged = "\n".join(g.to_csv().splitlines()[:-1]) + "\n"
    with pytest.raises(QStateError):
        FidelityGrid.from_csv(ragged)
    with pytest.raises(QStateError):
        FidelityGrid.from_json({"m_values": [1]})


@settings(max_examples=25, deadline=None)
@given(m=st.integers(1, 5), n=st.integers(1, 5),
       er=st.floats(0, 0.5), eb=st.floats(0, 0.5), beta2=st.floats(0, 1))
def test_protocol_outputs_stay_physical(m, n, er, eb, beta2):
    bob = BobQubit(math.sqrt(1.0 - beta2), math.sqrt(beta2))
    r = counterport(bob, ProtocolConfig(M=m, N=n, eps_reflect=er, eps_block=eb))
    assert -1e-12 <= r.fidelity <= 1.0 + 1e-12
    assert -1e-12 <= r.fidelity_post_selected <= 1.0 + 1e-12
    assert abs(r.p_port1 + r.p_port2 + r.p_lost - 1.0) < 1e-12
    assert abs(sum(r.loss_breakdown.values()) - r.p_lost) < 1e-12
