"""Forward/backward conditioning, weak values, probes, and history families."""

import json
import math

import pytest

from zenoport.analysis import (
    BoundaryPair,
    Family,
    History,
    InconsistentFamilyError,
    OrthogonalBoundariesError,
    arm_paths,
    backward_state,
    builtin_families,
    chain_ket,
    channel_probe_signal,
    cycle_boundaries,
    end_to_end_boundaries,
    family_from_text,
    family_to_text,
    forward_state,
    history_probability,
    is_consistent,
    paradox_report,
    simulate_weak_probe,
    weak_trace_map,
    weak_value,
)
from zenoport.optics import build_paradox_circuit
from zenoport.qstate import (
    QStateError,
    StateVector,
    inner,
    label,
    projector,
)

INV_SQRT2 = 1.0 / math.sqrt(2.0)


@pytest.fixture(scope="module")
def circuit():
    return build_paradox_circuit(2, 2)


@pytest.fixture(scope="module")
def bounds(circuit):
    return end_to_end_boundaries(circuit)


def test_forward_state_midpoints(circuit, bounds):
    f2 = forward_state(circuit, bounds.pre, "t2")
    assert abs(f2.amp(label("A", "H")) - INV_SQRT2) < 1e-12
    assert abs(f2.amp(label("C", "H")) + 0.5) < 1e-12
    assert abs(f2.amp(label("B", "V")) - 0.5) < 1e-12


def test_backward_state_midpoints(circuit, bounds):
    b2 = backward_state(circuit, bounds.post, "t2")
    assert abs(b2.amp(label("A", "H")) - INV_SQRT2) < 1e-12
    assert abs(b2.amp(label("C", "H")) + 0.5) < 1e-12
    assert abs(b2.amp(label("B", "V")) + 0.5) < 1e-12
    b3 = backward_state(circuit, bounds.post, "t3")
    assert abs(b3.amp(label("A", "H")) - INV_SQRT2) < 1e-12
    assert abs(b3.amp(label("B", "V")) + INV_SQRT2) < 1e-12
    assert abs(b3.amp(label("C", "H"))) < 1e-12


def test_boundary_overlap_is_stamp_independent(circuit, bounds):
    """Adjoint evolution: the two-state overlap cannot depend on when it
    is evaluated."""
    overlaps = [inner(backward_state(circuit, bounds.post, t),
                      forward_state(circuit, bounds.pre, t))
                for t in circuit.stamps]
    for d in overlaps:
        assert abs(d - overlaps[0]) < 1e-12
    assert abs(overlaps[0] - 0.5) < 1e-12


def test_end_to_end_weak_values(circuit, bounds):
    w = {arm: weak_value(projector(paths=arm), bounds, "t2", circuit)
         for arm in ("A", "B", "C")}
    assert abs(w["A"] - 1.0) < 1e-10
    assert abs(w["B"] + 0.5) < 1e-10
    assert abs(w["C"] - 0.5) < 1e-10
    assert abs(sum(w.values()) - 1.0) < 1e-10
    assert abs(weak_value(projector(paths="C"), bounds, "t3", circuit)) < 1e-10
    assert abs(weak_value(projector(paths="C"), bounds, "t'2", circuit)) < 1e-10


def test_per_cycle_weak_values_vanish_off_the_a_arm(circuit):
    b1 = cycle_boundaries(circuit, 1)
    assert abs(weak_value(projector(paths="A"), b1, "t2", circuit) - 1.0) < 1e-10
    assert abs(weak_value(projector(paths="B"), b1, "t2", circuit)) < 1e-10
    assert abs(weak_value(projector(paths="C"), b1, "t2", circuit)) < 1e-10
    b2 = cycle_boundaries(circuit, 2)
    assert abs(weak_value(projector(paths="C"), b2, "t'2", circuit)) < 1e-10


def test_identity_projector_weak_value_is_one(circuit, bounds):
    for t in ("t0", "t2", "t'3", "t_final"):
        assert abs(weak_value(projector(), bounds, t, circuit) - 1.0) < 1e-12


def test_orthogonal_boundaries_are_refused(circuit):
    dead_state = BoundaryPair(pre=("t0", StateVector({label("S", "H"): 1.0})),
                              post=("t_final", StateVector({label("F", "V"): 1.0})))
    with pytest.raises(OrthogonalBoundariesError):
        weak_value(projector(paths="A"), dead_state, "t2", circuit)
    dead_proj = BoundaryPair(pre=("t0", StateVector({label("S", "H"): 1.0})),
                             post=("t_final", projector(paths=("F",), pols=("V",))))
    with pytest.raises(OrthogonalBoundariesError):
        backward_state(circuit, dead_proj.post, "t2")


def test_boundary_pair_validation(circuit):
    backwards = BoundaryPair(pre=("t3", StateVector({label("S", "H"): 1.0})),
                             post=("t1", projector(paths="F")))
    with pytest.raises(QStateError):
        weak_value(projector(paths="A"), backwards, "t2", circuit)
    fat = BoundaryPair(pre=("t0", StateVector({label("S", "H"): 2.0})),
                       post=("t_final", projector(paths="F")))
    with pytest.raises(QStateError, match="normalized"):
        weak_value(projector(paths="A"), fat, "t2", circuit)


def test_weak_trace_map_end_to_end(circuit, bounds):
    trace = weak_trace_map(circuit, bounds)
    arms = arm_paths(circuit)
    assert arms == ("S", "A", "B", "C", "D", "F")
    assert len(trace) == len(arms) * len(circuit.stamps)
    assert all(v is not None for v in trace.values())
    assert abs(trace[("A", "c1.in1")] - 1.0) < 1e-10
    assert abs(trace[("C", "c1.in1")] - 0.5) < 1e-10
    assert abs(trace[("B", "c1.in1")] + 0.5) < 1e-10
    assert abs(trace[("C", "c2.in1")]) < 1e-10
    for stamp in circuit.stamps:
        total = sum(trace[(a, stamp)] for a in arms)
        assert abs(total - 1.0) < 1e-10


def test_weak_trace_map_masks_cells_outside_the_window(circuit):
    trace = weak_trace_map(circuit, cycle_boundaries(circuit, 1))
    assert trace[("A", "c2.t1")] is None
    assert trace[("C", "t_final")] is None
    assert abs(trace[("A", "c1.in1")] - 1.0) < 1e-10
    assert abs(trace[("C", "c1.in1")]) < 1e-10


def test_probe_vanishes_at_zero_coupling(circuit):
    assert simulate_weak_probe(circuit, "C", "t2", 0.0) == 0.0


def test_probe_outside_window_rejected(circuit):
    with pytest.raises(QStateError):
        simulate_weak_probe(circuit, "C", "t_final", 1e-3,
                            boundaries=cycle_boundaries(circuit, 1))


@pytest.mark.parametrize("arm", ["A", "C"])
@pytest.mark.parametrize("which", ["end-to-end", "cycle1"])
def test_probe_first_order_law(circuit, arm, which):
    b = end_to_end_boundaries(circuit) if which == "end-to-end" \
        else cycle_boundaries(circuit, 1)
    w = weak_value(projector(paths=arm), b, "t2", circuit).real
    for eps in (1e-2, 1e-3, 1e-4):
        sig = simulate_weak_probe(circuit, arm, "t2", eps, boundaries=b)
        assert abs(sig / eps - w) <= 0.01 * eps


def test_probe_in_cycle_one_channel_is_exactly_dark(circuit):
    b1 = cycle_boundaries(circuit, 1)
    assert simulate_weak_probe(circuit, "C", "t2", 1e-3, boundaries=b1) == 0.0


def test_probe_second_order_where_weak_value_vanishes(circuit):
    # at t'2 the first-order term is gone, so signal/eps keeps shrinking
    ratios = [abs(simulate_weak_probe(circuit, "C", "t'2", eps)) / eps
              for eps in (1e-2, 1e-3, 1e-4)]
    assert ratios[1] < ratios[0] / 5
    assert ratios[2] < ratios[1] / 5


def test_channel_probe_signal_frozen_values():
    base = build_paradox_circuit(2, 2)
    assert abs(channel_probe_signal(base, 1e-3) - 4.999999479166589e-4) < 1e-12
    av1 = build_paradox_circuit(2, 2, av_rounds=1)
    av2 = build_paradox_circuit(2, 2, av_rounds=2)
    s1 = channel_probe_signal(av1, 1e-3)
    s2 = channel_probe_signal(av2, 1e-3)
    assert abs(s1 - 6.25e-11) < 1e-15
    assert abs(s2 + 3.125e-11) < 1e-15
    assert abs(s2) < abs(s1)
    assert channel_probe_signal(base, 0.0) == 0.0


def test_report_structure_and_values():
    rep = paradox_report(2, 2, av_rounds=1)
    assert set(rep) == {"M", "N", "av_rounds", "epsilon", "rows",
                        "channel_probe_signal"}
    by = {(r["boundaries"], r["arm"], r["stamp"]): r for r in rep["rows"]}
    assert len(rep["rows"]) == 6
    assert abs(by[("end-to-end", "S", "t0")]["weak_value"][0] - 1.0) < 1e-10
    assert abs(by[("end-to-end", "C", "c1.in1")]["weak_value"][0] - 0.5) < 1e-10
    assert abs(by[("end-to-end", "C", "c2.in1")]["weak_value"][0]) < 1e-10
    assert abs(by[("cycle1", "C", "c1.in1")]["weak_value"][0]) < 1e-10
    assert abs(by[("cycle2", "C", "c2.in1")]["weak_value"][0]) < 1e-10
    assert set(rep["channel_probe_signal"]) == {"end-to-end", "end-to-end+av"}
    json.dumps(rep)  # must be plain data


def test_builtin_families_inventory(circuit):
    fams = builtin_families(circuit)
    assert sorted(fams) == ["cycle1", "cycle2", "final_via_cycle1",
                            "final_via_cycle2"]
    for f in fams.values():
        f.validate(circuit)
        assert len(f.histories()) == 18


def test_consistent_families_put_everything_on_the_a_arm(circuit):
    fams = builtin_families(circuit)
    for name in ("cycle1", "cycle2", "final_via_cycle2"):
        f = fams[name]
        ok, pair = is_consistent(f, circuit)
        assert ok and pair is None
        probs = {str(h): history_probability(h, f, circuit) for h in f.histories()}
        assert abs(sum(probs.values()) - 1.0) < 1e-10
        assert abs(probs["(A,A,A)"] - 1.0) < 1e-10
        for name_h, p in probs.items():
            if name_h != "(A,A,A)":
                assert p < 1e-10


def test_inconsistent_family_detected(circuit):
    f = builtin_families(circuit)["final_via_cycle1"]
    ok, pair = is_consistent(f, circuit)
    assert not ok
    assert tuple(str(h) for h in pair) == ("(A,A,A)", "(D,B,B)")
    with pytest.raises(InconsistentFamilyError):
        history_probability(f.histories()[0], f, circuit)


def test_chain_kets_of_the_final_boundary_family(circuit):
    f = builtin_families(circuit)["final_via_cycle1"]
    kets = {str(h): chain_ket(h, f, circuit) for h in f.histories()}
    assert abs(kets["(A,A,A)"].state.amp(label("F", "H")) - 0.5) < 1e-12
    assert abs(kets["(D,C,B)"].state.amp(label("F", "H")) - 0.25) < 1e-12
    assert abs(kets["(D,B,B)"].state.amp(label("F", "H")) + 0.25) < 1e-12
    assert kets["(D,C,B)"].weight > 1e-10  # a channel-crossing history survives
    overlap = inner(kets["(A,A,A)"].state, kets["(D,C,B)"].state)
    assert abs(overlap - 0.125) < 1e-12


def test_cycle_family_kills_channel_histories(circuit):
    # within one cycle both engines agree: nothing ever leaves the A arm
    f = builtin_families(circuit)["cycle1"]
    for h in f.histories():
        if any(n in ("B", "C", "D") for n in h.names):
            assert chain_ket(h, f, circuit).weight < 1e-10
    b1 = cycle_boundaries(circuit, 1)
    for arm in ("B", "C", "D"):
        assert abs(weak_value(projector(paths=arm), b1, "t2", circuit)) < 1e-10


def test_chain_ket_rejects_foreign_history(circuit):
    fams = builtin_families(circuit)
    f7 = fams["cycle1"]
    # a second-cycle history lives at stamps the first-cycle family never offers
    foreign = fams["final_via_cycle2"].histories()[0]
    with pytest.raises(QStateError):
        chain_ket(foreign, f7, circuit)
    made_up = History(names=("D",), events=(("c1.in1", projector(paths="D")),))
    with pytest.raises(QStateError):
        chain_ket(made_up, f7, circuit)


def test_family_validation_errors(circuit):
    pre = ("t0", StateVector({label("S", "H"): 1.0}))
    post = ("t_final", projector(paths="F"))
    overlapping = Family(
        name="bad", pre=pre, post=post,
        slots=((("c1.in1"), (("X", projector(paths=("A", "B"))),
                             ("Y", projector(paths="B")))),))
    with pytest.raises(QStateError, match="overlapping"):
        overlapping.validate(circuit)
    empty = Family(name="bad", pre=pre, post=post, slots=(("c1.in1", ()),))
    with pytest.raises(QStateError, match="no projectors"):
        empty.validate(circuit)
    disordered = Family(
        name="bad", pre=pre, post=post,
        slots=(("c1.in2", (("X", projector(paths="A")),)),
               ("c1.in1", (("Y", projector(paths="A")),))))
    with pytest.raises(QStateError, match="time order"):
        disordered.validate(circuit)
    inverted = Family(name="bad", pre=("t_final", pre[1]),
                      post=("t0", projector(paths="F")), slots=())
    with pytest.raises(QStateError, match="precede"):
        inverted.validate(circuit)


def test_family_text_round_trip(circuit):
    f = builtin_families(circuit)["final_via_cycle1"]
    text = family_to_text(f)
    again = family_from_text(text)
    assert family_to_text(again) == text
    ok_a, pair_a = is_consistent(again, circuit)
    ok_b, pair_b = is_consistent(f, circuit)
    assert ok_a == ok_b
    assert tuple(map(str, pair_a)) == tuple(map(str, pair_b))


def test_family_text_rejects_garbage():
    with pytest.raises(QStateError):
        family_from_text("")
    with pytest.raises(QStateError):
        family_from_text("once upon a time\n")


def test_builtin_families_need_a_two_level_schedule():
    with pytest.raises(QStateError):
        builtin_families(build_paradox_circuit(1, 2))
    from zenoport.optics import CircuitSchedule
    bare = CircuitSchedule(stamps=("a", "b"), steps=((),),
                           universe=(label("S", "H"), label("S", "V")),
                           pre_state=StateVector({label("S", "H"): 1.0}))
    with pytest.raises(QStateError):
        builtin_families(bare)
