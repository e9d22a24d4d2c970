"""Where-was-the-photon analysis over a circuit schedule.

Two complementary engines answer the same question:

* a two-state-vector engine that evolves a pre-selected state forward and a
  post-selected state backward and reports weak values, together with an
  explicit weakly coupled pointer whose first-order signal reproduces them;
* a consistent-histories engine that composes chain kets from per-stamp
  projector choices and checks families for pairwise orthogonality.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

from .optics import CircuitSchedule, build_paradox_circuit
from .qstate import (
    Projector,
    QStateError,
    StateVector,
    apply,
    inner,
    is_sink,
    label,
    project,
    projector,
)

ATOL_DENOM = 1e-12
ATOL_CONSISTENT = 1e-10
ATOL_BOUNDARY_NORM = 1e-9
P_EMPTY = 1e-300


class OrthogonalBoundariesError(QStateError):
    """Pre and post selection have (numerically) zero transition amplitude."""


class InconsistentFamilyError(QStateError):
    """Probabilities requested for a family whose chain kets are not orthogonal."""


@dataclass(frozen=True)
class BoundaryPair:
    """A pre-selected state and a post-selection, each tied to a time stamp.

    ``pre`` is ``(stamp, state)``; ``post`` is ``(stamp, projector or state)``.
    The pre stamp must lie strictly before the post stamp and any explicit
    state must be normalized.
    """

    pre: tuple[str, StateVector]
    post: tuple[str, Projector | StateVector]


def _check_normalized(s: StateVector, what: str) -> None:
    if abs(s.norm2() - 1.0) > ATOL_BOUNDARY_NORM:
        raise QStateError(f"{what} must be normalized (norm**2 = {s.norm2()!r})")


def _pair_window(c: CircuitSchedule, b: BoundaryPair) -> tuple[int, int]:
    i_pre = c.index_of(b.pre[0])
    i_post = c.index_of(b.post[0])
    if i_pre >= i_post:
        raise QStateError("pre stamp must lie strictly before post stamp")
    _check_normalized(b.pre[1], "pre state")
    if isinstance(b.post[1], StateVector):
        _check_normalized(b.post[1], "post state")
    return i_pre, i_post


def end_to_end_boundaries(c: CircuitSchedule) -> BoundaryPair:
    """Source state at the first stamp, declared post projector at the last."""
    if c.post_projector is None:
        raise QStateError("schedule declares no post projector")
    return BoundaryPair(pre=(c.stamps[0], c.pre_state.normalized()),
                        post=(c.stamps[-1], c.post_projector))


def cycle_boundaries(c: CircuitSchedule, cycle: int) -> BoundaryPair:
    """Boundaries of one outer cycle: fresh source in, source-arm detection out."""
    if c.meta.get("kind") != "nested-paradox":
        raise QStateError("cycle boundaries are defined for nested-paradox schedules")
    m = int(c.meta["M"])
    if not 1 <= cycle <= m:
        raise QStateError(f"cycle must be in 1..{m}")
    pre_stamp = "t0" if cycle == 1 else f"c{cycle - 1}.t4"
    return BoundaryPair(pre=(pre_stamp, StateVector({label("S", "H"): 1.0})),
                        post=(f"c{cycle}.t4", projector(paths="S", pols="H")))


def _evolve(c: CircuitSchedule, s: StateVector, i0: int, i1: int) -> StateVector:
    for m in c.step_maps()[i0:i1]:
        s = apply(m, s).pruned()
    return s


def _evolve_back(c: CircuitSchedule, s: StateVector, i_from: int, i_to: int) -> StateVector:
    adj = c.adjoint_step_maps()
    for k in range(i_from - 1, i_to - 1, -1):
        s = apply(adj[k], s).pruned()
    return s


def forward_state(c: CircuitSchedule, pre: tuple[str, StateVector], t: str) -> StateVector:
    """Evolve the pre-selected state from its own stamp up to stamp t."""
    stamp, s = pre
    i0 = c.index_of(stamp)
    i1 = c.index_of(t)
    if i1 < i0:
        raise QStateError(f"stamp {t!r} lies before the pre stamp {stamp!r}")
    return _evolve(c, s, i0, i1)


def _post_state(c: CircuitSchedule, post: tuple[str, Projector | StateVector],
                pre: tuple[str, StateVector] | None = None) -> StateVector:
    """Normalized post-selected state at the post stamp.

    A projector post is resolved against the forward evolution of ``pre``
    (the schedule's own source state when no pre is given): project, then
    normalize.  Vanishing overlap means the boundaries are orthogonal.
    """
    stamp, spec = post
    if isinstance(spec, StateVector):
        _check_normalized(spec, "post state")
        return spec
    ref = pre if pre is not None else (c.stamps[0], c.pre_state.normalized())
    kept, _ = project(spec, forward_state(c, ref, stamp))
    if kept.norm() < ATOL_DENOM:
        raise OrthogonalBoundariesError(
            f"post projector at {stamp!r} annihilates the forward state")
    return kept.normalized()


def backward_state(c: CircuitSchedule, post: tuple[str, Projector | StateVector],
                   t: str) -> StateVector:
    """Adjoint-evolve the post-selected state from its stamp back to stamp t.

    Loss labels can acquire backward amplitude (they pair with zero forward
    amplitude, so inner products with any forward state are unaffected).
    """
    stamp, _ = post
    i1 = c.index_of(stamp)
    i0 = c.index_of(t)
    if i0 > i1:
        raise QStateError(f"stamp {t!r} lies after the post stamp {stamp!r}")
    return _evolve_back(c, _post_state(c, post), i1, i0)


def weak_value(pi: Projector, b: BoundaryPair, t: str, c: CircuitSchedule) -> complex:
    """Two-state-vector weak value of pi at stamp t between the pair's boundaries."""
    i_pre, i_post = _pair_window(c, b)
    i_t = c.index_of(t)
    if not i_pre <= i_t <= i_post:
        raise QStateError(f"stamp {t!r} lies outside the boundary window")
    fwd = _evolve(c, b.pre[1], i_pre, i_t)
    bwd = _evolve_back(c, _post_state(c, b.post, pre=b.pre), i_post, i_t)
    den = inner(bwd, fwd)
    if abs(den) < ATOL_DENOM:
        raise OrthogonalBoundariesError(
            f"transition amplitude {den!r} below {ATOL_DENOM} at stamp {t!r}")
    kept, _ = project(pi, fwd)
    return inner(bwd, kept) / den


def arm_paths(c: CircuitSchedule) -> tuple[str, ...]:
    """Non-sink paths of the schedule, in universe order."""
    seen: list[str] = []
    for lbl in c.universe:
        if not is_sink(lbl.path) and lbl.path not in seen:
            seen.append(lbl.path)
    return tuple(seen)


def weak_trace_map(c: CircuitSchedule, b: BoundaryPair) -> dict[tuple[str, str], complex | None]:
    """Weak value of every arm at every stamp; None marks undefined cells.

    A cell is undefined when the stamp lies outside the boundary window or
    when the boundaries are orthogonal there (vanishing denominator).
    """
    i_pre, i_post = _pair_window(c, b)
    arms = arm_paths(c)
    out: dict[tuple[str, str], complex | None] = {}

    try:
        bwd = _post_state(c, b.post, pre=b.pre)
    except OrthogonalBoundariesError:
        return {(a, st): None for a in arms for st in c.stamps}

    fwd_by_idx: dict[int, StateVector] = {}
    s = b.pre[1]
    for i in range(i_pre, i_post + 1):
        if i > i_pre:
            s = apply(c.step_maps()[i - 1], s).pruned()
        fwd_by_idx[i] = s
    bwd_by_idx: dict[int, StateVector] = {}
    s = bwd
    for i in range(i_post, i_pre - 1, -1):
        if i < i_post:
            s = apply(c.adjoint_step_maps()[i], s).pruned()
        bwd_by_idx[i] = s

    for i, stamp in enumerate(c.stamps):
        inside = i_pre <= i <= i_post
        den = inner(bwd_by_idx[i], fwd_by_idx[i]) if inside else 0.0
        for arm in arms:
            if not inside or abs(den) < ATOL_DENOM:
                out[(arm, stamp)] = None
                continue
            kept, _ = project(projector(paths=arm), fwd_by_idx[i])
            out[(arm, stamp)] = inner(bwd_by_idx[i], kept) / den
    return out


def _couple_pointer(pi: Projector, psi0: StateVector, psi1: StateVector,
                    epsilon: float) -> tuple[StateVector, StateVector]:
    # pointer rotation by epsilon, applied only on the arm's support
    p0, _ = project(pi, psi0)
    p1, _ = project(pi, psi1)
    cm1 = math.cos(epsilon / 2.0) - 1.0
    sn = math.sin(epsilon / 2.0)
    return (psi0 + p0 * cm1 - p1 * sn).pruned(), (psi1 + p1 * cm1 + p0 * sn).pruned()


def _pointer_signal(c: CircuitSchedule, b: BoundaryPair, psi0: StateVector,
                    psi1: StateVector) -> float:
    spec = b.post[1]
    if isinstance(spec, StateVector):
        a0 = inner(spec, psi0)
        a1 = inner(spec, psi1)
        num = 2.0 * ((a0.conjugate() * a1).real)
        den = abs(a0) ** 2 + abs(a1) ** 2
    else:
        k0, _ = project(spec, psi0)
        k1, _ = project(spec, psi1)
        num = 2.0 * inner(k0, k1).real
        den = k0.norm2() + k1.norm2()
    if den < P_EMPTY:
        return 0.0
    return num / den


def simulate_weak_probe(c: CircuitSchedule, arm: str, t: str, epsilon: float,
                        boundaries: BoundaryPair | None = None) -> float:
    """Post-selection-conditioned pointer signal for a probe on one arm at one stamp.

    A two-level pointer starts in its reference state, is rotated by epsilon
    on the arm's occupation at stamp t, and both pointer branches ride the
    schedule to the post stamp.  The conditioned transverse expectation is
    epsilon * Re(weak value) to first order, and second order in epsilon
    when the weak value vanishes.
    """
    if epsilon == 0.0:
        return 0.0
    b = boundaries if boundaries is not None else end_to_end_boundaries(c)
    i_pre, i_post = _pair_window(c, b)
    i_t = c.index_of(t)
    if not i_pre <= i_t <= i_post:
        raise QStateError(f"stamp {t!r} lies outside the boundary window")
    psi0 = _evolve(c, b.pre[1], i_pre, i_t)
    psi1 = StateVector()
    psi0, psi1 = _couple_pointer(projector(paths=arm), psi0, psi1, epsilon)
    psi0 = _evolve(c, psi0, i_t, i_post)
    psi1 = _evolve(c, psi1, i_t, i_post)
    return _pointer_signal(c, b, psi0, psi1)


def channel_probe_signal(c: CircuitSchedule, epsilon: float,
                         boundaries: BoundaryPair | None = None,
                         arm: str = "C") -> float:
    """Pointer signal when one probe couples to the arm at every stamp.

    Models a single weakly reflecting element sitting in the channel for the
    whole run rather than being switched in at one stamp.
    """
    if epsilon == 0.0:
        return 0.0
    b = boundaries if boundaries is not None else end_to_end_boundaries(c)
    i_pre, i_post = _pair_window(c, b)
    pi = projector(paths=arm)
    psi0 = b.pre[1]
    psi1 = StateVector()
    for i in range(i_pre, i_post + 1):
        psi0, psi1 = _couple_pointer(pi, psi0, psi1, epsilon)
        if i < i_post:
            m = c.step_maps()[i]
            psi0 = apply(m, psi0).pruned()
            psi1 = apply(m, psi1).pruned()
    return _pointer_signal(c, b, psi0, psi1)


def _report_cell(c: CircuitSchedule, b: BoundaryPair, arm: str, stamp: str,
                 epsilon: float) -> dict:
    try:
        w = weak_value(projector(paths=arm), b, stamp, c)
        wv: list[float] | None = [w.real, w.imag]
    except (OrthogonalBoundariesError, QStateError):
        wv = None
    try:
        sig = simulate_weak_probe(c, arm, stamp, epsilon, boundaries=b)
    except QStateError:
        sig = None
    return {"arm": arm, "stamp": stamp, "weak_value": wv, "probe_signal": sig}


def paradox_report(M: int, N: int, *, av_rounds: int = 0,
                   epsilon: float = 1e-3) -> dict:
    """Numeric contrast of end-to-end and per-cycle channel presence.

    End-to-end boundaries find the channel arm occupied in the first cycle
    (nonzero weak value, first-order probe signal) but not in the second;
    per-cycle boundaries find it occupied in neither.  With av_rounds >= 1
    the first-cycle end-to-end entry is suppressed as well.
    """
    c = build_paradox_circuit(M, N)
    e2e = end_to_end_boundaries(c)
    first = "c1.in1"
    second = "c2.in1" if M >= 2 else None

    rows: list[dict] = []

    def add(bname: str, b: BoundaryPair, sched: CircuitSchedule, arm: str, stamp: str | None):
        if stamp is None:
            return
        cell = _report_cell(sched, b, arm, stamp, epsilon)
        cell["boundaries"] = bname
        rows.append(cell)

    add("end-to-end", e2e, c, "S", "t0")  # sanity: source arm weak value is 1
    add("end-to-end", e2e, c, "C", first)
    add("end-to-end", e2e, c, "C", second)
    add("cycle1", cycle_boundaries(c, 1), c, "C", first)
    if M >= 2:
        add("cycle2", cycle_boundaries(c, 2), c, "C", second)

    channel = {"end-to-end": channel_probe_signal(c, epsilon)}
    if av_rounds >= 1:
        cav = build_paradox_circuit(M, N, av_rounds=av_rounds)
        add("end-to-end+av", end_to_end_boundaries(cav), cav, "C", first)
        channel["end-to-end+av"] = channel_probe_signal(cav, epsilon)

    return {"M": M, "N": N, "av_rounds": av_rounds, "epsilon": epsilon,
            "rows": rows, "channel_probe_signal": channel}


@dataclass(frozen=True)
class History:
    """One sequence of projector choices, ordered by stamp."""

    names: tuple[str, ...]
    events: tuple[tuple[str, Projector], ...]

    def __str__(self) -> str:
        return "(" + ",".join(self.names) + ")"


@dataclass(frozen=True)
class Family:
    """Shared boundaries plus per-stamp projector menus.

    ``slots`` maps each intermediate stamp to its offered (name, projector)
    choices; the family's histories are the cartesian product of those
    choices in slot order.
    """

    name: str
    pre: tuple[str, StateVector]
    post: tuple[str, Projector]
    slots: tuple[tuple[str, tuple[tuple[str, Projector], ...]], ...]

    def histories(self) -> tuple[History, ...]:
        menus = [[(nm, stamp, pi) for nm, pi in offers] for stamp, offers in self.slots]
        out = []
        for combo in itertools.product(*menus):
            out.append(History(names=tuple(nm for nm, _, _ in combo),
                               events=tuple((stamp, pi) for _, stamp, pi in combo)))
        return tuple(out)

    def validate(self, c: CircuitSchedule) -> None:
        """Stamps strictly increasing inside the boundary window; slot menus orthogonal."""
        i_pre = c.index_of(self.pre[0])
        i_post = c.index_of(self.post[0])
        if i_pre >= i_post:
            raise QStateError("family pre stamp must precede its post stamp")
        _check_normalized(self.pre[1], "family pre state")
        prev = i_pre
        for stamp, offers in self.slots:
            i = c.index_of(stamp)
            if not prev < i < i_post:
                raise QStateError(f"slot stamp {stamp!r} breaks the family's time order")
            prev = i
            if not offers:
                raise QStateError(f"slot at {stamp!r} offers no projectors")
            for lbl in c.universe:
                hits = sum(1 for _, pi in offers if pi.matches(lbl))
                if hits > 1:
                    raise QStateError(
                        f"slot at {stamp!r} offers overlapping projectors (label {lbl})")


@dataclass(frozen=True)
class ChainKet:
    """Unnormalized post-projected state of one history; norm**2 is its weight."""

    history: History
    state: StateVector

    @property
    def weight(self) -> float:
        return self.state.norm2()


def chain_ket(h: History, f: Family, c: CircuitSchedule) -> ChainKet:
    """Alternate unitary steps and history projectors, then apply the post projector."""
    f.validate(c)
    offered = {(stamp, pi) for stamp, offers in f.slots for _, pi in offers}
    for ev in h.events:
        if ev not in offered:
            raise QStateError(f"history event at {ev[0]!r} is not offered by the family")
    s = f.pre[1]
    i = c.index_of(f.pre[0])
    for stamp, pi in h.events:
        j = c.index_of(stamp)
        s = _evolve(c, s, i, j)
        s, _ = project(pi, s)
        i = j
    s = _evolve(c, s, i, c.index_of(f.post[0]))
    s, _ = project(f.post[1], s)
    return ChainKet(history=h, state=s.pruned())


def is_consistent(f: Family, c: CircuitSchedule) -> tuple[bool, tuple[History, History] | None]:
    """Pairwise chain-ket orthogonality; on failure, the first offending pair."""
    kets = [chain_ket(h, f, c) for h in f.histories()]
    for i in range(len(kets)):
        for j in range(i + 1, len(kets)):
            if abs(inner(kets[i].state, kets[j].state)) >= ATOL_CONSISTENT:
                return False, (kets[i].history, kets[j].history)
    return True, None


def history_probability(h: History, f: Family, c: CircuitSchedule) -> float:
    """Relative weight of h within a consistent family."""
    ok, pair = is_consistent(f, c)
    if not ok:
        assert pair is not None
        raise InconsistentFamilyError(
            f"family {f.name!r} is not consistent: {pair[0]} overlaps {pair[1]}")
    total = sum(chain_ket(g, f, c).weight for g in f.histories())
    if total < P_EMPTY:
        raise QStateError(f"family {f.name!r} has zero total weight")
    return chain_ket(h, f, c).weight / total


def builtin_families(c: CircuitSchedule) -> dict[str, Family]:
    """The four standard families over the first two outer cycles.

    ``cycle1`` and ``cycle2`` use per-cycle boundaries (source arm in, source
    arm out); ``final_via_cycle1`` and ``final_via_cycle2`` keep the same slot
    menus but stretch the boundaries from the source to the exit detection.
    """
    if c.meta.get("kind") != "nested-paradox":
        raise QStateError("builtin families are defined for nested-paradox schedules")
    if int(c.meta["M"]) < 2 or int(c.meta["N"]) < 2:
        raise QStateError("builtin families need at least two outer and two inner cycles")

    sh = StateVector({label("S", "H"): 1.0})
    post_sh = projector(paths="S", pols="H")
    post_fh = projector(paths="F", pols="H")
    path_menu = tuple((a, projector(paths=a)) for a in ("A", "B", "C"))
    entry_menu = tuple((a, projector(paths=a)) for a in ("A", "D"))

    def slots(cycle: int):
        return ((f"c{cycle}.t1", entry_menu),
                (f"c{cycle}.in1", path_menu),
                (f"c{cycle}.in2", path_menu))

    return {
        "cycle1": Family("cycle1", ("t0", sh), ("c1.t4", post_sh), slots(1)),
        "cycle2": Family("cycle2", ("c1.t4", sh), ("c2.t4", post_sh), slots(2)),
        "final_via_cycle2": Family("final_via_cycle2", ("t0", sh),
                                   ("t_final", post_fh), slots(2)),
        "final_via_cycle1": Family("final_via_cycle1", ("t0", sh),
                                   ("t_final", post_fh), slots(1)),
    }


def _projector_to_spec(p: Projector) -> dict:
    if p.labels is not None:
        raise QStateError("text form supports path/pol/bob projectors only")
    return {"paths": sorted(p.paths) if p.paths else None,
            "pols": sorted(p.pols) if p.pols else None,
            "bobs": sorted(p.bobs) if p.bobs else None}


def _projector_from_spec(spec: dict) -> Projector:
    return projector(paths=spec.get("paths"), pols=spec.get("pols"),
                     bobs=spec.get("bobs"))


def family_to_text(f: Family) -> str:
    """Line-oriented text form of a family (inverse of family_from_text)."""
    lines = ["zenoport-family v1", f"name {f.name}"]
    for k, v in sorted(f.pre[1].items()):
        lines.append(f"pre {f.pre[0]} {k.path} {k.pol} {k.bob} {v.real!r} {v.imag!r}")
    lines.append(f"post {f.post[0]} {json.dumps(_projector_to_spec(f.post[1]), sort_keys=True)}")
    for stamp, offers in f.slots:
        for nm, pi in offers:
            lines.append(f"slot {stamp} {nm} {json.dumps(_projector_to_spec(pi), sort_keys=True)}")
    return "\n".join(lines) + "\n"


def family_from_text(text: str) -> Family:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != "zenoport-family v1":
        raise QStateError("not a zenoport family text (missing header)")
    name = ""
    pre_stamp: str | None = None
    amps: dict = {}
    post: tuple[str, Projector] | None = None
    slot_order: list[str] = []
    slot_offers: dict[str, list[tuple[str, Projector]]] = {}
    for ln in lines[1:]:
        kind, _, rest = ln.partition(" ")
        if kind == "name":
            name = rest.strip()
        elif kind == "pre":
            stamp, path, pol, bob, re_s, im_s = rest.split()
            if pre_stamp is not None and stamp != pre_stamp:
                raise QStateError("pre lines must share one stamp")
            pre_stamp = stamp
            amps[label(path, pol, bob)] = complex(float(re_s), float(im_s))
        elif kind == "post":
            stamp, _, spec = rest.partition(" ")
            post = (stamp, _projector_from_spec(json.loads(spec)))
        elif kind == "slot":
            stamp, _, tail = rest.partition(" ")
            nm, _, spec = tail.partition(" ")
            if stamp not in slot_offers:
                slot_order.append(stamp)
                slot_offers[stamp] = []
            slot_offers[stamp].append((nm, _projector_from_spec(json.loads(spec))))
        else:
            raise QStateError(f"unknown family line kind {kind!r}")
    if pre_stamp is None or post is None or not slot_order:
        raise QStateError("family text needs pre, post and at least one slot line")
    return Family(name=name, pre=(pre_stamp, StateVector(amps)), post=post,
                  slots=tuple((st, tuple(slot_offers[st])) for st in slot_order))
