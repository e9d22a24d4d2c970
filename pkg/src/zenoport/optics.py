"""Optical elements and time-stamped schedules for nested interferometers.

A schedule is an ordered list of time stamps with one composite step map
between consecutive stamps.  Every element acts as a total unitary over the
schedule's label universe: loss is modeled by routing into a sink label that
is used exactly once, so the step stays unitary while the sink amplitude is
frozen from then on.  That convention keeps distinct loss events orthogonal
and makes adjoint (backward) evolution well defined everywhere.

The main builder assembles the nested two-level interferometer: M outer
cycles (rotation pi/2M), each holding a chain of inner cycles (rotation
pi/2N).  Arm names: S source/carrier, A outer bypass, D inner carrier,
C inner channel arm (H component), B inner bypass arm (V component),
F final exit.  Per-cycle exhaust goes to SinkD3#m; a blocked channel feeds
SinkBlock#m.j; entrance blocks of the trace-suppression variant feed
SinkAV#m.k.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .qstate import (
    BasisLabel,
    ConservationError,
    LinearMap,
    Projector,
    QStateError,
    StateVector,
    apply,
    compose,
    is_sink,
    label,
    projector,
)

ELEMENT_KINDS = ("spr", "hwp", "pbs", "bs50", "pockels", "mirror",
                 "switchable_mirror", "block", "route")


@dataclass(frozen=True)
class Element:
    """One optical element: a kind, a display name, arm labels, parameters."""

    kind: str
    name: str
    arms: tuple[str, ...]
    params: tuple[tuple[str, object], ...] = ()

    def __post_init__(self):
        if self.kind not in ELEMENT_KINDS:
            raise QStateError(f"unknown element kind {self.kind!r}")

    def param(self, key: str, default=None):
        for k, v in self.params:
            if k == key:
                return v
        return default


def spr(theta: float, path: str = "S", name: str = "SPR") -> Element:
    """Polarization rotator: H -> cos*H + sin*V, V -> -sin*H + cos*V."""
    return Element("spr", name, (path,), (("theta", float(theta)),))


def hwp(phi: float, path: str = "S", name: str = "HWP") -> Element:
    """Half-wave plate at angle phi: H -> cos2phi*H + sin2phi*V, V -> sin2phi*H - cos2phi*V."""
    return Element("hwp", name, (path,), (("phi", float(phi)),))


def pbs(in_path: str, h_out: str, v_out: str, name: str = "PBS") -> Element:
    """Polarizing splitter: H component to h_out, V component to v_out.

    Traversing the same element again with in_path empty merges the two
    outputs back, so one constructor covers both split and merge passes.
    """
    return Element("pbs", name, (in_path, h_out, v_out))


def bs50(in1: str, in2: str, out_minus: str, out_plus: str, name: str = "BS") -> Element:
    """50/50 splitter: out_plus = (in1+in2)/sqrt2, out_minus = (in1-in2)/sqrt2."""
    return Element("bs50", name, (in1, in2, out_minus, out_plus))


def pockels(path: str, name: str = "PC") -> Element:
    """Fast polarization flip H <-> V."""
    return Element("pockels", name, (path,))


def mirror(path: str, name: str = "M") -> Element:
    """Bookkeeping mirror; reflection phases are absorbed into conventions."""
    return Element("mirror", name, (path,))


def switchable_mirror(path: str, on: bool, name: str = "SM") -> Element:
    """Switchable mirror; schedules are unrolled so it compiles to a no-op."""
    return Element("switchable_mirror", name, (path,), (("on", bool(on)),))


def block(path: str, sink: str, pols: tuple[str, ...] = ("H",), name: str = "Block") -> Element:
    """Absorb the given polarizations of path into a fresh sink label."""
    return Element("block", name, (path, sink), (("pols", tuple(pols)),))


def route(src: str, pol: str, dst: str, name: str = "route") -> Element:
    """Move one polarization component from src to dst (dst must be empty)."""
    return Element("route", name, (src, dst), (("pol", pol),))


def _bobs_on(universe: tuple[BasisLabel, ...], path: str) -> tuple[str, ...]:
    return tuple(sorted({l.bob for l in universe if l.path == path}))


def _swap(cols: dict, a: BasisLabel, b: BasisLabel) -> None:
    cols[a], cols[b] = {b: 1.0}, {a: 1.0}


def element_map(el: Element, universe: tuple[BasisLabel, ...]) -> LinearMap:
    """Total unitary action of el on the universe (identity elsewhere)."""
    uset = set(universe)
    cols: dict[BasisLabel, dict[BasisLabel, complex]] = {l: {l: 1.0} for l in universe}

    def need(lbl: BasisLabel) -> BasisLabel:
        if lbl not in uset:
            raise QStateError(f"element {el.name}: label {lbl.ket()} missing from universe")
        return lbl

    if el.kind in ("spr", "hwp"):
        (path,) = el.arms
        if el.kind == "spr":
            t = el.param("theta")
            hh, hv, vh, vv = math.cos(t), math.sin(t), -math.sin(t), math.cos(t)
        else:
            t = 2.0 * el.param("phi")
            hh, hv, vh, vv = math.cos(t), math.sin(t), math.sin(t), -math.cos(t)
        for b in _bobs_on(universe, path):
            h, v = need(label(path, "H", b)), need(label(path, "V", b))
            cols[h] = {h: hh, v: hv}
            cols[v] = {h: vh, v: vv}
    elif el.kind == "pockels":
        (path,) = el.arms
        for b in _bobs_on(universe, path):
            _swap(cols, need(label(path, "H", b)), need(label(path, "V", b)))
    elif el.kind == "pbs":
        in_path, h_out, v_out = el.arms
        for b in _bobs_on(universe, in_path):
            _swap(cols, need(label(in_path, "H", b)), need(label(h_out, "H", b)))
            _swap(cols, need(label(in_path, "V", b)), need(label(v_out, "V", b)))
    elif el.kind == "bs50":
        in1, in2, out_m, out_p = el.arms
        r = 1.0 / math.sqrt(2.0)
        for b in _bobs_on(universe, in1):
            for pol in ("H", "V"):
                a1, a2 = need(label(in1, pol, b)), need(label(in2, pol, b))
                om, op = need(label(out_m, pol, b)), need(label(out_p, pol, b))
                cols[a1] = {op: r, om: r}
                cols[a2] = {op: r, om: -r}
                cols[op] = {a1: r, a2: r}
                cols[om] = {a1: r, a2: -r}
    elif el.kind == "block":
        path, sink = el.arms
        for pol in el.param("pols"):
            for b in _bobs_on(universe, path):
                _swap(cols, need(label(path, pol, b)), need(label(sink, pol, b)))
    elif el.kind == "route":
        src, dst = el.arms
        pol = el.param("pol")
        for b in _bobs_on(universe, src):
            _swap(cols, need(label(src, pol, b)), need(label(dst, pol, b)))
    # mirror and switchable_mirror compile to the identity
    return LinearMap(cols, kind="unitary", name=el.name)


def step_map(elements: tuple[Element, ...], universe: tuple[BasisLabel, ...]) -> LinearMap:
    m = None
    for el in elements:
        em = element_map(el, universe)
        m = em if m is None else compose(m, em)
    if m is None:
        m = LinearMap({l: {l: 1.0} for l in universe}, kind="unitary", name="idle")
    return m


@dataclass
class CircuitSchedule:
    """Ordered time stamps plus one composite element step between each pair."""

    stamps: tuple[str, ...]
    steps: tuple[tuple[Element, ...], ...]
    universe: tuple[BasisLabel, ...]
    pre_state: StateVector
    post_projector: Projector | None = None
    aliases: dict[str, str] = field(default_factory=dict)
    meta: dict[str, object] = field(default_factory=dict)
    _maps: tuple[LinearMap, ...] | None = field(default=None, repr=False, compare=False)
    _adj_maps: tuple[LinearMap, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.stamps) != len(self.steps) + 1:
            raise QStateError("schedule needs exactly one step between consecutive stamps")
        if len(set(self.stamps)) != len(self.stamps):
            raise QStateError("time stamps must be unique")

    def resolve(self, stamp: str) -> str:
        return self.aliases.get(stamp, stamp)

    def index_of(self, stamp: str) -> int:
        s = self.resolve(stamp)
        try:
            return self.stamps.index(s)
        except ValueError:
            raise QStateError(f"stamp {stamp!r} not in schedule") from None

    def step_maps(self) -> tuple[LinearMap, ...]:
        if self._maps is None:
            self._maps = tuple(step_map(els, self.universe) for els in self.steps)
        return self._maps

    def adjoint_step_maps(self) -> tuple[LinearMap, ...]:
        """Adjoint of each step map, same step order as step_maps()."""
        if self._adj_maps is None:
            self._adj_maps = tuple(m.adjoint() for m in self.step_maps())
        return self._adj_maps

    def validate(self) -> None:
        """Re-run structural checks: arms exist, steps unitary, sinks fed once."""
        paths = {l.path for l in self.universe}
        for els in self.steps:
            for el in els:
                for arm in el.arms:
                    if arm not in paths:
                        raise QStateError(f"element {el.name} references unknown arm {arm!r}")
        self.step_maps()  # unitarity audited at construction
        fed: set[str] = set()
        for els in self.steps:
            here: set[str] = set()
            for el in els:
                for arm in el.arms:
                    if is_sink(arm):
                        here.add(arm)
            dup = here & fed
            if dup:
                raise QStateError(f"sink labels fed more than once: {sorted(dup)}")
            fed |= here

    def to_text(self) -> str:
        lines = ["zenoport-schedule v1", "meta " + json.dumps(self.meta, sort_keys=True)]
        for a, c in sorted(self.aliases.items()):
            lines.append(f"alias {a} {c}")
        for l in self.universe:
            lines.append(f"label {l.path} {l.pol} {l.bob}")
        for k, v in sorted(self.pre_state.items()):
            lines.append(f"pre {k.path} {k.pol} {k.bob} {v.real!r} {v.imag!r}")
        if self.post_projector is not None:
            p = self.post_projector
            if p.labels is not None:
                raise QStateError("text form supports path/pol/bob projectors only")
            spec = {"paths": sorted(p.paths) if p.paths else None,
                    "pols": sorted(p.pols) if p.pols else None,
                    "bobs": sorted(p.bobs) if p.bobs else None}
            lines.append("post " + json.dumps(spec, sort_keys=True))
        lines.append(f"stamp {self.stamps[0]}")
        for stamp, els in zip(self.stamps[1:], self.steps):
            lines.append(f"stamp {stamp}")
            for el in els:
                rec = {"kind": el.kind, "name": el.name, "arms": list(el.arms),
                       "params": {k: v for k, v in el.params}}
                lines.append("element " + json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CircuitSchedule":
        meta: dict[str, object] = {}
        aliases: dict[str, str] = {}
        universe: list[BasisLabel] = []
        pre: dict[BasisLabel, complex] = {}
        post = None
        stamps: list[str] = []
        steps: list[list[Element]] = []
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0].strip() != "zenoport-schedule v1":
            raise QStateError("not a schedule file (missing 'zenoport-schedule v1' header)")
        for line in lines[1:]:
            tag, _, rest = line.strip().partition(" ")
            if tag == "meta":
                meta = json.loads(rest)
            elif tag == "alias":
                a, c = rest.split()
                aliases[a] = c
            elif tag == "label":
                path, pol, bob = rest.split()
                universe.append(label(path, pol, bob))
            elif tag == "pre":
                path, pol, bob, re_s, im_s = rest.split()
                pre[label(path, pol, bob)] = complex(float(re_s), float(im_s))
            elif tag == "post":
                spec = json.loads(rest)
                post = projector(paths=spec.get("paths"), pols=spec.get("pols"),
                                 bobs=spec.get("bobs"))
            elif tag == "stamp":
                stamps.append(rest)
                if len(stamps) > 1:
                    steps.append([])
            elif tag == "element":
                rec = json.loads(rest)
                params = rec.get("params", {})
                for k, v in params.items():
                    if isinstance(v, list):
                        params[k] = tuple(v)
                steps[-1].append(Element(rec["kind"], rec["name"], tuple(rec["arms"]),
                                         tuple(sorted(params.items()))))
            else:
                raise QStateError(f"unknown schedule line tag {tag!r}")
        return cls(tuple(stamps), tuple(tuple(s) for s in steps), tuple(universe),
                   StateVector(pre), post, aliases, meta)


@dataclass
class TrajectoryRecord:
    """Full state at every stamp of one schedule run."""

    schedule: CircuitSchedule
    states: dict[str, StateVector]

    def at(self, stamp: str) -> StateVector:
        return self.states[self.schedule.resolve(stamp)]


def run_schedule(c: CircuitSchedule, input_state: StateVector | None = None) -> TrajectoryRecord:
    """Evolve the input through every step, checking conservation per stamp."""
    s = c.pre_state if input_state is None else input_state
    base = s.norm2()
    states = {c.stamps[0]: s}
    for stamp, m in zip(c.stamps[1:], c.step_maps()):
        s = apply(m, s).pruned()
        if abs(s.norm2() - base) > 1e-12:
            raise ConservationError(
                f"probability drifted to {s.norm2():.15f} at stamp {stamp} (started at {base:.15f})")
        states[stamp] = s
    return TrajectoryRecord(c, states)


def build_paradox_circuit(M: int, N: int, *, block_channel: bool = False,
                          av_rounds: int = 0) -> CircuitSchedule:
    """Nested interferometer: M outer cycles, each holding a chain of inner cycles.

    With av_rounds = a, each outer cycle runs (1+a)*N inner cycles and the
    channel entrance is blocked right after rotation k*N for k = 1..a, so
    the inner carrier is absorbed at the entrance instead of visiting the
    channel arm on those cycles.

    With block_channel, the channel arm C is absorbed at the far end on
    every visit (one fresh sink per cycle), which models a blocked channel.
    """
    if not (isinstance(M, int) and isinstance(N, int)) or M < 1 or N < 1:
        raise QStateError("M and N must be integers >= 1")
    if not isinstance(av_rounds, int) or av_rounds < 0:
        raise QStateError("av_rounds must be an integer >= 0")
    theta_m = math.pi / (2 * M)
    theta_n = math.pi / (2 * N)
    total = (1 + av_rounds) * N

    universe: list[BasisLabel] = []
    for arm in ("S", "A", "B", "C", "D", "F"):
        for pol in ("H", "V"):
            universe.append(label(arm, pol))
    for m in range(1, M + 1):
        universe.append(label(f"SinkD3#{m}", "H"))
        for k in range(1, av_rounds + 1):
            universe.append(label(f"SinkAV#{m}.{k}", "H"))
        if block_channel:
            for j in range(1, total + 1):
                universe.append(label(f"SinkBlock#{m}.{j}", "H"))

    outer_split = [spr(theta_m, "S", "HWP1"), pbs("S", "A", "D", "PBS1")]
    inner_split = [spr(theta_n, "D", "HWP2"), pbs("D", "C", "B", "PBS2")]

    stamps: list[str] = ["t0"]
    steps: list[tuple[Element, ...]] = []
    for m in range(1, M + 1):
        steps.append(tuple(outer_split))
        stamps.append(f"c{m}.t1")
        for j in range(1, total + 1):
            els: list[Element] = []
            if block_channel and j > 1:
                els.append(block("C", f"SinkBlock#{m}.{j - 1}", name="BobBlock"))
            if j > 1:
                els.append(pbs("D", "C", "B", "PBS2"))
            els.append(spr(theta_n, "D", "HWP2"))
            if j % N == 0 and j // N <= av_rounds:
                k = j // N
                els.append(route("D", "H", f"SinkAV#{m}.{k}", name="EntranceBlock"))
                els.append(route("D", "V", "B", name="PBS2"))
            else:
                els.append(pbs("D", "C", "B", "PBS2"))
            steps.append(tuple(els))
            stamps.append(f"c{m}.in{j}")
        els = []
        if block_channel:
            els.append(block("C", f"SinkBlock#{m}.{total}", name="BobBlock"))
        els.append(pbs("D", "C", "B", "PBS2"))
        els.append(route("A", "H", "S", name="OuterMerge"))
        els.append(route("D", "V", "S", name="OuterMerge"))
        els.append(route("D", "H", f"SinkD3#{m}", name="D3Exhaust"))
        steps.append(tuple(els))
        stamps.append(f"c{m}.t4")
    steps.append((route("S", "H", "F", name="Exit"), route("S", "V", "F", name="Exit")))
    stamps.append("t_final")

    aliases: dict[str, str] = {}
    if M == 2 and N == 2:
        aliases = {"t1": "c1.t1", "t2": "c1.in1", "t3": "c1.in2", "t4": "c1.t4",
                   "t'0": "c1.t4", "t'1": "c2.t1", "t'2": "c2.in1", "t'3": "c2.in2",
                   "t'4": "c2.t4"}

    return CircuitSchedule(
        stamps=tuple(stamps),
        steps=tuple(steps),
        universe=tuple(universe),
        pre_state=StateVector({label("S", "H"): 1.0}),
        post_projector=projector(paths="F"),
        aliases=aliases,
        meta={"kind": "nested-paradox", "M": M, "N": N,
              "block_channel": bool(block_channel), "av_rounds": av_rounds},
    )
