"""Labeled complex amplitudes and sparse linear maps over tiny tensor-product bases.

Basis labels are (path, polarization, control-bit) triples.  Paths name
interferometer arms and loss sinks; polarization is stored canonically as
H/V with R/L accepted as aliases (R = H, L = V); the control bit is "0",
"1", or "-" when no control qubit is attached.

Everything here is immutable and pure, so states and maps are safe to
share across threads and sweep workers.
"""
from __future__ import annotations

import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass
from typing import NamedTuple

ATOL_NORM = 1e-12
ATOL_UNITARY = 1e-12
ATOL_TARGET = 1e-9
PRUNE_EPS = 1e-15

ARMS = ("S", "A", "B", "C", "D", "F", "Port1", "Port2")
SINKS = ("SinkD3", "SinkD0", "SinkDA", "SinkDB", "SinkBlock", "SinkAV")
POLS = ("H", "V")
_POL_ALIASES = {"H": "H", "V": "V", "R": "H", "L": "V"}
NO_BOB = "-"
_BOBS = ("0", "1", NO_BOB)


class QStateError(Exception):
    """Base class for state-vector layer errors."""


class LabelMismatchError(QStateError):
    """A state has support outside a map's declared domain."""


class NormalizationError(QStateError):
    """A state required to be normalized is not."""


class ConservationError(QStateError):
    """Total probability drifted beyond tolerance during evolution."""


class BasisLabel(NamedTuple):
    path: str
    pol: str = "H"
    bob: str = NO_BOB

    def ket(self) -> str:
        if self.bob == NO_BOB:
            return f"|{self.path},{self.pol}>"
        return f"|{self.path},{self.pol},{self.bob}>"


def label(path: str, pol: str = "H", bob: str | int = NO_BOB) -> BasisLabel:
    """Build a canonical BasisLabel; accepts R/L polarization aliases."""
    if not path:
        raise QStateError("empty path name")
    p = _POL_ALIASES.get(pol)
    if p is None:
        raise QStateError(f"unknown polarization {pol!r}")
    b = str(bob)
    if b not in _BOBS:
        raise QStateError(f"control bit must be 0, 1 or '-', got {bob!r}")
    return BasisLabel(path, p, b)


def is_sink(path: str) -> bool:
    return path.startswith("Sink")


class StateVector(Mapping):
    """Immutable map from BasisLabel to complex amplitude.

    Zero amplitudes are dropped at construction so labels are always
    pairwise distinct and support checks stay cheap.
    """

    __slots__ = ("_amps",)

    def __init__(self, amps: Mapping[BasisLabel, complex] | Iterable[tuple[BasisLabel, complex]] = ()):
        d = dict(amps)
        self._amps: dict[BasisLabel, complex] = {}
        for k, v in d.items():
            if not isinstance(k, BasisLabel):
                raise QStateError(f"state keys must be BasisLabel, got {type(k).__name__}")
            cv = complex(v)
            if cv != 0:
                self._amps[k] = cv

    def __getitem__(self, key: BasisLabel) -> complex:
        return self._amps[key]

    def __iter__(self) -> Iterator[BasisLabel]:
        return iter(self._amps)

    def __len__(self) -> int:
        return len(self._amps)

    def amp(self, key: BasisLabel) -> complex:
        return self._amps.get(key, 0j)

    def norm2(self) -> float:
        return sum((a.real * a.real + a.imag * a.imag) for a in self._amps.values())

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n < PRUNE_EPS:
            raise NormalizationError("cannot normalize a (near-)zero state")
        return StateVector({k: v / n for k, v in self._amps.items()})

    def pruned(self, eps: float = PRUNE_EPS) -> "StateVector":
        return StateVector({k: v for k, v in self._amps.items() if abs(v) > eps})

    def restricted(self, paths: Iterable[str] | None = None,
                   pols: Iterable[str] | None = None,
                   bobs: Iterable[str] | None = None) -> "StateVector":
        ps = None if paths is None else set(paths)
        qs = None if pols is None else {_POL_ALIASES[p] for p in pols}
        bs = None if bobs is None else {str(b) for b in bobs}
        return StateVector({k: v for k, v in self._amps.items()
                            if (ps is None or k.path in ps)
                            and (qs is None or k.pol in qs)
                            and (bs is None or k.bob in bs)})

    def __add__(self, other: "StateVector") -> "StateVector":
        out = dict(self._amps)
        for k, v in other._amps.items():
            out[k] = out.get(k, 0j) + v
        return StateVector(out)

    def __sub__(self, other: "StateVector") -> "StateVector":
        return self + (other * -1)

    def __mul__(self, scalar: complex) -> "StateVector":
        return StateVector({k: v * scalar for k, v in self._amps.items()})

    __rmul__ = __mul__

    def __repr__(self) -> str:
        parts = ", ".join(f"{k.ket()}: {v:.4g}" for k, v in sorted(self._amps.items()))
        return f"StateVector({{{parts}}})"


@dataclass(frozen=True)
class Projector:
    """Projector onto a product of path, polarization and control-bit sets.

    None means "all values"; an explicit label set may be given instead.
    Applying twice equals applying once exactly (membership tests only).
    """

    paths: frozenset[str] | None = None
    pols: frozenset[str] | None = None
    bobs: frozenset[str] | None = None
    labels: frozenset[BasisLabel] | None = None

    def matches(self, lbl: BasisLabel) -> bool:
        if self.labels is not None:
            return lbl in self.labels
        return ((self.paths is None or lbl.path in self.paths)
                and (self.pols is None or lbl.pol in self.pols)
                and (self.bobs is None or lbl.bob in self.bobs))


def projector(paths: Iterable[str] | str | None = None,
              pols: Iterable[str] | str | None = None,
              bobs: Iterable[str] | str | int | None = None) -> Projector:
    """Convenience constructor that canonicalizes pol aliases."""
    def as_set(x, conv):
        if x is None:
            return None
        if isinstance(x, (str, int)):
            x = (x,)
        return frozenset(conv(v) for v in x)
    return Projector(paths=as_set(paths, str),
                     pols=as_set(pols, lambda p: _POL_ALIASES[p]),
                     bobs=as_set(bobs, str))


class LinearMap:
    """Sparse linear map stored column-wise: columns[src][dst] = amplitude.

    kind "unitary" and "isometry" are audited at construction: columns must
    be orthonormal within 1e-12 (sink rows included), and a unitary must be
    square on its declared support.  kind "general" skips the audit.
    """

    __slots__ = ("columns", "kind", "name")

    def __init__(self, columns: Mapping[BasisLabel, Mapping[BasisLabel, complex]],
                 kind: str = "general", name: str = ""):
        if kind not in ("unitary", "isometry", "general"):
            raise QStateError(f"unknown map kind {kind!r}")
        self.columns: dict[BasisLabel, dict[BasisLabel, complex]] = {
            src: {dst: complex(a) for dst, a in col.items() if a != 0}
            for src, col in columns.items()
        }
        self.kind = kind
        self.name = name
        if kind in ("unitary", "isometry"):
            self._audit(kind)

    def _audit(self, kind: str) -> None:
        srcs = list(self.columns)
        for i, si in enumerate(srcs):
            ci = self.columns[si]
            ni = sum(abs(a) ** 2 for a in ci.values())
            if abs(ni - 1.0) > ATOL_UNITARY:
                raise QStateError(f"map {self.name or kind}: column {si.ket()} has norm^2 {ni}")
            for sj in srcs[i + 1:]:
                cj = self.columns[sj]
                ov = sum(ci[d].conjugate() * cj[d] for d in ci.keys() & cj.keys())
                if abs(ov) > ATOL_UNITARY:
                    raise QStateError(f"map {self.name or kind}: columns {si.ket()},{sj.ket()} not orthogonal")
        if kind == "unitary":
            rng = {d for col in self.columns.values() for d in col}
            if rng != set(srcs):
                raise QStateError(f"map {self.name or 'unitary'}: domain and range differ; declare it an isometry")

    @property
    def domain(self) -> frozenset[BasisLabel]:
        return frozenset(self.columns)

    def adjoint(self) -> "LinearMap":
        cols: dict[BasisLabel, dict[BasisLabel, complex]] = {}
        for src, col in self.columns.items():
            for dst, a in col.items():
                cols.setdefault(dst, {})[src] = a.conjugate()
        kind = "unitary" if self.kind == "unitary" else "general"
        return LinearMap(cols, kind=kind, name=f"{self.name}^T" if self.name else "")

    def __repr__(self) -> str:
        return f"LinearMap({self.name or self.kind}, {len(self.columns)} columns)"


def identity_map(labels: Iterable[BasisLabel], name: str = "identity") -> LinearMap:
    return LinearMap({l: {l: 1.0} for l in labels}, kind="unitary", name=name)


def apply(m: LinearMap, s: StateVector) -> StateVector:
    """Apply m to s.  Errors if s has support outside m's domain."""
    out: dict[BasisLabel, complex] = {}
    dom = m.columns
    for src, amp in s.items():
        col = dom.get(src)
        if col is None:
            raise LabelMismatchError(f"state label {src.ket()} outside map domain ({m.name or m.kind})")
        for dst, a in col.items():
            out[dst] = out.get(dst, 0j) + a * amp
    return StateVector(out)


def compose(first: LinearMap, second: LinearMap) -> LinearMap:
    """Map equal to applying `first`, then `second`."""
    cols: dict[BasisLabel, dict[BasisLabel, complex]] = {}
    for src, col in first.columns.items():
        acc: dict[BasisLabel, complex] = {}
        for mid, a in col.items():
            col2 = second.columns.get(mid)
            if col2 is None:
                raise LabelMismatchError(f"composition gap: {mid.ket()} outside second map's domain")
            for dst, b in col2.items():
                acc[dst] = acc.get(dst, 0j) + b * a
        cols[src] = acc
    if first.kind == "unitary" and second.kind == "unitary":
        kind = "unitary"
    elif first.kind in ("unitary", "isometry") and second.kind in ("unitary", "isometry"):
        kind = "isometry"
    else:
        kind = "general"
    return LinearMap(cols, kind=kind, name=f"{first.name};{second.name}".strip(";"))


def project(p: Projector, s: StateVector) -> tuple[StateVector, float]:
    """Project s onto p; returns the unnormalized part and its probability."""
    kept = StateVector({k: v for k, v in s.items() if p.matches(k)})
    return kept, kept.norm2()


def inner(a: StateVector, b: StateVector) -> complex:
    """Conjugate-linear in a, linear in b."""
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    total = 0j
    for k in small:
        if k in big:
            total += a[k].conjugate() * b[k]
    return total


def fidelity(target: StateVector, s: StateVector,
             paths: Iterable[str] | None = None) -> float:
    """Overlap of s's polarization content on the given paths with a target.

    target must be normalized (1e-9) and supported on a single path's
    polarization subspace; its path name is irrelevant, only the pol state
    counts.  Returns sum over (path, control-bit) branches of
    |<target_pol | s branch>|^2, which is p(path) times the expectation of
    the target projector on that branch.  Sinks never count, so with
    paths=None (all non-sink paths in s) lost amplitude scores zero.
    """
    if abs(target.norm() - 1.0) > ATOL_TARGET:
        raise NormalizationError(f"fidelity target norm {target.norm()} outside 1 +/- {ATOL_TARGET}")
    tpaths = {k.path for k in target}
    tbobs = {k.bob for k in target}
    if len(tpaths) > 1 or len(tbobs) > 1:
        raise QStateError("fidelity target must live on a single path and control-bit value")
    tau = {k.pol: v for k, v in target.items()}
    want = None if paths is None else set(paths)
    branches: dict[tuple[str, str], complex] = {}
    for k, v in s.items():
        if is_sink(k.path):
            continue
        if want is not None and k.path not in want:
            continue
        key = (k.path, k.bob)
        branches[key] = branches.get(key, 0j) + tau.get(k.pol, 0j).conjugate() * v
    return sum(abs(x) ** 2 for x in branches.values())
