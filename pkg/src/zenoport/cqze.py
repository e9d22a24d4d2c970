"""Chained-Zeno module evolution and the two-rail counterfactual gate.

The module holds M outer cycles.  Each outer cycle rotates the carrier
polarization by pi/2M, sends the V component through a dwell of inner
cycles (rotation pi/2N each, followed by the control event on the H
component), exhausts the H component returned by the dwell, and recombines
the rest.  The control qubit decides the event: bit 0 reflects the channel
photon back with amplitude sqrt(1-eps_reflect), bit 1 absorbs it except for
a mode-mismatch remainder sqrt(eps_block) that survives as if reflected.

With av_rounds = a, every dwell runs (1+a)*N inner cycles and the channel
entrance is blocked right after rotations N, 2N, ..., aN: the H component
is absorbed at the entrance on those cycles and the control event is
skipped, which suppresses the weak trace in the channel arm.

Loss bookkeeping is scalar (no sink labels in the returned states): the
dwell input is always a pure V slice, so each loss family reduces to one
intensity coefficient per dwell and the outer recursion costs O(1) per
cycle after a single O((1+a)N) precomputation per configuration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .optics import CircuitSchedule, build_paradox_circuit
from .qstate import (
    ConservationError,
    NormalizationError,
    QStateError,
    StateVector,
    label,
)

ATOL_SUM = 1e-12


@dataclass(frozen=True)
class ProtocolConfig:
    """Cycle counts and imperfection coefficients for one module.

    eps_block_per picks where the blocked-channel mode-mismatch leak acts:
    "inner" (default) applies the sqrt(eps_block) retention at every channel
    visit; "outer" applies it only at the first visit of each dwell and
    absorbs fully on the rest.
    """

    M: int
    N: int
    eps_reflect: float = 0.0
    eps_block: float = 0.0
    av_rounds: int = 0
    eps_block_per: str = "inner"

    def __post_init__(self):
        if not isinstance(self.M, int) or not isinstance(self.N, int):
            raise QStateError("M and N must be integers")
        if self.M < 1 or self.N < 1:
            raise QStateError("M and N must be >= 1")
        for name in ("eps_reflect", "eps_block"):
            v = getattr(self, name)
            if not 0.0 <= float(v) <= 1.0:
                raise QStateError(f"{name} must lie in [0, 1], got {v}")
        if not isinstance(self.av_rounds, int) or self.av_rounds < 0:
            raise QStateError("av_rounds must be an integer >= 0")
        if self.eps_block_per not in ("inner", "outer"):
            raise QStateError('eps_block_per must be "inner" or "outer"')

    @property
    def theta_outer(self) -> float:
        return math.pi / (2 * self.M)

    @property
    def theta_inner(self) -> float:
        return math.pi / (2 * self.N)

    @property
    def inner_total(self) -> int:
        """Inner cycles per dwell, including entrance-block extension rounds."""
        return (1 + self.av_rounds) * self.N


@dataclass(frozen=True)
class BobQubit:
    """Control qubit: alpha on |0> (reflect), beta on |1> (block)."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "beta", complex(self.beta))
        n2 = abs(self.alpha) ** 2 + abs(self.beta) ** 2
        if abs(n2 - 1.0) > ATOL_SUM:
            raise NormalizationError(f"control qubit norm^2 = {n2!r}, expected 1")

    @classmethod
    def reflecting(cls) -> "BobQubit":
        return cls(1.0, 0.0)

    @classmethod
    def blocking(cls) -> "BobQubit":
        return cls(0.0, 1.0)


def _as_bob(bob) -> BobQubit:
    if isinstance(bob, BobQubit):
        return bob
    if bob in (0, 1):
        return BobQubit(1.0 - bob, float(bob))
    raise QStateError(f"control must be a BobQubit or a bit, got {bob!r}")


@dataclass(frozen=True)
class CqzeOutcome:
    """Joint photon-control state at the module exit, plus loss accounting.

    loss_breakdown holds the four loss families: "DA" (per-cycle exhaust of
    the dwell's H output), "AV" (entrance blocks), "DB" (reflection leak),
    "Block" (absorption at the blocked channel).  p_loss_DA = DA + AV and
    p_loss_DB = DB + Block group them by which side eats the photon.
    """

    joint: StateVector
    p_success: float
    p_loss_DA: float
    p_loss_DB: float
    loss_breakdown: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        total = self.p_success + self.p_loss_DA + self.p_loss_DB
        if abs(total - 1.0) > ATOL_SUM:
            raise ConservationError(f"outcome probabilities sum to {total!r}, expected 1")


@dataclass(frozen=True)
class CnotOutcome:
    """Two-rail gate output: per-port joints and the five-way probabilities.

    z_pending marks Port1 as carrying an uncorrected polarization phase
    flip: applying Z to Port1's polarization yields the plain gate output.
    """

    joint: StateVector
    port1: StateVector
    port2: StateVector
    z_pending: bool
    probs: dict[str, float]
    loss_breakdown: dict[str, float]

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > ATOL_SUM:
            raise ConservationError(f"outcome probabilities sum to {total!r}, expected 1")


def _branch_pols(s: StateVector) -> dict[tuple[str, str], list[complex]]:
    by: dict[tuple[str, str], list[complex]] = {}
    for k, v in s.items():
        vec = by.setdefault((k.path, k.bob), [0j, 0j])
        vec[0 if k.pol == "H" else 1] += v
    return by


def inner_cycle(s: StateVector, cfg: ProtocolConfig) -> StateVector:
    """One inner cycle: rotate by pi/2N, then the control event on H.

    s must live on one path with control bit 0 or 1 on every label.  Loss
    is returned as a norm deficit (no sink labels), so the result is
    generally unnormalized; the missing probability went to the channel.
    A single cycle has no dwell context, so the mode-mismatch leak always
    acts per visit here (the "inner" convention).
    """
    paths = {k.path for k in s}
    if len(paths) > 1:
        raise QStateError(f"inner cycle state must live on one path, got {sorted(paths)}")
    c, sn = math.cos(cfg.theta_inner), math.sin(cfg.theta_inner)
    out: dict = {}
    for (path, bob), (h, v) in _branch_pols(s).items():
        if bob not in ("0", "1"):
            raise QStateError("inner cycle requires a definite control bit on every label")
        h, v = c * h - sn * v, sn * h + c * v
        keep2 = (1.0 - cfg.eps_reflect) if bob == "0" else cfg.eps_block
        h *= math.sqrt(keep2)
        if h:
            out[label(path, "H", bob)] = h
        if v:
            out[label(path, "V", bob)] = v
    return StateVector(out)


def run_inner(s: StateVector, cfg: ProtocolConfig) -> StateVector:
    """N-fold composition of inner_cycle (one plain dwell, no extension)."""
    for _ in range(cfg.N):
        s = inner_cycle(s, cfg)
    return s


@lru_cache(maxsize=None)
def _dwell(cfg: ProtocolConfig, bit: int) -> tuple[float, float, tuple[tuple[str, float], ...]]:
    """Transfer of one full dwell on a pure V input slice.

    Returns (t_HV, t_VV, loss coefficients): the dwell maps (0, l) to
    (t_HV*l, t_VV*l) and each family loses coeff*|l|^2.  Real entries only,
    since every step is a real rotation or a real scaling.  The recursion
    runs in extended precision: tens of thousands of chained double-float
    rotations would otherwise drift the probability budget past 1e-12.
    """
    one = np.longdouble(1.0)
    c = np.cos(np.longdouble(math.pi) / (2 * cfg.N))
    sn = np.sin(np.longdouble(math.pi) / (2 * cfg.N))
    keep2 = (one - np.longdouble(cfg.eps_reflect)) if bit == 0 else np.longdouble(cfg.eps_block)
    keep = np.sqrt(keep2)
    fam = "DB" if bit == 0 else "Block"
    coeffs = {"DB": np.longdouble(0.0), "Block": np.longdouble(0.0), "AV": np.longdouble(0.0)}
    zero = np.longdouble(0.0)
    t01, t11 = zero, one
    first_visit = True
    for j in range(1, cfg.inner_total + 1):
        t01, t11 = c * t01 - sn * t11, sn * t01 + c * t11
        if j % cfg.N == 0 and j // cfg.N <= cfg.av_rounds:
            coeffs["AV"] += t01 * t01
            t01 = zero
        else:
            if bit == 1 and cfg.eps_block_per == "outer" and not first_visit:
                k2, k = zero, zero
            else:
                k2, k = keep2, keep
            coeffs[fam] += (one - k2) * (t01 * t01)
            t01 = t01 * k
            first_visit = False
    out = tuple(sorted((k, float(v)) for k, v in coeffs.items()))
    return float(t01), float(t11), out


def run_cqze(pol_in: Sequence[complex], bob, cfg: ProtocolConfig) -> CqzeOutcome:
    """Full module: M outer cycles, each embedding one dwell.

    pol_in is the (H, V) amplitude pair entering the module (normally
    (1, 0): the two-rail gate handles general polarizations).  The joint
    output lives on path F with the control bit attached to each label.
    """
    bob = _as_bob(bob)
    aH, aV = (complex(a) for a in pol_in)
    if abs(abs(aH) ** 2 + abs(aV) ** 2 - 1.0) > ATOL_SUM:
        raise NormalizationError("input polarization must be normalized")
    c, sn = math.cos(cfg.theta_outer), math.sin(cfg.theta_outer)
    loss = {"DA": 0.0, "DB": 0.0, "Block": 0.0, "AV": 0.0}
    amps: dict = {}
    for bit, w in ((0, bob.alpha), (1, bob.beta)):
        if w == 0:
            continue
        t01, t11, coeff_items = _dwell(cfg, bit)
        vH, vV = w * aH, w * aV
        for _ in range(cfg.M):
            vH, vV = c * vH - sn * vV, sn * vH + c * vV
            p = abs(vV) ** 2
            loss["DA"] += (t01 * t01) * p
            for famname, coeff in coeff_items:
                loss[famname] += coeff * p
            vV *= t11
        b = str(bit)
        if vH:
            amps[label("F", "H", b)] = vH
        if vV:
            amps[label("F", "V", b)] = vV
    joint = StateVector(amps)
    return CqzeOutcome(
        joint=joint,
        p_success=joint.norm2(),
        p_loss_DA=loss["DA"] + loss["AV"],
        p_loss_DB=loss["DB"] + loss["Block"],
        loss_breakdown=loss,
    )


def counterfactual_cnot(pol_in: Sequence[complex], bob, cfg: ProtocolConfig) -> CnotOutcome:
    """Two-rail gate: H rides rail 1, V is flipped onto rail 2, each rail
    passes a module seeing a plain H input, and a 50/50 splitter recombines.

    Port2 = (rail1 + rail2)/sqrt2 carries the plain gate output; Port1 =
    (rail1 - rail2)/sqrt2 carries it up to a pending polarization Z flip.
    """
    aH, aV = (complex(a) for a in pol_in)
    if abs(abs(aH) ** 2 + abs(aV) ** 2 - 1.0) > ATOL_SUM:
        raise NormalizationError("input polarization must be normalized")
    base = run_cqze((1.0, 0.0), bob, cfg)
    r = 1.0 / math.sqrt(2.0)
    amps: dict = {}
    for k, v in base.joint.items():
        flip = "V" if k.pol == "H" else "H"
        for port, sign in (("Port2", 1.0), ("Port1", -1.0)):
            same = label(port, k.pol, k.bob)
            cross = label(port, flip, k.bob)
            amps[same] = amps.get(same, 0j) + r * aH * v
            amps[cross] = amps.get(cross, 0j) + sign * r * aV * v
    joint = StateVector(amps)
    port1 = joint.restricted(paths=("Port1",))
    port2 = joint.restricted(paths=("Port2",))
    probs = {
        "Port1": port1.norm2(),
        "Port2": port2.norm2(),
        "DA": base.p_loss_DA,
        "DB": base.loss_breakdown["DB"],
        "Block": base.loss_breakdown["Block"],
    }
    return CnotOutcome(
        joint=joint,
        port1=port1,
        port2=port2,
        z_pending=True,
        probs=probs,
        loss_breakdown=dict(base.loss_breakdown),
    )


def av_extension(cfg: ProtocolConfig) -> Callable[[CircuitSchedule], CircuitSchedule]:
    """Modifier adding cfg.av_rounds entrance-block rounds to a schedule.

    Each round blocks the channel entrance right after the dwell's N-th
    rotation and keeps the inner loop running for N more cycles; the added
    time needs no compensation in simulation.  With av_rounds = 0 the
    schedule is returned unchanged.
    """
    def modify(schedule: CircuitSchedule) -> CircuitSchedule:
        if schedule.meta.get("kind") != "nested-paradox":
            raise QStateError("the extension applies to nested two-level schedules only")
        if cfg.av_rounds == 0:
            return schedule
        return build_paradox_circuit(
            int(schedule.meta["M"]),
            int(schedule.meta["N"]),
            block_channel=bool(schedule.meta.get("block_channel", False)),
            av_rounds=cfg.av_rounds,
        )
    return modify
