"""Full counterportation protocol and the (M, N) fidelity sweep.

The protocol transports the control qubit's state onto the photon's
polarization without the photon crossing the channel: round 1 sends a
plain H photon through the module and entangles it with the control;
Hadamards rotate both; round 2 sends the photon through the two-rail gate;
a final Hadamard pair and the Port1 polarization flip leave the control
qubit's amplitudes on the photon at both output ports.

Two fidelity readings are computed for every run: "loss-inclusive" scores
a lost photon as zero (an unconditional figure), "post-selected" divides
by the arrival probability (the conditional figure).
"""
from __future__ import annotations

import cmath
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .cqze import BobQubit, ProtocolConfig, _as_bob, run_cqze
from .qstate import (
    ConservationError,
    QStateError,
    StateVector,
    fidelity,
    label,
)

ATOL_SUM = 1e-12
P_EMPTY = 1e-300  # below this arrival probability the conditional figure is defined as 0

FIDELITY_MODES = ("loss-inclusive", "post-selected")


@dataclass(frozen=True)
class CounterportResult:
    """One protocol run: per-port joints, probabilities, fidelity readings."""

    port1: StateVector
    port2: StateVector
    p_port1: float
    p_port2: float
    p_lost: float
    loss_breakdown: dict[str, float]
    fidelity: float
    fidelity_post_selected: float
    bob_purity: dict[str, float]
    round_trace: dict[str, StateVector]

    def __post_init__(self):
        total = self.p_port1 + self.p_port2 + self.p_lost
        if abs(total - 1.0) > ATOL_SUM:
            raise ConservationError(f"port/loss probabilities sum to {total!r}, expected 1")

    @property
    def p_success(self) -> float:
        return self.p_port1 + self.p_port2

    @property
    def joint(self) -> StateVector:
        return self.port1 + self.port2


def _had_pol(s: StateVector, path: str | None = None) -> StateVector:
    """Hadamard on polarization: H -> (H+V)/sqrt2, V -> (H-V)/sqrt2."""
    r = 1.0 / math.sqrt(2.0)
    out: dict = {}
    for k, v in s.items():
        if path is not None and k.path != path:
            out[k] = out.get(k, 0j) + v
            continue
        h, vv = label(k.path, "H", k.bob), label(k.path, "V", k.bob)
        if k.pol == "H":
            out[h] = out.get(h, 0j) + r * v
            out[vv] = out.get(vv, 0j) + r * v
        else:
            out[h] = out.get(h, 0j) + r * v
            out[vv] = out.get(vv, 0j) - r * v
    return StateVector(out)


def _had_bob(s: StateVector) -> StateVector:
    """Hadamard on the control bit: |0> -> (|0>+|1>)/sqrt2, |1> -> (|0>-|1>)/sqrt2."""
    r = 1.0 / math.sqrt(2.0)
    out: dict = {}
    for k, v in s.items():
        if k.bob not in ("0", "1"):
            raise QStateError("control Hadamard requires a definite bit on every label")
        b0, b1 = label(k.path, k.pol, "0"), label(k.path, k.pol, "1")
        sign = 1.0 if k.bob == "0" else -1.0
        out[b0] = out.get(b0, 0j) + r * v
        out[b1] = out.get(b1, 0j) + sign * r * v
    return StateVector(out)


def _x_pol(s: StateVector, path: str) -> StateVector:
    out: dict = {}
    for k, v in s.items():
        if k.path == path:
            k = label(k.path, "V" if k.pol == "H" else "H", k.bob)
        out[k] = out.get(k, 0j) + v
    return StateVector(out)


def _bob_purity(port: StateVector) -> float | None:
    """Purity of the control qubit's reduced state on one port, or None if empty."""
    m = np.zeros((2, 2), dtype=complex)
    for k, v in port.items():
        m[0 if k.pol == "H" else 1, int(k.bob)] = v
    rho = m.conj().T @ m
    tr = rho.trace().real
    if tr < P_EMPTY:
        return None
    return float((rho @ rho).trace().real / (tr * tr))


def counterport(bob, cfg: ProtocolConfig) -> CounterportResult:
    """Run the two-round protocol for one control qubit.

    The target polarization (alpha, beta) is the control qubit's own
    amplitude pair; both fidelity readings compare against it.
    """
    bob = _as_bob(bob)
    trace: dict[str, StateVector] = {}

    r1 = run_cqze((1.0, 0.0), bob, cfg)
    losses = dict(r1.loss_breakdown)
    trace["round1"] = r1.joint

    s = _had_bob(_had_pol(r1.joint))
    trace["between_rounds"] = s

    # round 2: each control branch rides the two rails through a module
    # that always sees a plain H input
    base = {b: run_cqze((1.0, 0.0), b, cfg) for b in (0, 1)}
    r = 1.0 / math.sqrt(2.0)
    amps: dict = {}
    for b in ("0", "1"):
        g0 = s.amp(label("F", "H", b))
        g1 = s.amp(label("F", "V", b))
        if g0 == 0 and g1 == 0:
            continue
        out = base[int(b)]
        fH = out.joint.amp(label("F", "H", b))
        fV = out.joint.amp(label("F", "V", b))
        w = abs(g0) ** 2 + abs(g1) ** 2
        for fam, val in out.loss_breakdown.items():
            losses[fam] += w * val
        for port, sign in (("Port2", 1.0), ("Port1", -1.0)):
            h = label(port, "H", b)
            v = label(port, "V", b)
            amps[h] = amps.get(h, 0j) + r * (g0 * fH + sign * g1 * fV)
            amps[v] = amps.get(v, 0j) + r * (g0 * fV + sign * g1 * fH)
    joint = StateVector(amps)
    trace["round2_ports"] = joint

    joint = _x_pol(_had_pol(_had_bob(joint), "Port1"), "Port1")
    joint = _had_pol(joint, "Port2")
    trace["final"] = joint

    port1 = joint.restricted(paths=("Port1",))
    port2 = joint.restricted(paths=("Port2",))
    p1, p2 = port1.norm2(), port2.norm2()
    p_lost = sum(losses.values())

    target = StateVector({label("F", "H"): bob.alpha, label("F", "V"): bob.beta})
    f_li = fidelity(target, joint)
    f_ps = f_li / (p1 + p2) if (p1 + p2) >= P_EMPTY else 0.0

    purity = {}
    for name, port in (("Port1", port1), ("Port2", port2)):
        p = _bob_purity(port)
        if p is not None:
            purity[name] = p

    return CounterportResult(
        port1=port1,
        port2=port2,
        p_port1=p1,
        p_port2=p2,
        p_lost=p_lost,
        loss_breakdown=losses,
        fidelity=f_li,
        fidelity_post_selected=f_ps,
        bob_purity=purity,
        round_trace=trace,
    )


@dataclass(frozen=True)
class BlochSample:
    """Deterministic set of control qubits used for fidelity averaging."""

    qubits: tuple[BobQubit, ...]
    count: int
    scheme: str


def sample_bloch(count: int, scheme: str = "fibonacci", seed: int = 0) -> BlochSample:
    """Spread `count` qubits over the Bloch sphere.

    "fibonacci" places points on the golden-angle spiral with endpoints at
    the poles (count=1 gives the |0> pole, count=2 the antipodal pair);
    "seeded-uniform" draws them uniformly from the given seed.
    """
    if not isinstance(count, int) or count < 1:
        raise QStateError("sample count must be an integer >= 1")
    qubits = []
    if scheme == "fibonacci":
        golden = math.pi * (3.0 - math.sqrt(5.0))
        for i in range(count):
            z = 1.0 if count == 1 else 1.0 - 2.0 * i / (count - 1)
            phi = i * golden
            theta = math.acos(max(-1.0, min(1.0, z)))
            qubits.append(BobQubit(math.cos(theta / 2.0),
                                   cmath.exp(1j * phi) * math.sin(theta / 2.0)))
    elif scheme == "seeded-uniform":
        rng = random.Random(seed)
        for _ in range(count):
            z = rng.uniform(-1.0, 1.0)
            phi = rng.uniform(0.0, 2.0 * math.pi)
            theta = math.acos(z)
            qubits.append(BobQubit(math.cos(theta / 2.0),
                                   cmath.exp(1j * phi) * math.sin(theta / 2.0)))
    else:
        raise QStateError(f"unknown sampling scheme {scheme!r}")
    return BlochSample(tuple(qubits), count, scheme)


@dataclass
class FidelityGrid:
    """Rectangular (M, N) grid of averaged fidelity and arrival probability."""

    m_values: tuple[int, ...]
    n_values: tuple[int, ...]
    avg_fidelity: np.ndarray
    avg_success_prob: np.ndarray
    meta: dict = field(default_factory=dict)

    def cell(self, m: int, n: int) -> tuple[float, float]:
        i = self.m_values.index(m)
        j = self.n_values.index(n)
        return float(self.avg_fidelity[i, j]), float(self.avg_success_prob[i, j])

    def to_csv(self) -> str:
        lines = ["M,N,avg_fidelity,avg_success_prob"]
        for i, m in enumerate(self.m_values):
            for j, n in enumerate(self.n_values):
                lines.append(f"{m},{n},{float(self.avg_fidelity[i, j])!r},"
                             f"{float(self.avg_success_prob[i, j])!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "FidelityGrid":
        rows = [l.strip() for l in text.splitlines() if l.strip()]
        if not rows or rows[0] != "M,N,avg_fidelity,avg_success_prob":
            raise QStateError("grid CSV must start with header M,N,avg_fidelity,avg_success_prob")
        cells: dict[tuple[int, int], tuple[float, float]] = {}
        for row in rows[1:]:
            m_s, n_s, f_s, p_s = row.split(",")
            cells[(int(m_s), int(n_s))] = (float(f_s), float(p_s))
        m_values = tuple(sorted({m for m, _ in cells}))
        n_values = tuple(sorted({n for _, n in cells}))
        if len(cells) != len(m_values) * len(n_values):
            raise QStateError("grid CSV is not a fully populated rectangle")
        fid = np.empty((len(m_values), len(n_values)))
        prob = np.empty_like(fid)
        for (m, n), (f, p) in cells.items():
            fid[m_values.index(m), n_values.index(n)] = f
            prob[m_values.index(m), n_values.index(n)] = p
        return cls(m_values, n_values, fid, prob)

    def to_json(self) -> dict:
        return {
            "m_values": list(self.m_values),
            "n_values": list(self.n_values),
            "avg_fidelity": [[float(x) for x in row] for row in self.avg_fidelity],
            "avg_success_prob": [[float(x) for x in row] for row in self.avg_success_prob],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FidelityGrid":
        try:
            return cls(tuple(int(m) for m in obj["m_values"]),
                       tuple(int(n) for n in obj["n_values"]),
                       np.asarray(obj["avg_fidelity"], dtype=float),
                       np.asarray(obj["avg_success_prob"], dtype=float),
                       dict(obj.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            raise QStateError(f"malformed grid JSON: {exc}") from None


def _grid_row(args) -> tuple[list[float], list[float]]:
    m, n_values, cfg_template, qubits, mode = args
    fid_row: list[float] = []
    prob_row: list[float] = []
    for n in n_values:
        cfg = replace(cfg_template, M=m, N=n)
        fids = np.empty(len(qubits))
        probs = np.empty(len(qubits))
        for i, q in enumerate(qubits):
            res = counterport(q, cfg)
            fids[i] = res.fidelity if mode == "loss-inclusive" else res.fidelity_post_selected
            probs[i] = res.p_success
        # np.sum is pairwise over a fixed ordering, so averages are
        # bit-stable across worker counts
        fid_row.append(float(np.sum(fids) / len(qubits)))
        prob_row.append(float(np.sum(probs) / len(qubits)))
    return fid_row, prob_row


def sweep(m_max: int, n_max: int, cfg_template: ProtocolConfig, sample,
          *, fidelity_mode: str = "loss-inclusive", workers: int | None = None) -> FidelityGrid:
    """Average counterport fidelity over the sample for every (M, N) cell.

    cfg_template supplies the imperfection coefficients; its own M and N
    are replaced cell by cell.  workers > 1 distributes grid rows over
    processes; results are identical for any worker count.
    """
    if m_max < 1 or n_max < 1:
        raise QStateError("grid extents must be >= 1")
    if fidelity_mode not in FIDELITY_MODES:
        raise QStateError(f"fidelity_mode must be one of {FIDELITY_MODES}")
    qubits = tuple(sample.qubits) if isinstance(sample, BlochSample) else tuple(sample)
    if not qubits:
        raise QStateError("sample must contain at least one qubit")
    m_values = tuple(range(1, m_max + 1))
    n_values = tuple(range(1, n_max + 1))
    jobs = [(m, n_values, cfg_template, qubits, fidelity_mode) for m in m_values]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_row, jobs))
    else:
        rows = [_grid_row(j) for j in jobs]
    fid = np.array([r[0] for r in rows])
    prob = np.array([r[1] for r in rows])
    meta = {
        "eps_reflect": cfg_template.eps_reflect,
        "eps_block": cfg_template.eps_block,
        "av_rounds": cfg_template.av_rounds,
        "eps_block_per": cfg_template.eps_block_per,
        "sample_count": len(qubits),
        "sample_scheme": sample.scheme if isinstance(sample, BlochSample) else "explicit",
        "fidelity_mode": fidelity_mode,
    }
    return FidelityGrid(m_values, n_values, fid, prob, meta)
