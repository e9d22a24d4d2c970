"""Command line front end.

Five subcommands drive the simulator: ``sweep`` (fidelity grid with CSV,
JSON and SVG heatmap output), ``counterport`` (single transport run as a
JSON record), ``paradox`` (weak-value contrast table), ``weakvalues``
(full arm-by-stamp weak trace as CSV) and ``histories`` (consistency
report for projector families).

Configuration precedence is flags > config file (JSON) > built-in
defaults.  Exit codes: 0 success, 2 configuration error, 3 numerical
conservation breach.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .analysis import (
    BoundaryPair,
    arm_paths,
    builtin_families,
    chain_ket,
    cycle_boundaries,
    end_to_end_boundaries,
    family_from_text,
    history_probability,
    is_consistent,
    paradox_report,
    weak_trace_map,
)
from .counterport import FIDELITY_MODES, FidelityGrid, counterport, sample_bloch, sweep
from .cqze import BobQubit, ProtocolConfig
from .optics import build_paradox_circuit
from .qstate import ConservationError, QStateError, StateVector, label

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONSERVATION = 3

CLASSICAL_LIMIT = 2.0 / 3.0

_SCHEMES = ("fibonacci", "seeded-uniform")
_BLOCK_PER = ("inner", "outer")

_DEFAULTS: dict[str, dict] = {
    "sweep": {
        "m_max": 20, "n_max": 20, "eps_reflect": 0.10, "eps_block": 0.05,
        "av_rounds": 0, "eps_block_per": "inner", "samples": 100,
        "scheme": "fibonacci", "seed": 0, "fidelity_mode": "loss-inclusive",
        "ideal": False, "workers": 1, "out_dir": ".",
    },
    "counterport": {
        "m": 10, "n": 20, "alpha": "1", "beta": "0", "eps_reflect": 0.0,
        "eps_block": 0.0, "av_rounds": 0, "eps_block_per": "inner", "out": None,
    },
    "paradox": {
        "m": 2, "n": 2, "av_rounds": 0, "epsilon": 1e-3, "json_out": None,
    },
    "weakvalues": {
        "m": 2, "n": 2, "av_rounds": 0, "boundaries": "end-to-end", "out": None,
    },
    "histories": {
        "m": 2, "n": 2, "family": "all", "family_file": None, "json_out": None,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Fully merged, validated parameter block for one subcommand run."""

    subcommand: str
    params: dict

    def __getitem__(self, key: str):
        return self.params[key]


def _parse_complex(value, what: str) -> complex:
    if isinstance(value, (int, float, complex)):
        return complex(value)
    try:
        return complex(str(value).replace(" ", ""))
    except ValueError:
        raise QStateError(f"{what} is not a complex literal: {value!r}") from None


def _need_int(p: dict, key: str, lo: int) -> None:
    v = p[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise QStateError(f"config key {key!r} must be an integer")
    if v < lo:
        raise QStateError(f"config key {key!r} must be >= {lo}")


def _need_float(p: dict, key: str, lo: float, hi: float) -> None:
    v = p[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise QStateError(f"config key {key!r} must be a number")
    if not lo <= float(v) <= hi:
        raise QStateError(f"config key {key!r} must lie in [{lo}, {hi}]")
    p[key] = float(v)


def _need_choice(p: dict, key: str, choices) -> None:
    if p[key] not in choices:
        raise QStateError(f"config key {key!r} must be one of {list(choices)}")


def _need_opt_str(p: dict, key: str) -> None:
    if p[key] is not None and not isinstance(p[key], str):
        raise QStateError(f"config key {key!r} must be a string path")


def _validate(sub: str, p: dict) -> None:
    if sub == "sweep":
        _need_int(p, "m_max", 1)
        _need_int(p, "n_max", 1)
        _need_int(p, "samples", 1)
        _need_int(p, "workers", 1)
        _need_int(p, "seed", -(2 ** 63))
        _need_int(p, "av_rounds", 0)
        _need_float(p, "eps_reflect", 0.0, 1.0)
        _need_float(p, "eps_block", 0.0, 1.0)
        _need_choice(p, "scheme", _SCHEMES)
        _need_choice(p, "eps_block_per", _BLOCK_PER)
        _need_choice(p, "fidelity_mode", FIDELITY_MODES)
        if not isinstance(p["ideal"], bool):
            raise QStateError("config key 'ideal' must be a boolean")
        if not isinstance(p["out_dir"], str):
            raise QStateError("config key 'out_dir' must be a string path")
    elif sub == "counterport":
        _need_int(p, "m", 1)
        _need_int(p, "n", 1)
        _need_int(p, "av_rounds", 0)
        _need_float(p, "eps_reflect", 0.0, 1.0)
        _need_float(p, "eps_block", 0.0, 1.0)
        _need_choice(p, "eps_block_per", _BLOCK_PER)
        _need_opt_str(p, "out")
        _parse_complex(p["alpha"], "alpha")
        _parse_complex(p["beta"], "beta")
    elif sub == "paradox":
        _need_int(p, "m", 1)
        _need_int(p, "n", 1)
        _need_int(p, "av_rounds", 0)
        _need_float(p, "epsilon", 1e-12, 0.5)
        _need_opt_str(p, "json_out")
    elif sub == "weakvalues":
        _need_int(p, "m", 1)
        _need_int(p, "n", 1)
        _need_int(p, "av_rounds", 0)
        _need_opt_str(p, "out")
        b = p["boundaries"]
        if b != "end-to-end" and not (isinstance(b, str) and b.startswith("cycle")
                                      and b[5:].isdigit() and int(b[5:]) >= 1):
            raise QStateError("boundaries must be 'end-to-end' or 'cycle<k>'")
    elif sub == "histories":
        _need_int(p, "m", 1)
        _need_int(p, "n", 1)
        _need_opt_str(p, "family_file")
        _need_opt_str(p, "json_out")
        if not isinstance(p["family"], str) or not p["family"].strip():
            raise QStateError("family must be a non-empty name")
    else:  # pragma: no cover - argparse restricts subcommands
        raise QStateError(f"unknown subcommand {sub!r}")


def load_config(sub: str, config_path: str | None, flag_values: dict) -> RunConfig:
    """Merge defaults, optional JSON config file and explicit flags."""
    params = dict(_DEFAULTS[sub])
    if config_path is not None:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise QStateError(f"cannot read config file {config_path!r}: {exc}") from None
        try:
            file_params = json.loads(text)
        except json.JSONDecodeError as exc:
            raise QStateError(f"config file {config_path!r} is not valid JSON: {exc}") from None
        if not isinstance(file_params, dict):
            raise QStateError(f"config file {config_path!r} must hold a JSON object")
        unknown = sorted(set(file_params) - set(params))
        if unknown:
            raise QStateError(f"unknown config keys for {sub!r}: {unknown}")
        params.update(file_params)
    for key, value in flag_values.items():
        if value is not None:
            params[key] = value
    _validate(sub, params)
    return RunConfig(sub, params)


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise QStateError(f"cannot write {path}: {exc}") from None


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        _write_text(Path(out), text)


# ---------------------------------------------------------------- state JSON

def state_to_obj(s: StateVector) -> list[dict]:
    """JSON-friendly form of a state (inverse of state_from_obj)."""
    rows = []
    for k in sorted(s, key=lambda l: (l.path, l.pol, l.bob)):
        v = s[k]
        rows.append({"path": k.path, "pol": k.pol, "bob": k.bob,
                     "re": v.real, "im": v.imag})
    return rows


def state_from_obj(rows: list[dict]) -> StateVector:
    amps = {}
    for r in rows:
        amps[label(r["path"], r["pol"], r["bob"])] = complex(r["re"], r["im"])
    return StateVector(amps)


# --------------------------------------------------------------- weak map CSV

def weak_map_to_csv(c, trace: dict) -> str:
    """CSV form of a weak trace map; empty value fields mark undefined cells."""
    lines = ["arm,stamp,re,im"]
    for arm in arm_paths(c):
        for stamp in c.stamps:
            v = trace[(arm, stamp)]
            if v is None:
                lines.append(f"{arm},{stamp},,")
            else:
                lines.append(f"{arm},{stamp},{v.real!r},{v.imag!r}")
    return "\n".join(lines) + "\n"


def weak_map_from_csv(text: str) -> dict[tuple[str, str], complex | None]:
    rows = [l for l in text.splitlines() if l.strip()]
    if not rows or rows[0] != "arm,stamp,re,im":
        raise QStateError("weak-value CSV must start with header arm,stamp,re,im")
    out: dict[tuple[str, str], complex | None] = {}
    for row in rows[1:]:
        arm, stamp, re_s, im_s = row.split(",")
        out[(arm, stamp)] = None if re_s == "" else complex(float(re_s), float(im_s))
    return out


# ------------------------------------------------------------------ sweep SVG

def _ramp_color(v: float) -> str:
    v = min(1.0, max(0.0, v))
    lo = (20, 42, 94)
    hi = (250, 236, 120)
    r, g, b = (round(a + (z - a) * v) for a, z in zip(lo, hi))
    return f"#{r:02x}{g:02x}{b:02x}"


def svg_heatmap(grid: FidelityGrid, *, contour: float = CLASSICAL_LIMIT) -> str:
    """Self-contained SVG heatmap of avg_fidelity with a contour overlay."""
    cell = 22
    ml, mt, mr, mb = 70, 46, 130, 64
    rows = len(grid.m_values)
    cols = len(grid.n_values)
    width = ml + cols * cell + mr
    height = mt + rows * cell + mb
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        f'<text x="{ml}" y="20" font-size="14">average transport fidelity</text>',
    ]
    vals = grid.avg_fidelity
    for i in range(rows):
        for j in range(cols):
            x = ml + j * cell
            y = mt + i * cell
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{_ramp_color(float(vals[i, j]))}"/>')
    # contour: edges where neighbours straddle the threshold
    seg = []
    for i in range(rows):
        for j in range(cols):
            here = float(vals[i, j]) >= contour
            if j + 1 < cols and here != (float(vals[i, j + 1]) >= contour):
                x = ml + (j + 1) * cell
                seg.append(f'M{x} {mt + i * cell} V{mt + (i + 1) * cell}')
            if i + 1 < rows and here != (float(vals[i + 1, j]) >= contour):
                y = mt + (i + 1) * cell
                seg.append(f'M{ml + j * cell} {y} H{ml + (j + 1) * cell}')
    if seg:
        parts.append(f'<path d="{" ".join(seg)}" stroke="#d62728" stroke-width="2.5" fill="none"/>')
    # axis ticks
    xstep = max(1, cols // 10)
    for j in range(0, cols, xstep):
        x = ml + j * cell + cell // 2
        parts.append(f'<text x="{x}" y="{mt + rows * cell + 16}" '
                     f'text-anchor="middle">{grid.n_values[j]}</text>')
    ystep = max(1, rows // 10)
    for i in range(0, rows, ystep):
        y = mt + i * cell + cell // 2 + 4
        parts.append(f'<text x="{ml - 8}" y="{y}" text-anchor="end">{grid.m_values[i]}</text>')
    parts.append(f'<text x="{ml + cols * cell // 2}" y="{height - 14}" '
                 f'text-anchor="middle">N (inner cycles)</text>')
    parts.append(f'<text x="18" y="{mt + rows * cell // 2}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {mt + rows * cell // 2})">M (outer cycles)</text>')
    # color legend
    lx = ml + cols * cell + 24
    lh = max(rows * cell, 60)
    steps = 24
    for k in range(steps):
        v = 1.0 - k / (steps - 1)
        y = mt + round(k * (lh - lh / steps))
        parts.append(f'<rect x="{lx}" y="{y}" width="16" height="{lh // steps + 1}" '
                     f'fill="{_ramp_color(v)}"/>')
    parts.append(f'<text x="{lx + 22}" y="{mt + 10}">1.0</text>')
    parts.append(f'<text x="{lx + 22}" y="{mt + lh}">0.0</text>')
    cy = mt + round((1.0 - contour) * (lh - 1))
    parts.append(f'<line x1="{lx - 4}" y1="{cy}" x2="{lx + 20}" y2="{cy}" '
                 f'stroke="#d62728" stroke-width="2.5"/>')
    parts.append(f'<text x="{lx + 22}" y="{cy + 4}" fill="#d62728">2/3</text>')
    parts.append('</svg>')
    return "\n".join(parts) + "\n"


# -------------------------------------------------------------- subcommands

def cmd_sweep(cfg: RunConfig) -> int:
    p = cfg.params
    eps_r = 0.0 if p["ideal"] else p["eps_reflect"]
    eps_b = 0.0 if p["ideal"] else p["eps_block"]
    template = ProtocolConfig(M=1, N=1, eps_reflect=eps_r, eps_block=eps_b,
                              av_rounds=p["av_rounds"], eps_block_per=p["eps_block_per"])
    sample = sample_bloch(p["samples"], p["scheme"], p["seed"])
    grid = sweep(p["m_max"], p["n_max"], template, sample,
                 fidelity_mode=p["fidelity_mode"], workers=p["workers"])
    out_dir = Path(p["out_dir"])
    csv_path = out_dir / "sweep.csv"
    json_path = out_dir / "sweep.json"
    svg_path = out_dir / "sweep.svg"
    _write_text(csv_path, grid.to_csv())
    _write_text(json_path, json.dumps(grid.to_json(), sort_keys=True, indent=2) + "\n")
    _write_text(svg_path, svg_heatmap(grid))
    best = max((grid.cell(m, n)[0], m, n)
               for m in grid.m_values for n in grid.n_values)
    print(f"wrote {csv_path} {json_path} {svg_path}")
    print(f"best avg fidelity {best[0]:.6f} at (M,N)=({best[1]},{best[2]})")
    return EXIT_OK


def cmd_counterport(cfg: RunConfig) -> int:
    p = cfg.params
    bob = BobQubit(_parse_complex(p["alpha"], "alpha"), _parse_complex(p["beta"], "beta"))
    pcfg = ProtocolConfig(M=p["m"], N=p["n"], eps_reflect=p["eps_reflect"],
                          eps_block=p["eps_block"], av_rounds=p["av_rounds"],
                          eps_block_per=p["eps_block_per"])
    res = counterport(bob, pcfg)
    record = {
        "config": {"M": p["m"], "N": p["n"], "eps_reflect": p["eps_reflect"],
                   "eps_block": p["eps_block"], "av_rounds": p["av_rounds"],
                   "eps_block_per": p["eps_block_per"]},
        "bob": [[bob.alpha.real, bob.alpha.imag], [bob.beta.real, bob.beta.imag]],
        "p_port1": res.p_port1,
        "p_port2": res.p_port2,
        "p_success": res.p_success,
        "p_lost": res.p_lost,
        "loss_breakdown": dict(sorted(res.loss_breakdown.items())),
        "fidelity": res.fidelity,
        "fidelity_post_selected": res.fidelity_post_selected,
        "bob_purity": dict(sorted(res.bob_purity.items())),
        "rounds": {name: state_to_obj(sv) for name, sv in sorted(res.round_trace.items())},
    }
    _emit(json.dumps(record, sort_keys=True, indent=2) + "\n", p["out"])
    return EXIT_OK


def _format_cell(value) -> str:
    if value is None:
        return "undefined"
    if isinstance(value, (list, tuple)):
        return f"{value[0]:+.6f}{value[1]:+.6f}j"
    return f"{value:+.3e}"


def cmd_paradox(cfg: RunConfig) -> int:
    p = cfg.params
    report = paradox_report(p["m"], p["n"], av_rounds=p["av_rounds"], epsilon=p["epsilon"])
    print(f"M={report['M']} N={report['N']} av_rounds={report['av_rounds']} "
          f"epsilon={report['epsilon']:g}")
    print(f"{'boundaries':<15} {'arm':<4} {'stamp':<8} {'weak value':>20} {'probe signal':>13}")
    for row in report["rows"]:
        print(f"{row['boundaries']:<15} {row['arm']:<4} {row['stamp']:<8} "
              f"{_format_cell(row['weak_value']):>20} {_format_cell(row['probe_signal']):>13}")
    for name, sig in report["channel_probe_signal"].items():
        print(f"channel probe [{name}]: {sig:+.6e}")
    if p["json_out"] is not None:
        _write_text(Path(p["json_out"]), json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _boundaries_for(c, spec: str) -> BoundaryPair:
    if spec == "end-to-end":
        return end_to_end_boundaries(c)
    return cycle_boundaries(c, int(spec[5:]))


def cmd_weakvalues(cfg: RunConfig) -> int:
    p = cfg.params
    c = build_paradox_circuit(p["m"], p["n"], av_rounds=p["av_rounds"])
    b = _boundaries_for(c, p["boundaries"])
    trace = weak_trace_map(c, b)
    _emit(weak_map_to_csv(c, trace), p["out"])
    return EXIT_OK


def cmd_histories(cfg: RunConfig) -> int:
    p = cfg.params
    c = build_paradox_circuit(p["m"], p["n"])
    if p["family_file"] is not None:
        try:
            text = Path(p["family_file"]).read_text()
        except OSError as exc:
            raise QStateError(f"cannot read family file {p['family_file']!r}: {exc}") from None
        fam = family_from_text(text)
        families = {fam.name or "custom": fam}
    else:
        available = builtin_families(c)
        if p["family"] == "all":
            families = available
        elif p["family"] in available:
            families = {p["family"]: available[p["family"]]}
        else:
            raise QStateError(f"unknown family {p['family']!r}; "
                              f"choose from {sorted(available)} or 'all'")
    report: dict = {"M": p["m"], "N": p["n"], "families": {}}
    for name, fam in families.items():
        histories = fam.histories()
        if not histories:
            raise QStateError(f"family {name!r} offers no histories")
        consistent, pair = is_consistent(fam, c)
        entry: dict = {
            "n_histories": len(histories),
            "consistent": consistent,
            "offending_pair": None if pair is None else [list(pair[0].names),
                                                         list(pair[1].names)],
            "weights": {str(h): chain_ket(h, fam, c).weight for h in histories},
        }
        if consistent:
            entry["probabilities"] = {str(h): history_probability(h, fam, c)
                                      for h in histories}
        else:
            entry["probabilities"] = None
        report["families"][name] = entry
        verdict = "consistent" if consistent else f"NOT consistent ({pair[0]} vs {pair[1]})"
        print(f"{name}: {len(histories)} histories, {verdict}")
    if p["json_out"] is not None:
        _write_text(Path(p["json_out"]), json.dumps(report, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


_DISPATCH = {
    "sweep": cmd_sweep,
    "counterport": cmd_counterport,
    "paradox": cmd_paradox,
    "weakvalues": cmd_weakvalues,
    "histories": cmd_histories,
}


def _add_common(sp, keys: dict) -> None:
    sp.add_argument("--config", metavar="FILE", default=None,
                    help="JSON config file (flags override its keys)")
    for key, default in keys.items():
        flag = "--" + key.replace("_", "-")
        if isinstance(default, bool):
            sp.add_argument(flag, action="store_true", default=None,
                            help=f"(default {default})")
        elif isinstance(default, int):
            sp.add_argument(flag, type=int, default=None, help=f"(default {default})")
        elif isinstance(default, float):
            sp.add_argument(flag, type=float, default=None, help=f"(default {default})")
        else:
            sp.add_argument(flag, default=None, help=f"(default {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zenoport",
        description="Exchange-free qubit transport simulator and analysis toolkit.")
    sub = parser.add_subparsers(dest="cmd", required=True)
    helps = {
        "sweep": "average-fidelity grid over (M, N); writes CSV, JSON and SVG",
        "counterport": "one transport run; JSON record with per-round states",
        "paradox": "weak-value and probe contrast for the nested circuit",
        "weakvalues": "weak value of every arm at every stamp, as CSV",
        "histories": "consistency check and probabilities for history families",
    }
    for name, defaults in _DEFAULTS.items():
        sp = sub.add_parser(name, help=helps[name])
        _add_common(sp, defaults)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flag_values = {key: getattr(args, key) for key in _DEFAULTS[args.cmd]}
    try:
        cfg = load_config(args.cmd, args.config, flag_values)
        return _DISPATCH[args.cmd](cfg)
    except ConservationError as exc:
        print(f"conservation breach: {exc}", file=sys.stderr)
        return EXIT_CONSERVATION
    except QStateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
