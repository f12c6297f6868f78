r"""Command-line front end: single extraction, benchmark sweep, self-checks.

Subcommands:

``icex extract INPUT --init ... [--algorithm ...] [--truth ...] [--out DIR]``
    Run one algorithm on a recorded mixture file; write the extracted
    signal as a binary signal file plus a JSON report with the final
    (a, w), the convergence trace, and the output SIR when ground truth
    is supplied.  Exit code 0 on convergence, 2 on a max-iteration stop,
    1 on malformed input or a degenerate run.

``icex bench [--config ...] [--seed ...] [--trials ...] [--epsilon ...]
             [--jobs ...] [--out DIR] [--format {csv,json}]``
    Run the Monte-Carlo robustness benchmark and write results.csv,
    results.json and plots.svg.  Unknown config keys exit 1 listing the
    offenders.

``icex verify [--seed ...]``
    Run the numerical self-checks and print one pass/fail line each;
    exit 0 only if everything passes.

File formats:

* Signal files: 16-byte header ``<magic "ICX1"><uint32 d><uint64 N>``
  (little-endian), then row-major interleaved re/im float64 samples.
* Config files: one JSON object whose keys mirror
  :class:`icex.simbench.ExperimentConfig`.
* results.csv: a ``# manifest: <digest>`` comment line, a header row, and
  one row per (algorithm, background, epsilon_sq) cell; UTF-8, LF.

The manifest digest is a SHA-256 over the canonical resolved
configuration with execution-only settings (jobs) excluded, so the same
experiment yields byte-identical outputs at any parallelism.  No output
embeds wall-clock information.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import struct
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, simbench, verify
from .baselines import fica_one_unit, full_ica
from .ice import SolverError, ogice_a, ogice_s, ogice_w
from .linalg import NotPositiveDefiniteError, SingularMatrixError, \
    sample_covariance
from .mixing import (DegenerateParameterError, DegenerateSignalError,
                     background_basis, couple_a_from_w, couple_w_from_a)
from .simbench import (ALGORITHMS, BACKGROUNDS, FICA_SETTINGS, ICA_SETTINGS,
                       OGICE_SETTINGS, OGIVE_SETTINGS, ExperimentConfig,
                       run_experiment, sir_db)

MAGIC = b"ICX1"
_HEADER = struct.Struct("<4sIQ")

EXTRACT_ALGORITHMS = ("mpdr", "ogice_w", "ogice_a", "ogice_s", "fica",
                      "ng", "scng")

CSV_FIELDS = ("algorithm", "background", "epsilon_sq", "trials",
              "success_rate", "sir_mean_db", "sir_median_db", "mean_iters")

CONFIG_KEYS = frozenset(ExperimentConfig.__dataclass_fields__)

_INT_KEYS = ("d", "K", "N", "trials", "seed", "jobs")

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939")


class SignalFileError(ValueError):
    """The input is not a well-formed binary signal file."""


class ConfigError(ValueError):
    """The benchmark configuration cannot be resolved."""


def write_signal_file(path, X) -> None:
    """Write a (d, N) complex matrix in the binary signal format."""
    X = np.atleast_2d(np.asarray(X, dtype=np.complex128))
    d, N = X.shape
    buf = np.empty((d, N, 2), dtype="<f8")
    buf[..., 0] = X.real
    buf[..., 1] = X.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, d, N))
        fh.write(buf.tobytes())


def read_signal_file(path) -> np.ndarray:
    """Read a binary signal file back into a (d, N) complex matrix."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise SignalFileError(f"{path}: truncated or empty header")
        magic, d, N = _HEADER.unpack(head)
        if magic != MAGIC:
            raise SignalFileError(f"{path}: bad magic bytes {magic!r}")
        if d < 1 or N < 1:
            raise SignalFileError(f"{path}: empty signal ({d} x {N})")
        payload = fh.read()
    expected = 16 * d * N
    if len(payload) != expected:
        raise SignalFileError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8").reshape(d, N, 2)
    return np.ascontiguousarray(flat[..., 0] + 1j * flat[..., 1])


def _coerce_int(key: str, value) -> int:
    if isinstance(value, bool) or (isinstance(value, float)
                                   and value != int(value)):
        raise ConfigError(f"config key {key!r} must be an integer")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} must be an integer") from None


def load_config(path) -> dict:
    """Load a JSON config, rejecting anything but known keys."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    return data


def resolve_config(args) -> ExperimentConfig:
    """Merge config file, ICE_SEED and flags into an ExperimentConfig.

    Precedence, lowest to highest: built-in defaults, config file, the
    ICE_SEED environment variable, explicit flags.
    """
    data = load_config(args.config) if args.config else {}
    env_seed = os.environ.get("ICE_SEED", "").strip()
    if env_seed:
        data["seed"] = _coerce_int("ICE_SEED", env_seed)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.trials is not None:
        data["trials"] = args.trials
    if args.epsilon is not None:
        data["epsilon_sq"] = args.epsilon
    if args.jobs is not None:
        data["jobs"] = args.jobs
    data.setdefault("jobs", os.cpu_count() or 1)
    for key in _INT_KEYS:
        if key in data:
            data[key] = _coerce_int(key, data[key])
    for key in ("epsilon_sq", "sr_choices_db"):
        if key in data:
            try:
                data[key] = tuple(float(v) for v in data[key])
            except (TypeError, ValueError):
                raise ConfigError(
                    f"config key {key!r} must be a list of numbers") from None
    for key in ("backgrounds", "algorithms"):
        if key in data:
            data[key] = tuple(str(v) for v in data[key])
    try:
        return ExperimentConfig(**data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def canonical_config(cfg: ExperimentConfig) -> dict:
    """The digest-relevant configuration as plain JSON types."""
    data = asdict(cfg)
    del data["jobs"]
    for key in ("epsilon_sq", "sr_choices_db"):
        data[key] = [float(v) for v in data[key]]
    for key in ("backgrounds", "algorithms"):
        data[key] = list(data[key])
    return data


def manifest_digest(cfg: ExperimentConfig) -> str:
    blob = json.dumps(canonical_config(cfg), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def build_manifest(cfg: ExperimentConfig) -> dict:
    """Digest, tool version, seed, and the solver settings snapshot."""
    return {
        "digest": manifest_digest(cfg),
        "version": __version__,
        "seed": cfg.seed,
        "config": canonical_config(cfg),
        "settings": {
            "ogice": {"step_mu": OGICE_SETTINGS.step_mu,
                      "tol": OGICE_SETTINGS.tol,
                      "max_iter": OGICE_SETTINGS.max_iter},
            "ogive": {"step_mu": OGIVE_SETTINGS.step_mu,
                      "tol": OGIVE_SETTINGS.tol,
                      "max_iter": OGIVE_SETTINGS.max_iter},
            "fica": dict(FICA_SETTINGS),
            "ng": dict(ICA_SETTINGS),
            "scng": dict(ICA_SETTINGS),
        },
    }


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(path, rows, digest: str) -> None:
    lines = [f"# manifest: {digest}", ",".join(CSV_FIELDS)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[f]) for f in CSV_FIELDS))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_results_json(path, rows, manifest: dict) -> None:
    doc = {"manifest": manifest, "rows": rows}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _eps_label(eps: float) -> str:
    return repr(float(eps))


def _curve_panel(out: list, x0: float, y0: float, background: str,
                 cfg: ExperimentConfig, success: dict) -> None:
    """One success-rate panel: curves over the epsilon grid, y in 0..100."""
    px, py, pw, ph = x0 + 50.0, y0 + 26.0, 300.0, 220.0
    out.append(f'<text x="{_f(x0 + 50)}" y="{_f(y0 + 16)}" '
               f'font-size="13">success rate [%], {background} '
               'background</text>')
    out.append(f'<rect x="{_f(px)}" y="{_f(py)}" width="{_f(pw)}" '
               f'height="{_f(ph)}" fill="none" stroke="#000" '
               'stroke-width="1"/>')
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        gy = py + ph * (1.0 - frac)
        out.append(f'<line x1="{_f(px)}" y1="{_f(gy)}" x2="{_f(px + pw)}" '
                   f'y2="{_f(gy)}" stroke="#ccc" stroke-width="0.5"/>')
        out.append(f'<text x="{_f(px - 8)}" y="{_f(gy + 4)}" font-size="10" '
                   f'text-anchor="end">{int(frac * 100)}</text>')
    n = len(cfg.epsilon_sq)
    step = pw / max(n - 1, 1)
    for i, eps in enumerate(cfg.epsilon_sq):
        gx = px + i * step
        out.append(f'<line x1="{_f(gx)}" y1="{_f(py + ph)}" x2="{_f(gx)}" '
                   f'y2="{_f(py + ph + 4)}" stroke="#000" '
                   'stroke-width="1"/>')
        out.append(f'<text x="{_f(gx)}" y="{_f(py + ph + 16)}" '
                   f'font-size="10" text-anchor="middle">'
                   f'{_eps_label(eps)}</text>')
    out.append(f'<text x="{_f(px + pw / 2)}" y="{_f(py + ph + 32)}" '
               'font-size="11" text-anchor="middle">initial error '
               'epsilon^2 (log spacing)</text>')
    for ai, alg in enumerate(cfg.algorithms):
        color = PALETTE[ai % len(PALETTE)]
        pts = []
        for i, eps in enumerate(cfg.epsilon_sq):
            rate = success[(alg, background, eps)]
            gx = px + i * step
            gy = py + ph * (1.0 - rate)
            pts.append(f"{_f(gx)},{_f(gy)}")
        out.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        for pt in pts:
            cx, cy = pt.split(",")
            out.append(f'<circle cx="{cx}" cy="{cy}" r="2.5" '
                       f'fill="{color}"/>')


def _legend(out: list, x0: float, y0: float, algorithms) -> None:
    for ai, alg in enumerate(algorithms):
        color = PALETTE[ai % len(PALETTE)]
        ly = y0 + 26.0 + ai * 17.0
        out.append(f'<rect x="{_f(x0)}" y="{_f(ly - 8)}" width="14" '
                   f'height="8" fill="{color}"/>')
        out.append(f'<text x="{_f(x0 + 20)}" y="{_f(ly)}" '
                   f'font-size="11">{alg}</text>')


def _hist_panel(out: list, x0: float, y0: float, name: str, counts,
                edges, color: str) -> None:
    """One pooled SIR histogram panel with 2 dB bins."""
    px, py, pw, ph = x0 + 16.0, y0 + 24.0, 240.0, 130.0
    out.append(f'<text x="{_f(px)}" y="{_f(y0 + 14)}" '
               f'font-size="12">{name}</text>')
    out.append(f'<line x1="{_f(px)}" y1="{_f(py + ph)}" x2="{_f(px + pw)}" '
               f'y2="{_f(py + ph)}" stroke="#000" stroke-width="1"/>')
    top = max(int(np.max(counts)), 1)
    nbins = len(counts)
    bw = pw / nbins
    for i, c in enumerate(counts):
        if c == 0:
            continue
        h = ph * float(c) / top
        out.append(f'<rect x="{_f(px + i * bw)}" y="{_f(py + ph - h)}" '
                   f'width="{_f(bw)}" height="{_f(h)}" fill="{color}"/>')
    lo, hi = float(edges[0]), float(edges[-1])
    for val in (lo, 0.0, hi):
        gx = px + pw * (val - lo) / (hi - lo)
        out.append(f'<line x1="{_f(gx)}" y1="{_f(py + ph)}" x2="{_f(gx)}" '
                   f'y2="{_f(py + ph + 4)}" stroke="#000" '
                   'stroke-width="1"/>')
        out.append(f'<text x="{_f(gx)}" y="{_f(py + ph + 15)}" '
                   f'font-size="10" text-anchor="middle">{int(val)}</text>')
    out.append(f'<text x="{_f(px + pw / 2)}" y="{_f(py + ph + 28)}" '
               'font-size="10" text-anchor="middle">output SIR [dB], '
               f'peak bin {top}</text>')


def render_plots(cfg: ExperimentConfig, results, digest: str) -> str:
    """Self-contained SVG: success curves per background, then pooled
    SIR histograms per algorithm."""
    success = {(r.algorithm, r.background, r.epsilon_sq): r.row["success_rate"]
               for r in results}
    pooled: dict[str, list] = {alg: [] for alg in cfg.algorithms}
    for r in results:
        pooled[r.algorithm].append(r.sir)

    n_bg = len(cfg.backgrounds)
    curves_h = 310.0
    panel_w = 380.0
    legend_w = 150.0
    per_row = 4
    n_alg = len(cfg.algorithms)
    hist_rows = (n_alg + per_row - 1) // per_row
    hist_h = 200.0
    width = max(n_bg * panel_w + legend_w + 20.0, per_row * 280.0 + 20.0)
    height = 30.0 + curves_h + hist_rows * hist_h + 10.0

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" '
           f'height="{_f(height)}" font-family="sans-serif">',
           f'<!-- manifest: {digest} -->',
           f'<rect x="0" y="0" width="{_f(width)}" height="{_f(height)}" '
           'fill="#fff"/>',
           f'<text x="10" y="20" font-size="12">benchmark run '
           f'{digest[:16]} (seed {cfg.seed}, {cfg.trials} trials/cell)'
           '</text>']
    for bi, bg in enumerate(cfg.backgrounds):
        _curve_panel(out, 10.0 + bi * panel_w, 30.0, bg, cfg, success)
    _legend(out, 10.0 + n_bg * panel_w + 20.0, 30.0, cfg.algorithms)
    for ai, alg in enumerate(cfg.algorithms):
        sirs = np.concatenate(pooled[alg]) if pooled[alg] else np.zeros(0)
        edges, counts = simbench.histogram_counts(sirs)
        x0 = 10.0 + (ai % per_row) * 280.0
        y0 = 30.0 + curves_h + (ai // per_row) * hist_h
        _hist_panel(out, x0, y0, alg, counts, edges,
                    PALETTE[ai % len(PALETTE)])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_bench(args) -> int:
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    results = run_experiment(cfg)
    rows = [r.row for r in results]
    digest = manifest_digest(cfg)
    manifest = build_manifest(cfg)
    written = []
    if args.format in (None, "csv"):
        path = out_dir / "results.csv"
        write_results_csv(path, rows, digest)
        written.append(path)
    if args.format in (None, "json"):
        path = out_dir / "results.json"
        write_results_json(path, rows, manifest)
        written.append(path)
    svg_path = out_dir / "plots.svg"
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_plots(cfg, results, digest))
    written.append(svg_path)
    print(f"manifest {digest}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _parse_init(text: str, d: int) -> np.ndarray:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != d:
        raise SignalFileError(
            f"--init needs {d} comma-separated entries, got {len(parts)}")
    try:
        return np.array([complex(p) for p in parts], dtype=np.complex128)
    except ValueError:
        raise SignalFileError(
            "--init entries must be complex literals like 1+0.5j") from None


def _load_truth(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        A = np.asarray(doc["mixing"], dtype=float)
        if A.ndim != 3 or A.shape[0] != A.shape[1] or A.shape[2] != 2:
            raise ValueError("mixing must be a (d, d) matrix of "
                             "[re, im] pairs")
        variances = np.asarray(doc["variances"], dtype=float)
        if variances.shape != (A.shape[0],):
            raise ValueError("variances must list one power per source")
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise SignalFileError(f"bad truth file {path}: {exc}") from None
    return A[..., 0] + 1j * A[..., 1], variances


def _pairs(v) -> list:
    return [[float(z.real), float(z.imag)]
            for z in np.asarray(v, dtype=np.complex128).reshape(-1)]


def cmd_extract(args) -> int:
    try:
        X = read_signal_file(args.input)
        d = X.shape[0]
        a_ini = _parse_init(args.init, d)
        truth = _load_truth(args.truth) if args.truth else None
    except SignalFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    Cx = sample_covariance(X)
    algorithm = args.algorithm
    trace_norms: list = []
    failure = None
    try:
        if algorithm == "mpdr":
            w = couple_w_from_a(a_ini, Cx)
            a = np.asarray(a_ini)
            converged, iters = True, 0
        elif algorithm.startswith("ogice"):
            solver = {"ogice_w": ogice_w, "ogice_a": ogice_a,
                      "ogice_s": ogice_s}[algorithm]
            start = couple_w_from_a(a_ini, Cx) if algorithm == "ogice_w" \
                else a_ini
            a, w, trace = solver(X, start, config=OGICE_SETTINGS)
            converged, iters = trace.converged, trace.n_iter
            failure = trace.failure
            trace_norms = [float(v) for v in trace.grad_norms]
        elif algorithm == "fica":
            w_ini = couple_w_from_a(a_ini, Cx)
            a, w, trace = fica_one_unit(X, w_ini, **FICA_SETTINGS)
            converged, iters = trace.converged, trace.n_iter
            failure = trace.failure
            trace_norms = [float(v) for v in trace.grad_norms]
        else:
            w_ini = couple_w_from_a(a_ini, Cx)
            W0 = np.vstack([np.conj(w_ini)[None, :],
                            background_basis(a_ini)])
            W, trace = full_ica(X, W0, algorithm, **ICA_SETTINGS)
            w = np.conj(W[0])
            a = couple_a_from_w(w, Cx)
            converged, iters = trace.converged, trace.n_iter
            failure = trace.failure
            trace_norms = [float(v) for v in trace.grad_norms]
    except (SolverError, DegenerateParameterError, DegenerateSignalError,
            SingularMatrixError, NotPositiveDefiniteError) as exc:
        print(f"error: extraction failed: {exc}", file=sys.stderr)
        return 1

    s_hat = np.conj(w) @ X
    report = {
        "version": __version__,
        "algorithm": algorithm,
        "converged": bool(converged),
        "iterations": int(iters),
        "failure": failure,
        "a": _pairs(a),
        "w": _pairs(w),
        "grad_norms": trace_norms,
    }
    if truth is not None:
        A_true, variances = truth
        report["sir_db"] = float(sir_db(w, A_true, variances))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_signal_file(out_dir / "extracted.sig", s_hat[None, :])
    with open(out_dir / "extract.json", "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    sir_note = f", SIR {report['sir_db']:.2f} dB" if truth is not None else ""
    print(f"{algorithm}: converged={converged} after {iters} "
          f"iterations{sir_note}")
    print(f"wrote {out_dir / 'extracted.sig'}")
    print(f"wrote {out_dir / 'extract.json'}")
    return 0 if converged else 2


def cmd_verify(args) -> int:
    results = verify.run_all(seed=args.seed if args.seed is not None else 0)
    for res in results:
        print(str(res))
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def _epsilon_list(text: str):
    try:
        values = tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            "--epsilon takes comma-separated numbers") from None
    if not values:
        raise argparse.ArgumentTypeError("--epsilon needs at least one value")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icex",
        description="Blind extraction of one non-Gaussian source from "
                    "complex linear mixtures.")
    parser.add_argument("--version", action="version",
                        version=f"icex {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ext = sub.add_parser("extract",
                           help="extract one source from a signal file")
    p_ext.add_argument("input", help="binary signal file with the mixture")
    p_ext.add_argument("--algorithm", default="ogice_s",
                       choices=EXTRACT_ALGORITHMS)
    p_ext.add_argument("--init", required=True,
                       help="mixing-vector guess: d comma-separated complex "
                            "entries, e.g. '1+0j,0.1j,0.2'")
    p_ext.add_argument("--truth",
                       help="JSON file with ground-truth 'mixing' ([re, im] "
                            "pairs) and 'variances' for SIR reporting")
    p_ext.add_argument("--out", default=".", help="output directory")

    p_ben = sub.add_parser("bench", help="run the Monte-Carlo benchmark")
    p_ben.add_argument("--config", help="JSON config file")
    p_ben.add_argument("--seed", type=int, help="master seed override")
    p_ben.add_argument("--trials", type=int, help="trials per cell")
    p_ben.add_argument("--epsilon", type=_epsilon_list,
                       help="comma-separated epsilon^2 grid")
    p_ben.add_argument("--jobs", type=int,
                       help="worker processes (default: logical cores)")
    p_ben.add_argument("--out", default=".", help="output directory")
    p_ben.add_argument("--format", choices=("csv", "json"),
                       help="write only this results format (default: both)")

    p_ver = sub.add_parser("verify", help="run the numerical self-checks")
    p_ver.add_argument("--seed", type=int, help="seed for the check data")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"extract": cmd_extract, "bench": cmd_bench,
               "verify": cmd_verify}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
