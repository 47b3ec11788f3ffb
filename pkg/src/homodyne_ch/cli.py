"""Command-line front end.

Every subcommand prints a short summary and, with ``--out``, writes its
results as CSV or JSON next to a ``<out>.manifest.json`` run manifest.  The
manifest stores the resolved arguments, so ``--replay`` re-runs a command
and rewrites byte-identical outputs.  Timestamps appear only in the manifest
file, never inside the outputs.

Exit codes: 0 success, 1 invalid input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bell import (CHProblem, CM, DM, EventScheme, ch_value, hardy_ch_closed, hardy_settings,
                   hardy_vanishing_probs, oracle_agreement, p1_stationary_root,
                   p1_violation_boundary)
from .closedform import ConvergenceError
from .fock import DEFAULT_POLICY, TruncationError
from .model import FAMILIES, InputSpec, Setting
from .optimize import (CONSTRAINTS, OptimizationError, OptProblem, condition_residuals,
                       eta_threshold, onoff_problem, optimize_ch, scan_p, violation_region, zeta)

TOOL = "homodyne-ch"
CSV_COLUMNS = (
    "p", "ch",
    "alpha1", "phi1", "R1", "alpha2", "phi2", "R2",
    "alpha1p", "phi1p", "R1p", "alpha2p", "phi2p", "R2p",
    "residual_max", "eta", "scheme", "converged",
)
REGION_COLUMNS = ("p", "alpha2", "alpha0_sq", "ch", "violated")
ROBUSTNESS_COLUMNS = ("p", "sigma_rel", "zeta")
PRESETS = ("hardy", "p1-optimal", "onoff-max", "onoff-min")
SCHEMES = ("dm", "cm", "fixed", "mixed")
# arguments that only steer where results go; they are not part of a run's identity
_IO_ARGS = ("out", "format", "config", "replay", "replay_out", "command", "handler")


class UsageError(ValueError):
    """Bad command line or configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- parsing

def parse_grid(text: str) -> list[float]:
    """``a:b:step`` (inclusive), a comma list, or a single number."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid {text!r} must look like start:stop:step")
        a, b, step = (float(x) for x in parts)
        if step <= 0:
            raise UsageError("grid step must be positive")
        if b < a:
            return []
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + k * step, 12) for k in range(count)]
    if not text:
        return []
    return [float(x) for x in text.split(",")]


def parse_setting(text: str) -> Setting:
    """``alpha,phi,R`` or the word ``off``."""
    if str(text).strip().lower() == "off":
        return Setting.off()
    parts = str(text).split(",")
    if len(parts) != 3:
        raise UsageError(f"setting {text!r} must be alpha,phi,R or off")
    a, phi, R = (float(x) for x in parts)
    return Setting(a, phi, R)


def _scheme(args) -> EventScheme:
    if args.scheme == "dm":
        return DM
    if args.scheme == "cm":
        return CM
    if args.scheme == "fixed":
        return EventScheme.fixed(args.n, args.m)
    return EventScheme.mixed(args.n, args.m)


def _input(args, p: float | None = None) -> InputSpec:
    return InputSpec(args.input, args.p if p is None else p, args.xi)


def _opt_problem(args, p: float | None = None) -> OptProblem:
    spec = _input(args, p)
    if args.preset == "onoff-max":
        return onoff_problem(spec, "upper", args.eta, _scheme(args))
    if args.preset == "onoff-min":
        return onoff_problem(spec, "lower", args.eta, _scheme(args))
    if args.preset is not None:
        raise UsageError(f"preset {args.preset!r} does not define a search")
    direction = {"max": "maximize", "min": "minimize"}[args.direction]
    return OptProblem(spec, _scheme(args), direction, args.constraint, args.symmetric,
                      args.eta, args.alpha_max)


# ---------------------------------------------------------------- output

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _plain(x):
    """Convert numpy scalars and containers to JSON-native values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def result_row(p: float, ch: float, settings, residual_max: float, eta: float,
               scheme: str, converged: bool) -> dict:
    row = {"p": float(p), "ch": float(ch)}
    for key, s in zip(("1", "1p", "2", "2p"), settings):
        row[f"alpha{key}"] = float(s.alpha)
        row[f"phi{key}"] = float(s.phi)
        row[f"R{key}"] = float(s.R)
    row.update(residual_max=float(residual_max), eta=float(eta), scheme=scheme,
               converged=bool(converged))
    return {c: row[c] for c in CSV_COLUMNS}


def to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=",", lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_num(row[c]) for c in columns])
    return buf.getvalue()


def _parse_cell(text: str):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: _parse_cell(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def to_json(payload: dict) -> str:
    return json.dumps(_plain(payload), indent=2) + "\n"


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


class Outcome:
    """What a subcommand produced: rows for the table plus extra JSON fields."""

    def __init__(self, rows, columns=CSV_COLUMNS, extra=None, provenance=(), lines=(),
                 failed=False):
        self.rows = list(rows)
        self.columns = tuple(columns)
        self.extra = dict(extra or {})
        self.provenance = sorted(set(provenance))
        self.lines = list(lines)
        self.failed = failed


def run_manifest(command: str, params: dict, provenance) -> dict:
    """The deterministic part of a run manifest (embedded in every output)."""
    return {
        "tool": TOOL,
        "version": __version__,
        "command": command,
        "args": _plain(params),
        "seed": params.get("seed"),
        "truncation": asdict(DEFAULT_POLICY),
        "provenance": list(provenance),
    }


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def export(outcome: Outcome, manifest: dict, fmt: str, path) -> Path:
    if not outcome.rows:
        raise UsageError("nothing to export: the result set is empty")
    path = Path(path)
    if fmt == "csv":
        _write(path, to_csv(outcome.rows, outcome.columns))
    elif fmt == "json":
        payload = {"manifest": manifest, "columns": list(outcome.columns), "rows": outcome.rows}
        payload.update(outcome.extra)
        _write(path, to_json(payload))
    else:
        raise UsageError(f"unknown format {fmt!r}")
    return path


# ---------------------------------------------------------------- commands

def cmd_check_oracle(args) -> Outcome:
    worst = oracle_agreement(args.cases, args.seed)
    lines = [f"{k}: max |closed form - oracle| = {v:.3e}" for k, v in worst.items()]
    ok = max(worst.values()) <= args.tol
    lines.append(f"{args.cases} cases, tolerance {args.tol:g}: {'ok' if ok else 'FAILED'}")
    rows = [{"formula": k, "max_abs_dev": v} for k, v in worst.items()]
    return Outcome(rows, ("formula", "max_abs_dev"), {"cases": args.cases, "tol": args.tol},
                   ["oracle", "closed-form"], lines, failed=not ok)


def _preset_settings(args, spec: InputSpec):
    if args.preset == "hardy":
        return hardy_settings(spec.p), "closed"
    if args.preset == "p1-optimal":
        x = p1_stationary_root()
        on = Setting(math.sqrt(x), math.pi / 2, x)
        return (Setting.off(), on, Setting.off(), on), "closed"
    prob = _opt_problem(args)
    res = optimize_ch(prob, args.restarts, args.seed)
    return res.settings, "optimizer"


def cmd_ch_eval(args) -> Outcome:
    spec = _input(args)
    scheme = _scheme(args)
    if args.preset is not None:
        settings, _ = _preset_settings(args, spec)
    else:
        given = [args.A, args.Ap, args.B, args.Bp]
        if any(g is None for g in given):
            raise UsageError("give --preset or all of --A --Ap --B --Bp")
        settings = tuple(parse_setting(g) for g in given)
    val = ch_value(CHProblem(spec, tuple(settings), scheme, args.eta))
    res = condition_residuals(settings, scheme, args.eta)
    lines = [f"CH = {val.value:.6f}  ({val.value!r})"]
    lines += [f"  {k} = {v!r}" for k, v in val.components.items()]
    lines += [f"  {lab}: alpha={s.alpha!r} phi={s.phi!r} R={s.R!r}"
              for lab, s in zip(("A", "A'", "B", "B'"), settings)]
    row = result_row(spec.p, val.value, settings, max(res.values(), default=0.0), args.eta,
                     scheme.label, True)
    return Outcome([row], extra={"components": val.components}, provenance=val.provenance,
                   lines=lines)


def _opt_row(p, res, problem) -> dict:
    return result_row(p, res.value, res.settings, res.residual_max, problem.eta,
                      problem.scheme.label, res.converged)


def cmd_optimize(args) -> Outcome:
    prob = _opt_problem(args)
    res = optimize_ch(prob, args.restarts, args.seed, onoff_seeds=not args.no_onoff_seeds)
    lines = [f"best CH = {res.value!r} ({prob.direction}, {prob.constraint}, p={prob.input.p!r})",
             f"violation = {res.violation!r}  reliable = {res.reliable}",
             f"residuals = {_plain(res.residuals)}"]
    lines += [f"  {lab}: alpha={s.alpha!r} phi={s.phi!r} R={s.R!r}"
              for lab, s in zip(("A", "A'", "B", "B'"), res.settings)]
    return Outcome([_opt_row(prob.input.p, res, prob)], provenance=res.best.provenance,
                   lines=lines)


def cmd_scan(args) -> Outcome:
    grid = parse_grid(args.p_grid)
    if not grid:
        raise UsageError("empty p grid")
    template = _opt_problem(args, grid[0])
    points = scan_p(template, grid, args.restarts, args.seed)
    rows, prov, lines, errors = [], set(), [], []
    for pt in points:
        if pt.result is None:
            errors.append({"p": pt.p, "error": pt.error})
            lines.append(f"p={pt.p!r}: failed ({pt.error})")
            continue
        rows.append(_opt_row(pt.p, pt.result, template))
        prov |= pt.result.best.provenance
        lines.append(f"p={pt.p!r}: CH={pt.result.value!r}")
    if not rows:
        raise OptimizationError("every scan point failed")
    return Outcome(rows, extra={"errors": errors}, provenance=prov, lines=lines)


def cmd_region(args) -> Outcome:
    p_grid = parse_grid(args.p_grid)
    a_grid = parse_grid(args.alpha2_grid)
    if not p_grid or not a_grid:
        raise UsageError("region grids must be non-empty")
    reg = violation_region(p_grid, a_grid, args.side, args.restarts, args.seed, args.eta)
    rows = []
    for i, p in enumerate(reg.p_grid):
        for j, a2 in enumerate(reg.alpha2_grid):
            rows.append({"p": float(p), "alpha2": float(a2), "alpha0_sq": float(reg.alpha0_sq[i]),
                         "ch": float(reg.ch[i, j]), "violated": bool(reg.violated[i, j])})
    extra = {"p_grid": reg.p_grid, "alpha2_grid": reg.alpha2_grid, "alpha0_sq": reg.alpha0_sq,
             "violated": reg.violated, "ch_matrix": reg.ch}
    lines = [f"{int(reg.violated.sum())} of {reg.violated.size} cells violate the {args.side} bound"]
    return Outcome(rows, REGION_COLUMNS, extra, ["closed-form"], lines)


def cmd_robustness(args) -> Outcome:
    grid = parse_grid(args.p_grid)
    sigmas = parse_grid(args.sigma)
    if not grid or not sigmas:
        raise UsageError("robustness needs a p grid and at least one sigma")
    rows, lines = [], []
    for i, p in enumerate(grid):
        prob = onoff_problem(InputSpec.vac1photon(p), args.side)
        opt = optimize_ch(prob, args.restarts, args.seed)
        for s in sigmas:
            z = zeta(p, s, args.samples, args.seed + i, args.side, opt=opt)
            rows.append({"p": p, "sigma_rel": s, "zeta": z})
            lines.append(f"p={p!r} sigma_rel={s!r}: zeta = {z:.4f} %")
    return Outcome(rows, ROBUSTNESS_COLUMNS, provenance=["closed-form"], lines=lines)


def cmd_eta_threshold(args) -> Outcome:
    grid = parse_grid(args.p_grid)
    if not grid:
        raise UsageError("empty p grid")
    th = eta_threshold(args.significance, grid, args.seed, args.restarts, args.eta_lo, args.tol)
    lines = [f"eta_min = {th.eta!r} at p = {th.p!r} (violation {th.value!r})",
             f"residuals |R - eta alpha^2| = {_plain(th.residuals)}"]
    row = result_row(th.p, th.value, th.settings, max(th.residuals.values(), default=0.0),
                     th.eta, DM.label, True)
    return Outcome([row], extra={"significance": args.significance},
                   provenance=["closed-form+inefficiency"], lines=lines)


def cmd_hardy(args) -> Outcome:
    grid = parse_grid(args.p)
    if not grid:
        raise UsageError("empty p grid")
    rows, lines, prov = [], [], set()
    for p in grid:
        settings = hardy_settings(p)
        val = ch_value(CHProblem(InputSpec.vac1photon(p), settings))
        prov |= val.provenance
        closed = hardy_ch_closed(p)
        lines.append(f"p={p!r}: CH = {closed:.6g}  (closed form {closed!r}, evaluated {val.value!r})")
        on = settings[0]
        lines.append(f"  on: alpha^2={on.alpha ** 2!r} phi={on.phi!r} R={on.R!r}; off: alpha=0 R=0")
        for k, v in hardy_vanishing_probs(p).items():
            lines.append(f"  {k} = {v:.3e}")
        rows.append(result_row(p, val.value, settings, 0.0, 1.0, DM.label, True))
    lines.append(f"p=1 roots: optimum alpha^2 = {p1_stationary_root()!r}, "
                 f"violation boundary alpha^2 = {p1_violation_boundary()!r}")
    return Outcome(rows, provenance=prov, lines=lines)


# ---------------------------------------------------------------- parser

def _add_input(sp, p_default=0.5):
    sp.add_argument("--input", choices=FAMILIES, default="vac1photon")
    sp.add_argument("--p", type=float, default=p_default)
    sp.add_argument("--xi", type=float, default=math.pi / 4, help="unbalanced source angle")


def _add_scheme(sp):
    sp.add_argument("--scheme", choices=SCHEMES, default="dm",
                    help="dm: (0,1) events, cm: (1,0), fixed/mixed: (n,m) events")
    sp.add_argument("--n", type=int, default=0)
    sp.add_argument("--m", type=int, default=1)
    sp.add_argument("--eta", type=float, default=1.0, help="detector efficiency")


def _add_search(sp, restarts=64):
    sp.add_argument("--direction", choices=("max", "min"), default="max")
    sp.add_argument("--constraint", choices=CONSTRAINTS, default="free")
    sp.add_argument("--symmetric", action="store_true", help="same settings for both parties")
    sp.add_argument("--alpha-max", type=float, default=3.0)
    sp.add_argument("--restarts", type=int, default=restarts)
    sp.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=TOOL, description="Clauser-Horne tests with weak-field homodyne detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST", help="re-run a recorded manifest")
    parser.add_argument("--replay-out", metavar="PATH",
                        help="write the replayed output here instead of the recorded path")
    common = _Parser(add_help=False)
    common.add_argument("--out", help="output file (CSV or JSON); a manifest is written beside it")
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="defaults to the --out suffix, else csv")
    common.add_argument("--config", help="JSON file of option defaults")
    sub = parser.add_subparsers(dest="command")

    sp = sub.add_parser("check-oracle", parents=[common], help="closed forms vs Fock oracle")
    sp.add_argument("--cases", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.set_defaults(handler=cmd_check_oracle)

    sp = sub.add_parser("ch-eval", parents=[common], help="CH value for given settings")
    _add_input(sp)
    _add_scheme(sp)
    sp.add_argument("--preset", choices=PRESETS)
    for name in ("A", "Ap", "B", "Bp"):
        sp.add_argument(f"--{name}", help="alpha,phi,R or off")
    sp.add_argument("--restarts", type=int, default=16, help="for the onoff presets")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(handler=cmd_ch_eval)

    sp = sub.add_parser("optimize", parents=[common], help="extremal CH at one p")
    _add_input(sp)
    _add_scheme(sp)
    _add_search(sp)
    sp.add_argument("--preset", choices=("onoff-max", "onoff-min"))
    sp.add_argument("--no-onoff-seeds", action="store_true",
                    help="do not seed free searches with on/off optima")
    sp.set_defaults(handler=cmd_optimize)

    sp = sub.add_parser("scan", parents=[common], help="extremal CH over a p grid")
    _add_input(sp)
    _add_scheme(sp)
    _add_search(sp, restarts=16)
    sp.add_argument("--preset", choices=("onoff-max", "onoff-min"))
    sp.add_argument("--p-grid", default="0.1:0.9:0.1")
    sp.set_defaults(handler=cmd_scan)

    sp = sub.add_parser("region", parents=[common], help="violation region over (p, alpha^2)")
    sp.add_argument("--side", choices=("upper", "lower"), default="upper")
    sp.add_argument("--p-grid", default="0.1:0.9:0.1")
    sp.add_argument("--alpha2-grid", default="0:1:0.05")
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--restarts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(handler=cmd_region)

    sp = sub.add_parser("robustness", parents=[common], help="zeta(p) under intensity noise")
    sp.add_argument("--side", choices=("upper", "lower"), default="upper")
    sp.add_argument("--p-grid", default="0.1:0.9:0.2")
    sp.add_argument("--sigma", default="0.05,0.1", help="relative deviations")
    sp.add_argument("--samples", type=int, default=5000)
    sp.add_argument("--restarts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(handler=cmd_robustness)

    sp = sub.add_parser("eta-threshold", parents=[common], help="lowest efficiency still violating")
    sp.add_argument("--significance", type=float, default=1e-5)
    sp.add_argument("--p-grid", default="0.01:0.12:0.01")
    sp.add_argument("--restarts", type=int, default=8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eta-lo", type=float, default=0.75)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.set_defaults(handler=cmd_eta_threshold)

    sp = sub.add_parser("hardy", parents=[common], help="Hardy's settings and CH value")
    sp.add_argument("--p", default="0.5", help="a value or grid")
    sp.set_defaults(handler=cmd_hardy)
    return parser


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object of option names")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.replay or args.command is None or not getattr(args, "config", None):
        return args
    cfg = _load_config(args.config)
    known = set(vars(args))
    unknown = sorted(set(cfg) - known - set(_IO_ARGS))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    # config values become defaults; explicit flags still win
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    subparser.set_defaults(**{k: v for k, v in cfg.items() if k not in _IO_ARGS})
    return parser.parse_args(argv)


def _params(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _IO_ARGS}


def execute(args) -> tuple[Outcome, dict]:
    outcome = args.handler(args)
    manifest = run_manifest(args.command, _params(args), outcome.provenance)
    return outcome, manifest


def _replay_args(manifest_path, out_override) -> argparse.Namespace:
    try:
        data = read_json(manifest_path)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if data.get("tool") != TOOL or "command" not in data:
        raise UsageError(f"{manifest_path} is not a {TOOL} manifest")
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices.get(data["command"])
    if sub is None:
        raise UsageError(f"unknown command {data['command']!r} in manifest")
    args = sub.parse_args([])
    for k, v in data["args"].items():
        if not hasattr(args, k):
            raise UsageError(f"manifest argument {k!r} is not an option of {data['command']}")
        setattr(args, k, v)
    args.command = data["command"]
    args.out = out_override or data.get("output")
    args.format = data.get("format")
    args.config = None
    args.replay = None
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if args.replay:
            args = _replay_args(args.replay, args.replay_out)
        elif args.command is None:
            raise UsageError("a subcommand or --replay is required")
        outcome, manifest = execute(args)
        for line in outcome.lines:
            print(line)
        if args.out:
            fmt = args.format or ("json" if str(args.out).endswith(".json") else "csv")
            path = export(outcome, manifest, fmt, args.out)
            record = dict(manifest, output=str(path), format=fmt, argv=argv,
                          created=datetime.now(timezone.utc).isoformat(timespec="seconds"))
            _write(Path(f"{path}.manifest.json"), to_json(record))
            print(f"wrote {path}")
        if outcome.failed:
            return 2
        return 0
    except (ConvergenceError, TruncationError, OptimizationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
