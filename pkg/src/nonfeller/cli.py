"""Command line front end: ``riccati``, ``solve``, ``simulate`` and ``verify``.

Every output file carries the full :class:`RunSpec` and a SHA-256 content
hash. JSON files hold them as ``runspec`` and ``content_hash`` keys; CSV
files as two leading ``#`` comment lines above the header row.

Exit codes: 0 success, 1 validation error, 2 numerical error (or an
inconclusive simulation), 3 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import classify_nonneg, closed_forms, decompose, defect, rate_fit
from .errors import DomainError, NumericalError
from .mc import SimConfig, phi_slope, run_exit
from .riccati import ModelParams, eval_J, mu_coth_mu, solve_riccati
from .semigroup import BoundaryFunction, VolterraConfig, solve
from .verify import SMOKE_SMOOTH, fd_sup_diff, run_checks

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

NAMED_PROFILES = ("h0", "h1", "g0", "g1", "zero", "one", "smoke")
VOLTERRA_KEYS = ("dt", "T", "n_space", "mode", "quad_tol")
SIM_KEYS = ("dt", "t_max", "phi_floor", "n_paths", "n_bins", "h_max", "scheme")


class ValidationError(Exception):
    pass


# --- run specification ------------------------------------------------------------

@dataclass(frozen=True)
class RunSpec:
    """Everything needed to reproduce one command's outputs."""

    command: str
    mu: float = 0.0
    sigma: float = 1.0
    f_spec: dict = field(default_factory=lambda: {"kind": "named", "value": "smoke"})
    volterra: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    out_dir: str = "out"
    seed: int = 0

    def __post_init__(self):
        if self.command not in ("riccati", "solve", "simulate", "verify"):
            raise ValidationError(f"unknown command {self.command!r}")
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValidationError("mu and sigma must be finite")
        if self.command in ("riccati", "simulate", "solve") and self.sigma <= 0:
            raise ValidationError("sigma must be positive")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.mu, self.sigma)

    def volterra_config(self) -> VolterraConfig:
        return VolterraConfig(**self.volterra)

    def sim_config(self) -> SimConfig:
        return SimConfig(seed=self.seed, **self.sim)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_f_spec(text: str, f0: float | None = None, f1: float | None = None) -> dict:
    """``h0|h1|g0|g1|zero|one|smoke``, ``poly:c0,c1,...`` or ``csv:PATH``."""
    if text in NAMED_PROFILES:
        spec = {"kind": "named", "value": text}
    elif text.startswith("poly:"):
        try:
            coeffs = [float(c) for c in text[5:].split(",") if c.strip()]
        except ValueError as exc:
            raise ValidationError(f"bad polynomial coefficients in {text!r}") from exc
        if not coeffs:
            raise ValidationError("polynomial needs at least one coefficient")
        spec = {"kind": "polynomial", "value": coeffs}
    elif text.startswith("csv:"):
        spec = {"kind": "csv", "value": text[4:]}
    else:
        raise ValidationError(f"unrecognized profile {text!r}")
    if f0 is not None:
        spec["f0"] = f0
    if f1 is not None:
        spec["f1"] = f1
    return spec


def _read_grid(path: str) -> np.ndarray:
    """Interior samples from a CSV; the last column is used, a header row is skipped."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ValidationError(f"cannot read profile grid {path!r}: {exc}") from exc
    vals = []
    for r in rows:
        try:
            vals.append(float(r[-1]))
        except ValueError:
            if vals:
                raise ValidationError(f"non-numeric row {r!r} in {path!r}")
    return np.array(vals)


def resolve_f(spec: RunSpec) -> BoundaryFunction:
    fs = spec.f_spec
    kind, value = fs.get("kind"), fs.get("value")
    f0, f1 = fs.get("f0"), fs.get("f1")
    if kind == "named":
        if value in ("h0", "h1", "g0", "g1"):
            cf = closed_forms(solve_riccati(spec.params))
            k = int(value[1])
            f = cf.h_function(k) if value[0] == "h" else cf.g_function(k)
        elif value == "zero":
            f = BoundaryFunction.zero()
        elif value == "one":
            f = BoundaryFunction.constant(1.0)
        elif value == "smoke":
            f = SMOKE_SMOOTH
        else:
            raise ValidationError(f"unknown named profile {value!r}")
    elif kind == "polynomial":
        f = BoundaryFunction.from_polynomial(value)
    elif kind == "csv":
        vals = _read_grid(value)
        if vals.size < 2:
            raise ValidationError("profile grid needs at least two interior samples")
        f = BoundaryFunction.from_grid(vals, vals[0], vals[-1])
    else:
        raise ValidationError(f"unknown profile kind {kind!r}")
    if f0 is not None or f1 is not None:
        f = f.with_boundary(f.f0 if f0 is None else f0, f.f1 if f1 is None else f1)
    return f


# --- hashed outputs ------------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def write_json(path: Path, spec: RunSpec, payload: dict) -> None:
    body = {"runspec": spec.to_dict(), **payload}
    digest = hashlib.sha256(_canonical(body).encode()).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"content_hash": digest, **body}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path: Path, spec: RunSpec, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    rs = _canonical(spec.to_dict())
    digest = hashlib.sha256((rs + "\n" + buf.getvalue()).encode()).hexdigest()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# runspec: {rs}\n# content_hash: {digest}\n")
        fh.write(buf.getvalue())


def _out_dir(spec: RunSpec) -> Path:
    out = Path(spec.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"out_dir {out} is not writable: {exc}") from exc
    return out


# --- commands ----------------------------------------------------------------------

def cmd_riccati(spec: RunSpec) -> int:
    out = _out_dir(spec)
    sol = solve_riccati(spec.params)
    write_json(out / "riccati.json", spec, sol.to_dict())
    x = np.linspace(0.0, 1.0, 1001)
    J = eval_J(sol, x)
    write_csv(out / "J_profile.csv", spec, ["x", "J0", "J1"], zip(x, J[:, 0], J[:, 1]))
    return EXIT_OK


def cmd_solve(spec: RunSpec) -> int:
    out = _out_dir(spec)
    f = resolve_f(spec)
    p = spec.params
    cfg = spec.volterra_config()
    sol = solve_riccati(p)
    fl = solve(f, p, cfg)
    header = ["t"] + [f"x={x:.6g}" for x in fl.nodes]
    write_csv(out / "field.csv", spec, header, ([t, *row] for t, row in zip(fl.times, fl.values)))
    write_csv(out / "traces.csv", spec, ["t", "u_t_0", "u_t_1"],
              zip(fl.times, fl.boundary_traces[:, 0], fl.boundary_traces[:, 1]))
    window = tuple(spec.options.get("window") or (0.5 * cfg.T, cfg.T))
    try:
        fit = rate_fit(fl, window, spec.options.get("rate_mode", "log")).to_dict()
    except DomainError as exc:
        fit = {"slope": None, "intercept": None, "mode": spec.options.get("rate_mode", "log"), "note": str(exc)}
    cls = classify_nonneg(f, sol)
    summary = {
        "defect": decompose(defect(f, sol), sol).to_dict(),
        "rate_fit": {**fit, "window": list(window)},
        "lambda0": sol.lambda0,
        "lambda1": sol.lambda1,
        "regime": sol.regime.value,
        "verdict": cls.verdict.value,
        "min_f": cls.min_f,
        "sup_norm_final": float(fl.sup_norms()[-1]),
        "field_min": float(fl.values.min()),
    }
    if spec.options.get("oracle"):
        absolute, relative = fd_sup_diff(f, p, cfg.T)
        summary["fd_sup_diff"] = absolute
        summary["fd_sup_diff_relative"] = relative
    write_json(out / "summary.json", spec, summary)
    return EXIT_OK


def cmd_simulate(spec: RunSpec) -> int:
    out = _out_dir(spec)
    p = spec.params
    sol = solve_riccati(p)
    cfg = spec.sim_config()
    slope_cfg = replace(cfg, n_paths=int(spec.options.get("slope_paths", 100)),
                        t_max=float(spec.options.get("slope_t_max", 1000.0)))
    runs = []
    for k in (0, 1):
        st = run_exit(k, p, cfg, sol=sol)
        est = phi_slope(p, slope_cfg, x0=float(k))
        st.phi_slope, st.phi_slope_se = est.slope, est.se
        runs.append(st)
    inconclusive = any(st.inconclusive for st in runs)
    write_json(out / "exit_stats.json", spec, {
        "exit": [st.to_dict() for st in runs],
        "masses": sol.masses.tolist(),
        "phi_slope_target": 1.0 - mu_coth_mu(p.mu) / p.sigma,
        "inconclusive": inconclusive,
    })
    rows = []
    for st in runs:
        for lo, hi, c, d in zip(st.bin_edges[:-1], st.bin_edges[1:], st.exit_hist, st.model_density):
            rows.append([st.k, float(lo), float(hi), int(c), float(d)])
    write_csv(out / "exit_hist.csv", spec, ["k", "bin_left", "bin_right", "count", "model_density"], rows)
    return EXIT_NUMERICAL if inconclusive else EXIT_OK


def cmd_verify(spec: RunSpec) -> int:
    out = _out_dir(spec)
    ids = spec.options.get("only")
    results = run_checks(ids, quick=bool(spec.options.get("quick")), echo=print)
    passed = all(r.passed for r in results)
    write_json(out / "report.json", spec, {
        "all_passed": passed,
        "checks": [r.to_dict() for r in results],
    })
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS = {"riccati": cmd_riccati, "solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify}


# --- argument handling ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of defaults; flags take precedence")
    common.add_argument("--mu", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--seed", type=int)

    parser = _Parser(prog="nonfeller", description="Dynamic-boundary diffusion toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("riccati", parents=[common], help="eigen-data and boundary densities J")

    s = sub.add_parser("solve", parents=[common], help="evolve initial data")
    s.add_argument("--f", dest="f", help="h0|h1|g0|g1|zero|one|smoke, poly:c0,c1,... or csv:PATH")
    s.add_argument("--f0", type=float, help="override f(0)")
    s.add_argument("--f1", type=float, help="override f(1)")
    s.add_argument("--T", dest="T", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--n-space", dest="n_space", type=int)
    s.add_argument("--mode", choices=["march", "picard"])
    s.add_argument("--window", type=float, nargs=2, metavar=("T1", "T2"))
    s.add_argument("--rate-mode", dest="rate_mode", choices=["log", "linear"])
    s.add_argument("--oracle", action="store_true", default=None, help="compare against finite differences")

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo exit law and Phi drift")
    m.add_argument("--n-paths", dest="n_paths", type=int)
    m.add_argument("--dt", type=float)
    m.add_argument("--h-max", dest="h_max", type=float)
    m.add_argument("--t-max", dest="t_max", type=float)
    m.add_argument("--n-bins", dest="n_bins", type=int)
    m.add_argument("--scheme", choices=["bridge", "fold"])
    m.add_argument("--slope-paths", dest="slope_paths", type=int)
    m.add_argument("--slope-t-max", dest="slope_t_max", type=float)

    v = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    v.add_argument("--quick", action="store_true", default=None, help="skip Monte Carlo checks")
    v.add_argument("--only", type=int, nargs="+", help="check ids to run")
    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path!r}: {exc}") from exc
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    return data


def spec_from_args(argv: list[str] | None = None) -> RunSpec:
    args = vars(build_parser().parse_args(argv))
    conf = _load_config(args.pop("config"))
    command = args.pop("command")
    merged = {**conf, **{k: v for k, v in args.items() if v is not None}}
    pick = lambda keys: {k: merged[k] for k in keys if k in merged}
    f_spec = parse_f_spec(str(merged.get("f", "smoke")), merged.get("f0"), merged.get("f1"))
    vol = pick(VOLTERRA_KEYS) if command == "solve" else {}
    sim = pick(SIM_KEYS) if command == "simulate" else {}
    options = pick(("window", "rate_mode", "oracle", "slope_paths", "slope_t_max", "quick", "only"))
    try:
        spec = RunSpec(command=command, mu=float(merged.get("mu", 0.0)), sigma=float(merged.get("sigma", 1.0)),
                       f_spec=f_spec, volterra=vol, sim=sim, options=options,
                       out_dir=str(merged.get("out_dir", "out")), seed=int(merged.get("seed", 0)))
        if command == "solve":
            spec.volterra_config()
        if command == "simulate":
            spec.sim_config()
    except (TypeError, DomainError) as exc:
        raise ValidationError(str(exc)) from exc
    return spec


def _report_error(spec: RunSpec | None, kind: str, exc: Exception) -> None:
    diag = {"error": kind, "message": str(exc), "diagnostics": getattr(exc, "diagnostics", {})}
    print(json.dumps(diag, default=str), file=sys.stderr)
    if spec is not None:
        try:
            write_json(Path(spec.out_dir) / "error.json", spec, diag)
        except (OSError, TypeError):
            pass


def main(argv: list[str] | None = None) -> int:
    spec = None
    try:
        spec = spec_from_args(argv)
        return COMMANDS[spec.command](spec)
    except (ValidationError, DomainError) as exc:
        _report_error(spec, "validation", exc)
        return EXIT_VALIDATION
    except NumericalError as exc:
        _report_error(spec, "numerical", exc)
        return EXIT_NUMERICAL


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
