"""Command-line entry point.

Every subcommand writes a CSV (or JSON) table and, when an output file is
given, a ``<out>.manifest.json`` recording the resolved argv, config, seed,
version, duration and outputs.  ``run --manifest FILE`` replays it.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import dists_for, support_hint
from .error_rate import (
    FILTERS,
    AsymptoticRegimeError,
    DegenerateDistributionsError,
    OptimizationError,
    optimize_filter,
    scaling_study,
)
from .fitting import FitParams, HistogramError, fit, ingest_histogram
from .mlfilter import ML_TAU_M, EstimatorStepError, default_ml_dt, integrate_estimator, ml_error_rate
from .model import (
    ParameterError,
    QubitState,
    ReadoutConfig,
    generate_binned_trace,
    generate_continuous_trace,
    shot_rng,
)


class UsageError(Exception):
    pass


NUMERICAL_ERRORS = (
    OptimizationError, EstimatorStepError, DegenerateDistributionsError,
    AsymptoticRegimeError, FloatingPointError,
)
INPUT_ERRORS = (UsageError, ParameterError, HistogramError)

# built-in defaults; --config values override these and flags override both
DEFAULTS = {
    "gamma": 4.0, "r": None, "tau_m": 2.5, "n_bins": 1.0, "p_plus": 0.5, "seed": 0,
    "filter": "peak", "state": "plus", "kind": "binned", "dt": None, "shot": 0,
    "records": 50000, "points": 401, "psi_min": None, "psi_max": None,
    "r_grid": None, "format": "edges", "data": None, "init": None, "fix_scale": False,
}


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def write_csv(header, rows, out) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    _emit(text, out)
    return text


def _emit(text, out):
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("READOUT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"READOUT_THREADS must be an integer, got {env!r}") from None
    return 1


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve(args, keys) -> dict:
    """Merge flags over config over defaults for ``keys``."""
    cfg = _load_config(args.config)
    out = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is None:
            v = cfg.get(k, DEFAULTS[k])
        out[k] = v
    return out


def _readout(p, **over) -> ReadoutConfig:
    if p.get("r") is None:
        raise UsageError("--snr is required (or 'r' in --config)")
    vals = dict(r=float(p["r"]), gamma=p["gamma"], tau_m=float(p["tau_m"]),
                n_bins=float(p["n_bins"]), p_plus=float(p["p_plus"]), seed=int(p["seed"]))
    vals.update(over)
    return ReadoutConfig(**vals)


def _state(name) -> QubitState:
    try:
        return {"plus": QubitState.PLUS, "+": QubitState.PLUS, "minus": QubitState.MINUS, "-": QubitState.MINUS}[name]
    except KeyError:
        raise UsageError(f"state must be plus or minus, got {name!r}") from None


# --------------------------------------------------------------------------
# subcommands; each returns (resolved params, list of output paths)


def cmd_simulate(args):
    p = resolve(args, ["gamma", "r", "tau_m", "n_bins", "p_plus", "seed", "state", "kind", "dt", "shot"])
    cfg = _readout(p)
    rng = shot_rng(cfg.seed, int(p["shot"]))
    state = _state(p["state"])
    if p["kind"] == "binned":
        tr = generate_binned_trace(cfg, state, rng)
        write_csv(["l", "psi_bar"], enumerate(tr.values), args.out)
    elif p["kind"] == "continuous":
        tr = generate_continuous_trace(cfg, p["dt"], state, rng)
        write_csv(["t", "psi"], zip(tr.times, tr.samples), args.out)
    else:
        raise UsageError(f"kind must be binned or continuous, got {p['kind']!r}")
    return p


def cmd_distributions(args):
    p = resolve(args, ["gamma", "r", "tau_m", "n_bins", "p_plus", "seed", "filter", "points", "psi_min", "psi_max"])
    cfg = _readout(p)
    minus, plus = dists_for(cfg, p["filter"])
    lo, hi = support_hint(cfg.sigma if p["filter"] == "peak" else cfg.with_(n_bins=1.0).sigma)
    lo = lo if p["psi_min"] is None else float(p["psi_min"])
    hi = hi if p["psi_max"] is None else float(p["psi_max"])
    n = int(p["points"])
    if n < 2 or not hi > lo:
        raise UsageError("grid needs at least 2 points and psi_max > psi_min")
    x = np.linspace(lo, hi, n)
    cols = [x, minus.pdf(x), plus.pdf(x), minus.cdf(x), plus.cdf(x)]
    write_csv(["psi", "pdf_minus", "pdf_plus", "cdf_minus", "cdf_plus"], zip(*cols), args.out)
    return p


def _opt_row(res):
    return [res.r, res.filter, res.gamma, res.eps, res.nu, res.tau_m, res.n_bins]


OPT_HEADER = ["r", "filter", "gamma", "eps", "nu", "tau_m", "n_bins"]


def cmd_optimize(args):
    p = resolve(args, ["gamma", "r", "p_plus", "filter"])
    if p["r"] is None:
        raise UsageError("--snr is required")
    if p["filter"] not in FILTERS:
        raise UsageError(f"filter must be one of {FILTERS}")
    res = optimize_filter(p["filter"], float(p["r"]), p["gamma"], p_plus=float(p["p_plus"]))
    if args.out:
        write_csv(OPT_HEADER, [_opt_row(res)], args.out)
    _emit(_json_text(res.to_json()), args.json if args.json else None)
    return p


def cmd_scaling(args):
    p = resolve(args, ["gamma", "filter", "r_grid", "p_plus"])
    grid = p["r_grid"]
    if grid is None:
        grid = [10.0 ** e for e in (2.0, 2.5, 3.0, 3.5, 4.0)]
    elif isinstance(grid, str):
        try:
            grid = [float(v) for v in grid.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --r-grid {grid!r}") from None
    rows = scaling_study(p["filter"], p["gamma"], grid, workers=_threads(args), p_plus=float(p["p_plus"]))
    gamma = ReadoutConfig(r=1.0, gamma=p["gamma"]).gamma
    write_csv(
        OPT_HEADER + ["eps_sqrt_r_over_ln_r", "eps_r_over_ln_r"],
        ([w.r, p["filter"], gamma, w.eps, w.nu, w.tau_m, w.n_bins, w.eps_sqrt_r_over_ln_r, w.eps_r_over_ln_r] for w in rows),
        args.out,
    )
    p["r_grid"] = grid
    return p


def cmd_ml_benchmark(args):
    p = resolve(args, ["gamma", "r", "tau_m", "p_plus", "seed", "records", "dt"])
    if args.tau_m is None and "tau_m" not in _load_config(args.config):
        p["tau_m"] = ML_TAU_M
    p["n_bins"] = 1.0
    cfg = _readout(p)
    dt = default_ml_dt(cfg) if p["dt"] is None else float(p["dt"])
    p["dt"] = dt
    res = ml_error_rate(cfg, int(p["records"]), seed=cfg.seed, dt=dt, workers=_threads(args))
    write_csv(["r", "gamma", "eps", "stderr", "records"], [[cfg.r, cfg.gamma, res.eps, res.stderr, res.records]], args.out)
    return p


def cmd_estimator_trace(args):
    p = resolve(args, ["gamma", "r", "tau_m", "seed", "state", "dt", "shot"])
    if args.tau_m is None and "tau_m" not in _load_config(args.config):
        p["tau_m"] = ML_TAU_M
    p["n_bins"], p["p_plus"] = 1.0, 0.5
    cfg = _readout(p)
    dt = default_ml_dt(cfg) if p["dt"] is None else float(p["dt"])
    p["dt"] = dt
    rng = shot_rng(cfg.seed, int(p["shot"]))
    tr = generate_continuous_trace(cfg, dt, _state(p["state"]), rng, check=False)
    traj = integrate_estimator(tr, cfg)
    write_csv(["tau_m", "p_plus"], zip(traj.times, traj.p_plus), args.out)
    return p


def cmd_fit(args):
    p = resolve(args, ["gamma", "tau_m", "data", "format", "init", "fix_scale", "seed"])
    if p["data"] is None:
        raise UsageError("--data is required")
    hist = ingest_histogram(p["data"], p["format"])
    init = None
    if p["init"] is not None:
        vals = p["init"]
        if isinstance(vals, str):
            try:
                vals = [float(v) for v in vals.split(",")]
            except ValueError:
                raise UsageError(f"bad --init {vals!r}") from None
        if len(vals) != 4:
            raise UsageError("--init needs I,r,tau_b,p_plus")
        init = FitParams(*map(float, vals))
    res = fit(hist, p["gamma"], float(p["tau_m"]), init=init, fix_scale=bool(p["fix_scale"]), seed=int(p["seed"]))
    _emit(_json_text(res.to_json()), args.out)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "distributions": cmd_distributions,
    "optimize": cmd_optimize,
    "scaling": cmd_scaling,
    "ml-benchmark": cmd_ml_benchmark,
    "estimator-trace": cmd_estimator_trace,
    "fit": cmd_fit,
}


def _gamma_arg(s):
    return s if s.strip().lower() in {"inf", "infinite", "infinity"} else float(s)


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="qreadout", description=__doc__.splitlines()[0])
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="command", required=True)

    def common(sp, model=True):
        sp.add_argument("--config", help="JSON file with defaults (flags win)")
        sp.add_argument("--out", help="output file (default stdout)")
        sp.add_argument("--threads", type=int, help="worker cap (fallback: READOUT_THREADS)")
        if model:
            sp.add_argument("--gamma", type=_gamma_arg, help="number or 'inf'")
            sp.add_argument("--snr", dest="r", type=float)
            sp.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="one binned or continuous trace")
    common(s)
    s.add_argument("--tau-m", dest="tau_m", type=float)
    s.add_argument("--n-bins", dest="n_bins", type=float)
    s.add_argument("--state", choices=["plus", "minus"])
    s.add_argument("--kind", choices=["binned", "continuous"])
    s.add_argument("--dt", type=float)
    s.add_argument("--shot", type=int)

    s = sub.add_parser("distributions", help="closed-form densities and CDFs on a grid")
    common(s)
    s.add_argument("--tau-m", dest="tau_m", type=float)
    s.add_argument("--n-bins", dest="n_bins", type=float)
    s.add_argument("--filter", choices=list(FILTERS))
    s.add_argument("--points", type=int)
    s.add_argument("--psi-min", dest="psi_min", type=float)
    s.add_argument("--psi-max", dest="psi_max", type=float)

    s = sub.add_parser("optimize", help="optimize threshold, tau_M and N")
    common(s)
    s.add_argument("--filter", choices=list(FILTERS))
    s.add_argument("--p-plus", dest="p_plus", type=float)
    s.add_argument("--json", help="write the JSON summary here instead of stdout")

    s = sub.add_parser("scaling", help="optimized error rate along an r grid")
    common(s)
    s.add_argument("--filter", choices=list(FILTERS))
    s.add_argument("--r-grid", dest="r_grid", help="comma-separated r values")
    s.add_argument("--p-plus", dest="p_plus", type=float)

    s = sub.add_parser("ml-benchmark", help="Monte-Carlo error rate of the ML filter")
    common(s)
    s.add_argument("--records", type=int)
    s.add_argument("--tau-m", dest="tau_m", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--p-plus", dest="p_plus", type=float)

    s = sub.add_parser("estimator-trace", help="estimator trajectory for one record")
    common(s)
    s.add_argument("--tau-m", dest="tau_m", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--state", choices=["plus", "minus"])
    s.add_argument("--shot", type=int)

    s = sub.add_parser("fit", help="fit the peak mixture to a histogram")
    common(s, model=False)
    s.add_argument("--data")
    s.add_argument("--format", choices=["edges", "raw"])
    s.add_argument("--gamma", type=_gamma_arg)
    s.add_argument("--tau-m", dest="tau_m", type=float)
    s.add_argument("--init", help="I,r,tau_b,p_plus")
    s.add_argument("--fix-scale", dest="fix_scale", action="store_const", const=True)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("run", help="replay a manifest")
    s.add_argument("--manifest", required=True)
    return top


def _write_manifest(argv, command, params, started, out, extra_outputs=()):
    outputs = [str(Path(o)) for o in (out, *extra_outputs) if o not in (None, "-")]
    if not outputs:
        return None
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": params,
        "seed": params.get("seed"),
        "version": __version__,
        "duration_s": time.time() - started,
        "outputs": outputs,
    }
    path = Path(outputs[0] + ".manifest.json")
    path.write_text(_json_text(manifest))
    return path


def _replay(path):
    try:
        manifest = json.loads(Path(path).read_text())
        argv = manifest["argv"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"unreadable manifest {path}: {exc}") from None
    if argv and argv[0] == "run":
        raise UsageError("manifest refers to another replay")
    return main(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.time()
    try:
        if args.command == "run":
            return _replay(args.manifest)
        params = COMMANDS[args.command](args)
        extra = [args.json] if getattr(args, "json", None) else []
        _write_manifest(argv, args.command, params, started, args.out, extra)
    except INPUT_ERRORS as exc:
        print(f"qreadout: error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"qreadout: numerical failure: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
