"""Command-line driver: one subcommand per analysis.

Every subcommand reads a TOML scenario file, computes everything in memory,
then writes its data files and ``manifest.json`` into the output directory.
Files are written to a temporary name and renamed, so a failed run leaves no
half-written outputs.

Exit codes: 0 success, 2 bad configuration, 3 blow-up, 4 I/O error,
5 regime precondition not met (e.g. the scenario is not bistable).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .asymptotics import blow_up_certificate, convexity_report
from .basins import basin_map, trace_separatrix
from .equilibria import equilibrium_to_dict, find_equilibria, phi_curve
from .errors import ConfigError, EBMError, NonConvergent, RangeInvalid
from .integrator import IntegrationOptions, Outcome, integrate
from .model import CoalbedoRamp, ModelParams
from .sensitivity import greenhouse_jump, hysteresis_loop, sweep

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO, EXIT_REGIME = 0, 2, 3, 4, 5

# top-level scalar keys and their ModelParams field names
PARAM_KEYS = {"gamma_a": "gamma_a", "gamma_s": "gamma_s", "lambda": "lam",
              "epsilon_a": "epsilon_a", "sigma_b": "sigma_b", "q": "q"}
RAMP_KEYS = {"beta_minus", "beta_plus", "t_minus", "t_plus"}
INTEGRATOR_KEYS = {f.name for f in dataclasses.fields(IntegrationOptions)}

# per-subcommand tables with their defaults
SECTION_DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"initial": [250.0, 280.0]},
    "equilibria": {"grid_points": 4096, "curve_points": 512},
    "sweep": {"param": "epsilon_a", "lo": 0.3, "hi": 1.9, "n_steps": 100},
    "jump": {"eps_star": 0.62, "eps_plus": 0.70},
    "hysteresis": {"eps_lo": 0.2, "eps_hi": 1.0, "n_points": 41},
    "basins": {"n": 256, "m": 256, "separatrix_points": 400, "tol": 1e-6,
               "separatrix": True},
    "blowup": {"initial": [250.0, 300.0]},
    "convexity": {"tol": 1e-4, "n_rho": 2001},
}


@dataclass(frozen=True)
class ScenarioConfig:
    params: ModelParams
    options: IntegrationOptions
    sections: dict[str, dict[str, Any]]
    resolved: dict[str, Any] = field(repr=False)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.resolved, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _check_keys(table: dict, allowed, where: str):
    for k in table:
        if k not in allowed:
            raise ConfigError(f"unknown key {where}{k!r}")


def _ramp(table: Any, where: str) -> CoalbedoRamp:
    if not isinstance(table, dict):
        raise ConfigError(f"[{where}] must be a table")
    _check_keys(table, RAMP_KEYS, f"[{where}] ")
    try:
        return CoalbedoRamp(**{k: float(v) for k, v in table.items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}]: {e}") from None


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a decoded TOML document and fill in defaults."""
    allowed = set(PARAM_KEYS) | {"coalbedo_s", "coalbedo_a", "integrator"} | set(SECTION_DEFAULTS)
    _check_keys(data, allowed, "")
    kw: dict[str, Any] = {}
    for key, name in PARAM_KEYS.items():
        if key in data:
            v = data[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"key {key!r} must be a number, got {v!r}")
            kw[name] = float(v)
    if "coalbedo_s" in data:
        kw["coalbedo_s"] = _ramp(data["coalbedo_s"], "coalbedo_s")
    if "coalbedo_a" in data:
        kw["coalbedo_a"] = _ramp(data["coalbedo_a"], "coalbedo_a")
    try:
        params = ModelParams(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None

    integ = data.get("integrator", {})
    if not isinstance(integ, dict):
        raise ConfigError("[integrator] must be a table")
    _check_keys(integ, INTEGRATOR_KEYS, "[integrator] ")
    try:
        options = IntegrationOptions(**integ)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[integrator]: {e}") from None

    sections = {}
    for name, defaults in SECTION_DEFAULTS.items():
        table = data.get(name, {})
        if not isinstance(table, dict):
            raise ConfigError(f"[{name}] must be a table")
        _check_keys(table, defaults, f"[{name}] ")
        merged = dict(defaults)
        for k, v in table.items():
            if type(v) is not type(defaults[k]) and not (
                    isinstance(defaults[k], float) and isinstance(v, int)
                    and not isinstance(v, bool)):
                raise ConfigError(f"[{name}] {k!r} must be {type(defaults[k]).__name__}, "
                                  f"got {v!r}")
            merged[k] = v
        for k in ("initial",):
            if k in merged:
                s = merged[k]
                if (len(s) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                           for x in s)):
                    raise ConfigError(f"[{name}] {k!r} must be two numbers [T_a, T_s]")
                merged[k] = [float(x) for x in s]
        sections[name] = merged

    resolved = {
        "params": {**{k: getattr(params, n) for k, n in PARAM_KEYS.items()},
                   "coalbedo_s": dataclasses.asdict(params.coalbedo_s),
                   "coalbedo_a": (dataclasses.asdict(params.coalbedo_a)
                                  if params.coalbedo_a else None)},
        "integrator": dataclasses.asdict(options),
        "sections": sections,
    }
    return ScenarioConfig(params, options, sections, resolved)


def load_config(path: Optional[str]) -> ScenarioConfig:
    if path is None:
        return parse_config({})
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(data)


# --- output helpers -------------------------------------------------------

def _num(x) -> str:
    return "%.17g" % x


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _clean(obj):
    """JSON-safe copy: non-finite floats become null, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(out_dir: str, files: dict[str, str]) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=out_dir)
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            staged.append((tmp, os.path.join(out_dir, name)))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return sorted(files)


@dataclass
class RunResult:
    files: dict[str, str]
    exit_code: int = EXIT_OK
    summary: str = ""


# --- subcommands ----------------------------------------------------------

def _trajectory_csv(traj) -> str:
    return csv_text(["t_seconds", "T_a", "T_s"], zip(traj.t, traj.t_a, traj.t_s))


def cmd_simulate(cfg: ScenarioConfig, args) -> RunResult:
    s0 = cfg.sections["simulate"]["initial"]
    traj = integrate(cfg.params, s0, cfg.options)
    verdict = traj.termination.to_dict()
    verdict.update({"accepted_steps": traj.n_accepted, "rejected_steps": traj.n_rejected})
    code = EXIT_OK
    if traj.termination.outcome is Outcome.BLOWUP:
        code = EXIT_BLOWUP
        if cfg.params.epsilon_a > 2:
            try:
                verdict["certificate"] = blow_up_certificate(cfg.params, s0, cfg.options).to_dict()
            except EBMError as e:
                verdict["certificate_error"] = f"{type(e).__name__}: {e}"
    elif traj.termination.outcome is Outcome.STEP_LIMIT:
        code = EXIT_REGIME
    files = {"trajectory.csv": _trajectory_csv(traj), "verdict.json": json_text(verdict)}
    return RunResult(files, code, traj.termination.outcome.value)


def cmd_equilibria(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["equilibria"]
    p = cfg.params
    eqs = find_equilibria(p, grid_points=sec["grid_points"])
    ts, ph, qb = phi_curve(p, n=sec["curve_points"])
    files = {
        "equilibria.json": json_text({"count": len(eqs),
                                      "equilibria": [equilibrium_to_dict(e) for e in eqs]}),
        "phi_curve.csv": csv_text(["T_s", "Phi", "q_beta_s"], zip(ts, ph, qb)),
    }
    return RunResult(files, EXIT_OK, f"{len(eqs)} equilibria")


def cmd_sweep(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["sweep"]
    res = sweep(cfg.params, sec["param"], sec["lo"], sec["hi"], sec["n_steps"])
    rows = []
    for r in res.records:
        e, d = r.equilibrium, r.derivative
        stable = "" if e.stability is None else str(e.stable).lower()
        rows.append([r.value, r.branch, e.t_a, e.t_s, e.eq_class.value, stable,
                     d.d_ta if d else "", d.d_ts if d else "", r.flags])
    header = ["param", "branch", "T_a", "T_s", "class", "stable",
              "dTa_dparam", "dTs_dparam", "flags"]
    events = {"param": res.param, "events": [ev.to_dict() for ev in res.events]}
    files = {"sweep.csv": csv_text(header, rows), "sweep_events.json": json_text(events)}
    return RunResult(files, EXIT_OK, f"{len(res.records)} records, {len(res.events)} events")


def cmd_jump(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["jump"]
    res = greenhouse_jump(cfg.params, sec["eps_star"], sec["eps_plus"], cfg.options)
    data = {
        "old_warm": equilibrium_to_dict(res.old),
        "new_warm": equilibrium_to_dict(res.new),
        "initial_rates_field": [res.rate_a_field, res.rate_s_field],
        "initial_rates_formula": [res.rate_a_formula, res.rate_s_formula],
        "rate_identity_error": res.rate_identity_error,
        "verdict": res.trajectory.termination.to_dict(),
    }
    files = {"jump_trajectory.csv": _trajectory_csv(res.trajectory),
             "jump.json": json_text(data)}
    return RunResult(files, EXIT_OK, f"T_s {res.old.t_s:.3f} -> {res.new.t_s:.3f} K")


def cmd_hysteresis(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["hysteresis"]
    up = np.linspace(sec["eps_lo"], sec["eps_hi"], sec["n_points"])
    path = np.concatenate([up, up[-2::-1]])
    res = hysteresis_loop(cfg.params, path, cfg.options)
    rows = [[r.epsilon_a, r.state.t_a, r.state.t_s, r.branch, r.outcome.value]
            for r in res.records]
    files = {
        "hysteresis.csv": csv_text(["epsilon_a", "T_a", "T_s", "branch", "outcome"], rows),
        "hysteresis.json": json_text({"jumps": [j.to_dict() for j in res.jumps],
                                      "width": res.width}),
    }
    return RunResult(files, EXIT_OK, f"{len(res.jumps)} jumps")


def cmd_basins(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["basins"]
    p = cfg.params
    bm = basin_map(p, sec["n"], sec["m"], opts=cfg.options, threads=args.threads)
    buf = io.StringIO()
    np.savetxt(buf, bm.ids, fmt="%d", delimiter=",")
    legend = {
        "attractors": bm.legend(),
        "T_a_centres": bm.t_a.tolist(),
        "T_s_centres": bm.t_s.tolist(),
        "rows": "T_s",
        "columns": "T_a",
        "unconverged_id": -1,
        "unconverged_cells": bm.n_unconverged,
        "boundary_cells": int(bm.boundary.sum()),
        "boundary_components": bm.boundary_components(),
    }
    files = {"basin_map.csv": buf.getvalue()}
    if sec["separatrix"] and len(bm.attractors) == 2:
        try:
            sep = trace_separatrix(p, sec["separatrix_points"], sec["tol"])
            files["separatrix.csv"] = csv_text(["T_a", "T_s"], sep.points.tolist())
            legend["separatrix"] = {"anchors": [list(a) for a in sep.anchors],
                                    "saddle": list(sep.saddle),
                                    "closest_approach": sep.closest_approach}
        except NonConvergent as e:
            legend["separatrix_error"] = str(e)
    files["basin_legend.json"] = json_text(legend)
    return RunResult(files, EXIT_OK, f"attractors {bm.attractors}")


def cmd_blowup(cfg: ScenarioConfig, args) -> RunResult:
    s0 = cfg.sections["blowup"]["initial"]
    cert = blow_up_certificate(cfg.params, s0, cfg.options)
    return RunResult({"certificate.json": json_text(cert.to_dict())}, EXIT_OK,
                     "valid" if cert.valid else "invalid")


def cmd_convexity(cfg: ScenarioConfig, args) -> RunResult:
    sec = cfg.sections["convexity"]
    rep = convexity_report(cfg.params, sec["tol"], sec["n_rho"])
    files = {
        "convexity.json": json_text(rep.to_dict()),
        "n_curves.csv": csv_text(["rho", "N", "N_star"], zip(rep.rho, rep.N, rep.N_star)),
    }
    lo, hi = rep.eps_a0_bracket
    return RunResult(files, EXIT_OK, f"eps_a0 in ({lo:.6f}, {hi:.6f})")


COMMANDS: dict[str, tuple[Callable, str]] = {
    "simulate": (cmd_simulate, "integrate one trajectory"),
    "equilibria": (cmd_equilibria, "enumerate and classify equilibria"),
    "sweep": (cmd_sweep, "follow equilibrium branches in lambda or epsilon_a"),
    "jump": (cmd_jump, "raise epsilon_a from the warm state and follow the response"),
    "hysteresis": (cmd_hysteresis, "quasi-static epsilon_a loop"),
    "basins": (cmd_basins, "basin map and separatrix"),
    "blowup": (cmd_blowup, "finite-time blow-up certificate (epsilon_a > 2)"),
    "convexity": (cmd_convexity, "N, N* curves and the epsilon_a0 bracket"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twolayer-ebm",
                                 description="Two-layer energy balance model toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML scenario file (defaults if omitted)")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="reserved; recorded in the manifest")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for batch work")
    return ap


def _manifest(cfg: Optional[ScenarioConfig], args, files, wall, code, summary) -> str:
    return json_text({
        "config_sha256": cfg.digest if cfg else None,
        "version": __version__,
        "subcommand": args.command,
        "seed": args.seed,
        "wall_time_seconds": wall,
        "exit_code": code,
        "summary": summary,
        "files": sorted(files) + ["manifest.json"],
    })


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    cfg = None
    try:
        cfg = load_config(args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return EXIT_IO

    fn = COMMANDS[args.command][0]
    try:
        res = fn(cfg, args)
    except EBMError as e:
        msg = f"{type(e).__name__}: {e}"
        print(msg, file=sys.stderr)
        # a bad range in a section table is a configuration problem
        res = RunResult({}, EXIT_CONFIG if isinstance(e, RangeInvalid) else EXIT_REGIME, msg)

    files = dict(res.files)
    files["manifest.json"] = _manifest(cfg, args, res.files, time.perf_counter() - t0,
                                       res.exit_code, res.summary)
    try:
        write_atomic(args.out, files)
    except OSError as e:
        print(f"cannot write outputs: {e}", file=sys.stderr)
        return EXIT_IO
    print(f"{args.command}: {res.summary}")
    return res.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
