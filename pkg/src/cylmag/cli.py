"""Command-line interface: ``cylmag {catalog,verify,simulate,solve-beta}``.

Reports are JSON with sorted keys and no wall-clock data unless ``--timing``
is given, so identical configurations produce byte-identical output.

Exit codes: 0 all checks passed, 1 a verification failed, 2 usage or
configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import beta as bt
from . import classical as cl
from . import detequations as de
from . import fields as fl
from . import quantum as qm
from .errors import AxisApproach, AxisPoint, CylMagError, DegenerateFit

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CHECKS = ("determining", "poisson", "conservation", "quantum", "beta", "gauge")
DEFAULT_TOL = {"determining": 1e-9, "poisson": 1e-8, "conservation": 1e-8, "quantum": 1e-8,
               "beta": 1e-10, "gauge": 1e-8}
DEFAULT_INITIAL = (1.2, 0.3, 0.1, 0.2, -0.3, 0.5)
SYSTEMS = ("SYSTEM_I", "SYSTEM_II", "SYSTEM_III", "FREE", "UNIFORM")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything a command needs; built from an optional config file, then flags."""

    system: str = "SYSTEM_I"
    params: dict = field(default_factory=dict)
    base: str = "I"
    beta: str = "closed"
    w3: str = "HARMONIC"
    w3_value: float = 1.0
    checks: tuple = ()
    hbar: tuple = (0.5, 1.0)
    hbar_correction: bool = True
    samples: int = 100
    probes: int = 20
    seed: int = 0
    tol: float | None = None
    out: str | None = None
    format: str = "json"
    scaling: bool = False
    timing: bool = False
    # simulate
    initial: tuple = DEFAULT_INITIAL
    t_end: float = 10.0
    n_out: int = 201
    rtol: float = 1e-10
    atol: float = 1e-12
    summary: str | None = None
    # solve-beta
    mode: str = "closed"
    phi_start: float = 0.0
    span: float = 4 * np.pi
    points: int = 201


def _parse_kv(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _bool(text) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _read_config_file(path: str) -> dict:
    """Flat ``key = value`` file; ``param.NAME = value`` sets a system parameter."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    # parameter names are case sensitive (W0)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    return dict(parser["run"])


_CONVERT = {
    "system": str.upper, "base": str.upper, "beta": str.lower, "w3": str.upper, "w3_value": float,
    "checks": lambda v: tuple(c.strip() for c in str(v).split(",") if c.strip()),
    "hbar": _floats, "hbar_correction": _bool, "samples": int, "probes": int, "seed": int,
    "tol": float, "out": str, "format": str.lower, "scaling": _bool, "timing": _bool,
    "initial": _floats, "t_end": float, "n_out": int, "rtol": float, "atol": float, "summary": str,
    "mode": str.lower, "phi_start": float, "span": float, "points": int,
}


def build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    values: dict = {}
    params: dict = {}
    if getattr(args, "config", None):
        for k, v in _read_config_file(args.config).items():
            if k.startswith("param."):
                params[k[len("param."):]] = v
            elif k == "params":
                params.update(_parse_kv(v.split(",")))
            else:
                values[k] = v
    for k in _CONVERT:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    params.update(_parse_kv(getattr(args, "param", None)))
    for k, v in values.items():
        if k not in _CONVERT:
            raise UsageError(f"unknown config key {k!r}")
        try:
            setattr(cfg, k, _CONVERT[k](v) if isinstance(v, str) or k in ("checks", "hbar", "initial") else v)
        except ValueError as exc:
            raise UsageError(f"bad value for {k}: {v!r}") from exc
    try:
        cfg.params = {k: float(v) for k, v in params.items()}
    except ValueError as exc:
        raise UsageError(f"parameters must be numbers: {exc}") from exc
    if cfg.system not in SYSTEMS:
        raise UsageError(f"unknown system {cfg.system!r}; choose from {', '.join(SYSTEMS)}")
    unknown = set(cfg.checks) - set(CHECKS)
    if unknown:
        raise UsageError(f"unknown checks {sorted(unknown)}; choose from {', '.join(CHECKS)}")
    if cfg.format not in ("json", "csv", "text"):
        raise UsageError(f"unknown format {cfg.format!r}")
    return cfg


# ---------------------------------------------------------------------------
# system construction
# ---------------------------------------------------------------------------

def make_system(cfg: RunConfig, hbar_correction: bool | None = None) -> fl.SystemSpec:
    corr = cfg.hbar_correction if hbar_correction is None else hbar_correction
    if cfg.system == "FREE":
        return fl.free_particle_system()
    if cfg.system == "UNIFORM":
        return fl.uniform_field_system(cfg.params.get("b", 1.0))
    beta = None
    needs_beta = cfg.system == "SYSTEM_II" or (cfg.system == "SYSTEM_III" and cfg.base == "II")
    if needs_beta:
        beta = _make_beta(cfg) if cfg.beta == "numeric" else cfg.beta
    w3 = None
    if cfg.system == "SYSTEM_III":
        w3 = fl.w3_library(cfg.w3, omega=cfg.w3_value, g=cfg.w3_value)
    return fl.catalog_system(cfg.system, cfg.params, corr, beta=beta, w3=w3, base=cfg.base)


def _beta_params(cfg: RunConfig) -> bt.BetaParams:
    key = "SYSTEM_II"
    defaults = {p.name: p.default for p in fl.SCHEMAS[key]}
    get = lambda k: float(cfg.params.get(k, defaults[k]))  # noqa: E731
    return bt.BetaParams(get("f1"), get("beta1"), get("beta2"), get("phi0"))


def _make_beta(cfg: RunConfig) -> bt.BetaSolution:
    p = _beta_params(cfg)
    start = cfg.phi_start
    init = bt.closed_form_initial_data(p, start)
    return bt.solve_beta_ivp(p.f1, init, phi_start=start, span=2 * np.pi)


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------

def _tol(cfg: RunConfig, check: str) -> float:
    return cfg.tol if cfg.tol is not None else DEFAULT_TOL[check]


def _expected_rank(system: fl.SystemSpec) -> int:
    return 2 if system.symbolic.key in ("SYSTEM_I", "SYSTEM_II") else 1


def check_determining(system, cfg, rng) -> dict:
    at = system.domain.sample(cfg.samples, rng)
    hbar = max(cfg.hbar)
    rr = de.system_residuals(system, at, hbar)
    relative = rr.relative_max()
    hist = rr.rank_histogram()
    tol = _tol(cfg, "determining")
    expected = _expected_rank(system)
    ok = all(v < tol for v in relative.values()) and set(hist) == {expected}
    return {"passed": bool(ok), "tolerance": tol, "hbar": hbar, "max_relative": relative,
            "max_abs": rr.max_abs(), "mean_abs": rr.mean_abs(),
            "rank_histogram": {str(k): v for k, v in hist.items()}, "expected_rank": expected}


def check_poisson(system, cfg, rng) -> dict:
    states = cl.PhaseState.sample(system.domain, max(cfg.samples, 1), rng)
    obs = {"H": cl.hamiltonian_observable(system), "X1": cl.integral_observable(system, "X1"),
           "X2": cl.integral_observable(system, "X2")}
    tol = _tol(cfg, "poisson")
    out, ok = {}, True
    for a, b in qm.PAIRS:
        rel = cl.relative_bracket(obs[a], obs[b], states)
        out[f"{{{a},{b}}}"] = {"max_relative": float(np.max(rel)), "mean_relative": float(np.mean(rel))}
        ok &= bool(np.max(rel) < tol)
    return {"passed": bool(ok), "tolerance": tol, "states": len(states), "brackets": out}


def check_conservation(system, cfg, rng) -> dict:
    initial = cl.PhaseState(cfg.initial[:3], cfg.initial[3:])
    tol = _tol(cfg, "conservation")
    rec = cl.integrate_trajectory(system, initial, cfg.t_end, cfg.n_out, cfg.rtol, cfg.atol, raise_on_axis=False)
    finer = cl.integrate_trajectory(system, initial, cfg.t_end, cfg.n_out, cfg.rtol / 2, cfg.atol / 2,
                                    raise_on_axis=False)
    drift, drift_fine = rec.max_drift(), finer.max_drift()
    ok = rec.status == "ok" and all(v < tol for v in drift.values())
    return {"passed": bool(ok), "tolerance": tol, "status": rec.status, "t_end": cfg.t_end,
            "max_drift": drift, "max_drift_half_tolerance": drift_fine, "initial": list(cfg.initial)}


def check_quantum(system, cfg, rng) -> dict:
    probes = qm.random_probes(cfg.probes, rng, system.domain)
    points = system.domain.sample_cart(cfg.samples, rng)
    tol = _tol(cfg, "quantum")
    out, ok = [], True
    for h in cfg.hbar:
        for pair in qm.PAIRS:
            rep = qm.commutator_residual(system, pair, h, probes, points)
            out.append(rep.summary())
            ok &= rep.max_relative < tol
    result = {"passed": bool(ok), "tolerance": tol, "hbar_correction": system.hbar_correction,
              "residuals": out}
    if system.hbar_correction and system.symbolic.W_q != 0:
        stripped = system.with_hbar_correction(False)
        rep = qm.commutator_residual(stripped, ("H", "X1"), max(cfg.hbar), probes, points)
        result["without_correction"] = rep.summary()
    if cfg.scaling:
        try:
            fit = qm.hbar_scaling_fit(system.with_hbar_correction(False), ("H", "X1"), seed=cfg.seed)
            result["hbar_scaling"] = {"exponent": fit.exponent, "hbar": fit.hbar_values.tolist(),
                                      "residuals": fit.residuals.tolist()}
        except DegenerateFit as exc:
            result["hbar_scaling"] = {"degenerate": str(exc)}
    return result


def check_beta(system, cfg, rng) -> dict:
    sol = system.funcs.get("beta")
    if sol is None:
        return {"passed": True, "skipped": "system has no beta profile"}
    tol = _tol(cfg, "beta")
    lo, hi = sol.domain if sol.domain is not None else (0.0, 4 * np.pi)
    phi = np.linspace(lo, hi, cfg.points)
    state = sol.state(phi, 3)
    res_ode3 = float(np.max(np.abs(bt.beta_residual3(state, sol.f1))))
    res_ode1 = float(np.max(np.abs(bt.beta_residual1(state, sol.params))))
    b1, b2 = bt.first_integrals(state, sol.f1)
    d1 = float(np.max(np.abs(b1 - sol.params.beta1)) / max(1.0, abs(sol.params.beta1)))
    d2 = float(np.max(np.abs(b2 - sol.params.beta2)) / max(1.0, abs(sol.params.beta2)))
    numeric = sol.kind is bt.BetaKind.NUMERIC
    limit = 1e-8 if numeric else tol
    ok = max(res_ode3, res_ode1) < (1e-8 if numeric else tol) and max(d1, d2) < 1e-8
    return {"passed": bool(ok), "tolerance": limit, "kind": sol.kind.value, "res_ode3": res_ode3, "res_ode1": res_ode1,
            "beta1_drift": d1, "beta2_drift": d2}


def check_gauge(system, cfg, rng) -> dict:
    pts = system.domain.sample_cart(min(cfg.samples, 50), rng)
    err = fl.curl_mismatch(system.field.B_cart, system.gauge.A_cart, pts)
    tol = _tol(cfg, "gauge")
    return {"passed": bool(err < tol), "tolerance": tol, "curl_mismatch": err}


CHECK_FUNCS = {"determining": check_determining, "poisson": check_poisson, "conservation": check_conservation,
               "quantum": check_quantum, "beta": check_beta, "gauge": check_gauge}


def default_checks(system: fl.SystemSpec) -> tuple:
    checks = ["gauge", "determining", "poisson", "conservation", "quantum"]
    if system.aux is None or system.symbolic.key in ("FREE",):
        checks.remove("determining")
    if "beta" in system.funcs:
        checks.insert(0, "beta")
    return tuple(checks)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def catalog_listing() -> dict:
    systems = []
    for sid in ("SYSTEM_I", "SYSTEM_II", "SYSTEM_III"):
        if sid == "SYSTEM_III":
            schemas = {f"base {b}": fl.SCHEMAS[f"SYSTEM_III/{b}"] for b in ("I", "II")}
        else:
            schemas = {"": fl.SCHEMAS[sid]}
        entry = {"id": sid, "description": fl.DESCRIPTIONS[sid], "rank": 1 if sid == "SYSTEM_III" else 2,
                 "needs_beta": sid != "SYSTEM_I", "hbar_correction_term": sid != "SYSTEM_I"}
        for label, schema in schemas.items():
            key = "parameters" if not label else f"parameters ({label})"
            entry[key] = [{"name": p.name, "default": p.default, "description": p.description} for p in schema]
        if sid == "SYSTEM_III":
            entry["w3"] = [k.value for k in fl.W3Kind]
            entry["needs_beta"] = "base II only"
        systems.append(entry)
    return {"tool_version": __version__, "systems": systems,
            "test_systems": [{"id": "FREE", "parameters": []},
                             {"id": "UNIFORM", "parameters": [{"name": "b", "default": 1.0,
                                                               "description": "axial field strength"}]}]}


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def cmd_catalog(cfg: RunConfig) -> int:
    listing = catalog_listing()
    if cfg.format == "json":
        _emit(_dumps(listing), cfg.out)
        return EXIT_PASS
    lines = []
    for s in listing["systems"]:
        lines.append(f"{s['id']}: {s['description']}")
        for k, v in s.items():
            if k.startswith("parameters"):
                lines.append(f"  {k}:")
                lines.extend(f"    {p['name']} = {p['default']:g}  ({p['description']})" for p in v)
    lines.append("test systems: FREE, UNIFORM (b)")
    _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_PASS


def cmd_verify(cfg: RunConfig) -> int:
    system = make_system(cfg)
    checks = cfg.checks or default_checks(system)
    report = {"tool_version": __version__, "system": system.name, "base": system.base, "params": system.params,
              "hbar_correction": system.hbar_correction, "seed": cfg.seed, "samples": cfg.samples,
              "checks": {}}
    for i, name in enumerate(checks):
        rng = np.random.default_rng([cfg.seed, i])
        start = time.perf_counter()
        result = CHECK_FUNCS[name](system, cfg, rng)
        if cfg.timing:
            result["wall_time_s"] = time.perf_counter() - start
        report["checks"][name] = result
    report["passed"] = all(r["passed"] for r in report["checks"].values())
    if cfg.format == "json":
        _emit(_dumps(report), cfg.out)
    else:
        lines = [f"{system.name}: {'PASS' if report['passed'] else 'FAIL'}"]
        lines.extend(f"  {k}: {'pass' if v['passed'] else 'FAIL'}" for k, v in report["checks"].items())
        _emit("\n".join(lines) + "\n", cfg.out)
    return EXIT_PASS if report["passed"] else EXIT_FAIL


SIM_COLUMNS = ("t", "x", "y", "z", "px", "py", "pz", "H", "X1", "X2", "driftH", "driftX1", "driftX2")


def cmd_simulate(cfg: RunConfig) -> int:
    system = make_system(cfg, hbar_correction=False)
    initial = cl.PhaseState(cfg.initial[:3], cfg.initial[3:])
    summary = {"tool_version": __version__, "system": system.name, "params": system.params,
               "initial": list(cfg.initial), "t_end": cfg.t_end, "rtol": cfg.rtol, "atol": cfg.atol}
    try:
        rec = cl.integrate_trajectory(system, initial, cfg.t_end, cfg.n_out, cfg.rtol, cfg.atol,
                                      raise_on_axis=False)
    except AxisPoint as exc:
        summary.update(status="axis_approach", message=str(exc))
        rec = None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SIM_COLUMNS)
    if rec is not None:
        drifts = [rec.drift(k) for k in ("H", "X1", "X2")]
        for i in range(len(rec.t)):
            row = [rec.t[i], *rec.q[i], *rec.p[i], rec.H[i], rec.X1[i], rec.X2[i], *(d[i] for d in drifts)]
            writer.writerow([repr(float(v)) for v in row])
        summary.update(status=rec.status, message=rec.message, max_drift=rec.max_drift(), samples=len(rec.t))
    _emit(buf.getvalue(), cfg.out)
    summary_path = cfg.summary or (cfg.out + ".json" if cfg.out else None)
    if summary_path:
        Path(summary_path).write_text(_dumps(summary))
    else:
        sys.stderr.write(_dumps(summary))
    return EXIT_PASS


BETA_COLUMNS = ("phi", "beta", "dbeta", "ddbeta", "res_ode3", "res_ode1", "beta1_drift", "beta2_drift")


def cmd_solve_beta(cfg: RunConfig) -> int:
    p = _beta_params(cfg)
    closed = None
    if cfg.mode == "closed":
        sol = bt.beta_closed_form(p)
        phi = np.linspace(cfg.phi_start, cfg.phi_start + cfg.span, cfg.points)
    elif cfg.mode == "numeric":
        if "b0" in cfg.params:
            init = (cfg.params["b0"], cfg.params.get("db0", 0.0), cfg.params.get("ddb0", 0.0))
        else:
            closed = bt.beta_closed_form(p)
            init = bt.closed_form_initial_data(p, cfg.phi_start)
        try:
            sol = bt.solve_beta_ivp(p.f1, init, phi_start=cfg.phi_start, span=cfg.span)
        except bt.BetaVanishing as exc:
            sol = exc.solution
            sys.stderr.write(f"warning: {exc}\n")
        phi = np.linspace(sol.domain[0], sol.domain[1], cfg.points)
    else:
        raise UsageError(f"unknown beta mode {cfg.mode!r}")
    state = sol.state(phi, 3)
    b1, b2 = bt.first_integrals(state, p.f1)
    columns = {
        "phi": phi, "beta": state[0], "dbeta": state[1], "ddbeta": state[2],
        "res_ode3": bt.beta_residual3(state, p.f1), "res_ode1": bt.beta_residual1(state, sol.params),
        "beta1_drift": b1 - sol.params.beta1, "beta2_drift": b2 - sol.params.beta2,
    }
    names = list(BETA_COLUMNS)
    if closed is not None:
        columns["closed_form_diff"] = state[0] - closed(phi)
        names.append("closed_form_diff")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for i in range(len(phi)):
        writer.writerow([repr(float(columns[n][i])) for n in names])
    _emit(buf.getvalue(), cfg.out)
    return EXIT_PASS


COMMANDS = {"catalog": cmd_catalog, "verify": cmd_verify, "simulate": cmd_simulate, "solve-beta": cmd_solve_beta}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cylmag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cylmag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def shared(p):
        p.add_argument("--config", help="flat key = value config file (flags override it)")
        p.add_argument("--system", help=f"one of {', '.join(SYSTEMS)}")
        p.add_argument("--param", action="append", metavar="K=V", help="system parameter (repeatable)")
        p.add_argument("--base", help="SYSTEM_III planar part: I or II")
        p.add_argument("--beta", choices=("closed", "numeric"), help="beta profile for SYSTEM_II")
        p.add_argument("--w3", choices=[k.value for k in fl.W3Kind], help="SYSTEM_III longitudinal potential")
        p.add_argument("--w3-value", dest="w3_value", type=float, help="omega (HARMONIC) or g (LINEAR)")
        p.add_argument("--hbar", help="comma-separated hbar values")
        p.add_argument("--no-hbar-correction", dest="hbar_correction", action="store_const", const=False)
        p.add_argument("--samples", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--tol", type=float, help="override every check tolerance")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("json", "csv", "text"))

    p = sub.add_parser("catalog", help="list catalog systems and parameter schemas")
    shared(p)
    p = sub.add_parser("verify", help="run verification checks")
    shared(p)
    p.add_argument("--check", dest="checks", action="append", choices=CHECKS, help="check to run (repeatable)")
    p.add_argument("--probes", type=int)
    p.add_argument("--scaling", action="store_const", const=True, help="fit the hbar power law")
    p.add_argument("--timing", action="store_const", const=True, help="add wall times (breaks byte stability)")
    p = sub.add_parser("simulate", help="integrate a classical trajectory to CSV")
    shared(p)
    p.add_argument("--initial", help="x,y,z,px,py,pz")
    p.add_argument("--t-end", dest="t_end", type=float)
    p.add_argument("--n-out", dest="n_out", type=int)
    p.add_argument("--rtol", type=float)
    p.add_argument("--atol", type=float)
    p.add_argument("--summary", help="path of the drift summary JSON (default OUT.json)")
    p = sub.add_parser("solve-beta", help="tabulate a beta profile to CSV")
    shared(p)
    p.add_argument("--mode", choices=("closed", "numeric"))
    p.add_argument("--phi-start", dest="phi_start", type=float)
    p.add_argument("--span", type=float)
    p.add_argument("--points", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "checks", None):
        args.checks = ",".join(args.checks)
    try:
        cfg = build_config(args)
        if args.command == "solve-beta" and cfg.format == "json":
            cfg.format = "csv"
        return COMMANDS[args.command](cfg)
    except (UsageError, CylMagError, OSError) as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_USAGE if not isinstance(exc, AxisApproach) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
