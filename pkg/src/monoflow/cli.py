"""Scenario runner: ``monoflow run <config.json>``, ``catalog [filter]``, ``check <manifest>``.

Exit codes: 0 all declared checks pass, 1 some check fails, 2 the config
(or manifest) is malformed, 3 a numerical guard tripped during the run.
Floating-point CSV output uses 17 significant digits so digests are stable.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import __version__
from .fields import CATALOG, catalog_entries, make_field

SCHEMA_VERSION = 1
FIELD_NAMES = [name for name, entry in CATALOG.items() if entry["factory"] is not None]
SCENARIOS = ["flow", "transport", "continuity", "sde", "nonlinear", "burgers-selection", "diagnostics"]

_num_list = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_pos = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "scenario", "output"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario": {"enum": SCENARIOS},
        "output": {"type": "string", "minLength": 1},
        "seed": {"type": "integer", "minimum": 0},
        "field": {
            "type": "object", "required": ["name"], "additionalProperties": False,
            "properties": {"name": {"enum": FIELD_NAMES}, "params": {"type": "object"}},
        },
        "nonlinearity": {"enum": ["burgers"]},
        "grid": {
            "type": "object", "required": ["lower", "upper", "h"], "additionalProperties": False,
            "properties": {"lower": _num_list, "upper": _num_list, "h": _pos},
        },
        "time": {
            "type": "object", "required": ["t_end"], "additionalProperties": False,
            "properties": {"s": {"type": "number"}, "t_end": {"type": "number"},
                           "n": {"type": "integer", "minimum": 2}},
        },
        "terminal": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"enum": ["step_down", "step_up", "linear"]},
                           "at": {"type": "number"}},
        },
        "eps": {"type": "array", "items": _pos, "minItems": 1},
        "speeds": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                   "minItems": 1},
        "dt": _pos,
        "n_particles": {"type": "integer", "minimum": 1},
        "n_paths": {"type": "integer", "minimum": 1},
        "noise": _pos,
        "masks": {"type": "integer", "minimum": 1},
        "samples": {"type": "integer", "minimum": 1},
    },
    "allOf": [
        {"if": {"properties": {"scenario": {"enum": ["flow", "transport", "continuity", "sde"]}}},
         "then": {"required": ["field", "grid", "time"]}},
        {"if": {"properties": {"scenario": {"const": "nonlinear"}}},
         "then": {"required": ["nonlinearity", "grid", "time"]}},
        {"if": {"properties": {"scenario": {"const": "burgers-selection"}}},
         "then": {"required": ["speeds", "eps"]}},
    ],
}


class ConfigError(ValueError):
    """Config is syntactically or semantically invalid (exit 2)."""


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path: str | Path) -> tuple[dict, bytes]:
    """Read, parse and validate a config; raises :class:`ConfigError`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"schema error at {list(exc.absolute_path)}: {exc.message}") from exc
    if "grid" in cfg:
        g = cfg["grid"]
        if len(g["lower"]) != len(g["upper"]) or any(a >= b for a, b in zip(g["lower"], g["upper"])):
            raise ConfigError("grid bounds must have equal length and lower < upper")
    if "time" in cfg and cfg["time"]["t_end"] <= cfg["time"].get("s", 0.0):
        raise ConfigError("time.t_end must exceed time.s")
    if "field" in cfg:
        try:
            b = make_field(cfg["field"]["name"], cfg["field"].get("params"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad field parameters: {exc}") from exc
        if "grid" in cfg and b.dim != len(cfg["grid"]["lower"]):
            raise ConfigError(f"field {cfg['field']['name']!r} has dimension {b.dim}, grid has {len(cfg['grid']['lower'])}")
    return cfg, raw


def _grid(cfg):
    from .monotone_core import Grid
    g = cfg["grid"]
    return Grid.from_bounds(g["lower"], g["upper"], g["h"])


def _times(cfg):
    tc = cfg["time"]
    return np.linspace(tc.get("s", 0.0), tc["t_end"], tc.get("n", 11))


def _check(name: str, value: float, bound: float, passed: bool | None = None) -> dict:
    ok = bool(value <= bound) if passed is None else bool(passed)
    return {"name": name, "value": float(value), "bound": float(bound), "passed": ok}


def _slice_rows(grid, times, columns: dict[str, np.ndarray]):
    pts = grid.points()
    for k, t in enumerate(times):
        for i, p in enumerate(pts):
            yield [t, *p, *(col[k].reshape(-1)[i] for col in columns.values())]


def _axes(grid) -> list[str]:
    return [f"x{j}" for j in range(grid.dim)] if grid.dim > 1 else ["x"]


def run_flow(cfg: dict, out: Path) -> list[dict]:
    from .flow_engine import maximal_minimal_flow, measure_bound, semigroup_residual
    b = make_field(cfg["field"]["name"], cfg["field"].get("params"))
    grid, times = _grid(cfg), _times(cfg)
    h = max(grid.spacing)
    mm = maximal_minimal_flow(b, float(times[0]), float(times[-1]), grid, times=times, dt=cfg.get("dt"))
    cols = {}
    for j in range(grid.dim):
        cols[f"max{j}"] = mm.maximal.positions[..., j]
        cols[f"min{j}"] = mm.minimal.positions[..., j]
    write_csv(out / "flow_slices.csv", ["t", *_axes(grid), *cols], _slice_rows(grid, times, cols))

    rng = np.random.default_rng(cfg.get("seed", 0))
    lo, hi = np.asarray(grid.origin), np.asarray(grid.upper)
    s, t = float(times[0]), float(times[-1])
    rows, worst = [], -np.inf
    for i in range(cfg.get("masks", 10)):
        a, c = np.sort(rng.uniform(lo, hi, size=(2, grid.dim)), axis=0)
        rep = measure_bound(mm.maximal, (a, c), s, t)
        rows.append([i, rep.measure, rep.preimage, rep.bound, rep.tolerance, int(rep.ok)])
        worst = max(worst, rep.preimage - rep.bound - rep.tolerance)
    write_csv(out / "measure_bound.csv", ["mask", "measure", "preimage", "bound", "tolerance", "ok"], rows)
    checks = [_check("measure_bound_excess", worst, 0.0)]
    if b.autonomous and len(times) >= 3:
        mid = float(times[len(times) // 2])
        res = max(semigroup_residual(fl, s, mid, t) for fl in mm)
        checks.append(_check("semigroup_residual", res, 5 * h))
    checks.append(_check("maximal_ge_minimal", -float(np.min(mm.gap)), 1e-9))
    return checks


def _terminal(cfg) -> tuple[Callable, str]:
    spec = cfg.get("terminal", {"kind": "step_down", "at": 0.0})
    at = spec.get("at", 0.0)
    kind = spec["kind"]
    if kind == "step_down":
        return (lambda x: (np.asarray(x)[..., 0] <= at).astype(float)), "decreasing"
    if kind == "step_up":
        return (lambda x: (np.asarray(x)[..., 0] >= at).astype(float)), "increasing"
    return (lambda x: np.sum(np.asarray(x), axis=-1) - at), "increasing"


def run_transport(cfg: dict, out: Path) -> list[dict]:
    from .transport import TransportProblem, solve_transport
    b = make_field(cfg["field"]["name"], cfg["field"].get("params"))
    grid, times = _grid(cfg), _times(cfg)
    u_T, mono = _terminal(cfg)
    prob = TransportProblem(b, u_T, T=float(times[-1]))
    sol = solve_transport(prob, grid, times, dt=cfg.get("dt"))
    write_csv(out / "transport_slices.csv", ["t", *_axes(grid), "u"], _slice_rows(grid, times, {"u": sol.values}))
    ok = sol.slices_decreasing() if mono == "decreasing" else sol.slices_increasing()
    terminal_err = float(np.max(np.abs(sol.values[-1] - u_T(grid.points()).reshape(grid.shape))))
    return [_check(f"slices_{mono}", 0.0 if ok else 1.0, 0.0, ok), _check("terminal_defect", terminal_err, 1e-12)]


def run_continuity(cfg: dict, out: Path) -> list[dict]:
    from .continuity import duality_check, pushforward_solve
    b = make_field(cfg["field"]["name"], cfg["field"].get("params"))
    grid, times = _grid(cfg), _times(cfg)
    n = cfg.get("n_particles", 10_000)
    lo, hi = np.asarray(grid.origin), np.asarray(grid.upper)
    box_lo, box_hi = lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)
    vol = float(np.prod(box_hi - box_lo))

    def f0(x):
        x = np.asarray(x)
        return np.all((x >= box_lo) & (x <= box_hi), axis=-1) / vol

    dens = pushforward_solve(b, f0, grid, times, n_particles=n, seed=cfg.get("seed", 0), sample_box=(lo, hi))
    bins = dens.bins
    write_csv(out / "density_slices.csv", ["t", *_axes(bins), "density", "smoothed"],
              _slice_rows(bins, times, {"density": dens.histograms, "smoothed": dens.smoothed}))
    centre = 0.5 * (lo + hi)

    def test(x):
        return (np.asarray(x)[..., 0] <= centre[0]).astype(float)

    rep = duality_check(dens, test, float(times[-1]), grid)
    tol = 3.0 * (len(dens.weights) ** -0.5 + max(grid.spacing))
    write_csv(out / "duality.csv", ["t", "pushforward", "transport", "residual"],
              [[times[-1], rep["pushforward"], rep["transport"], rep["residual"]]])
    mass = abs(dens.mass(float(times[-1])) - 1.0)
    return [_check("duality_residual", rep["residual"], tol), _check("mass_defect", mass, 0.05)]


def run_sde(cfg: dict, out: Path) -> list[dict]:
    from .stochastic import NoiseSpec, coupled_order_check, em_flow
    b = make_field(cfg["field"]["name"], cfg["field"].get("params"))
    grid, times = _grid(cfg), _times(cfg)
    h = max(grid.spacing)
    noise = NoiseSpec.additive(b.dim, cfg.get("noise", 0.5))
    seed, n_paths = cfg.get("seed", 0), cfg.get("n_paths", 1000)
    dt = cfg.get("dt", h / 4)
    s, t_end = float(times[0]), float(times[-1])
    lo = em_flow(b, noise, "lower", 2 * h, s, t_end, dt, n_paths, seed, grid=grid, times=times)
    hi = em_flow(b, noise, "upper", 2 * h, s, t_end, dt, n_paths, seed, grid=grid, times=times)
    frac = coupled_order_check(lo, hi)
    rows = []
    for k, t in enumerate(lo.times):
        viol = float(np.mean(np.any(lo.positions[k] > hi.positions[k] + 1e-9, axis=-1)))
        rows.append([t, float(lo.positions[k].mean()), float(hi.positions[k].mean()), viol])
    write_csv(out / "sde_paths.csv", ["t", "mean_lower", "mean_upper", "violation_fraction"], rows)
    return [_check("order_violations", frac, 0.0)]


def run_nonlinear(cfg: dict, out: Path) -> list[dict]:
    from .nonlinear import burgers, solve_extremal
    nl = burgers()
    grid, times = _grid(cfg), _times(cfg)
    T = float(times[-1])
    h = max(grid.spacing)

    def u_T(x):
        return (np.asarray(x)[..., 0] <= 0.0).astype(float)

    top = solve_extremal(nl, u_T, grid, times, "from_top")
    bot = solve_extremal(nl, u_T, grid, times, "from_bottom")
    up, um = top.solution.components()[..., 0], bot.solution.components()[..., 0]
    write_csv(out / "extremal_slices.csv", ["t", *_axes(grid), "u_plus", "u_minus"],
              _slice_rows(grid, times, {"u_plus": up, "u_minus": um}))
    x = grid.points()[:, 0]
    sandwich = 0
    shock_err = 0.0
    for k, t in enumerate(times):
        uc = (x <= 0.5 * (T - t)).astype(float)
        sandwich += int(np.sum(um[k].reshape(-1) > uc + 1e-12) + np.sum(uc > up[k].reshape(-1) + 1e-12))
        for vals, target in ((up[k], T - t), (um[k], 0.0)):
            edge = x[vals.reshape(-1) >= 0.5].max() if np.any(vals >= 0.5) else -np.inf
            shock_err = max(shock_err, abs(edge - target))
    return [_check("iterations_from_top", top.iterations, 3, top.converged and top.iterations <= 3),
            _check("iterations_from_bottom", bot.iterations, 3, bot.converged and bot.iterations <= 3),
            _check("shock_position_error", shock_err, h * (1 + 1e-9)),
            _check("sandwich_violations", sandwich, 0)]


def run_burgers(cfg: dict, out: Path) -> list[dict]:
    from .burgers import ShockPath, theta_for_path, u_c_exact, viscous_solve
    eps_list = sorted(cfg["eps"], reverse=True)
    rows, table, checks = [], [], []
    for speed in cfg["speeds"]:
        prof = theta_for_path(ShockPath.constant_speed(speed))
        errors = []
        measured = np.nan
        for eps in eps_list:
            h = eps / 4.0
            x = np.arange(-1.0, 1.5 + h / 2, h)
            run = viscous_solve(prof, eps, x)
            target = prof.path(run.times)
            for k, t in enumerate(run.times):
                gap = h * float(np.sum(np.abs(run.values[k] - u_c_exact(prof.path, t, x))))
                rows.append([speed, t, eps, run.shock[k], target[k], gap])
            err = float(np.max(np.abs(run.shock - target)))
            measured = run.measured_speed()
            errors.append(err)
            table.append([speed, eps, h, measured, err])
        checks.append(_check(f"speed_{speed:g}_measured", abs(measured - speed), 0.05))
        mono = all(b <= a * (1 + 1e-12) for a, b in zip(errors, errors[1:]))
        checks.append(_check(f"speed_{speed:g}_error_nonincreasing", 0.0 if mono else 1.0, 0.0, mono))
        checks.append(_check(f"speed_{speed:g}_theta_residual", prof.residual, 1e-10))
    write_csv(out / "shock_trajectory.csv",
              ["speed", "t", "eps", "shock_x_measured", "shock_x_target", "l1_gap"], rows)
    write_csv(out / "convergence.csv", ["speed", "eps", "h", "measured_speed", "linf_shock_error"], table)
    return checks


def run_diagnostics(cfg: dict, out: Path) -> list[dict]:
    from .monotone_core import Grid, GridFunction, abv_norm
    from .regularize import MollifierKernel, one_sided_mollify
    rng = np.random.default_rng(cfg.get("seed", 0))
    worst_shift, worst_abv = 0.0, 0.0
    rows = []
    for i in range(cfg.get("samples", 20)):
        n, h = 40, 0.05
        grid = Grid((0.0,), (h,), (n,))
        vals = np.cumsum(rng.uniform(0.0, 1.0, n))
        phi = GridFunction(grid, vals)
        kernel = MollifierKernel(2 * h, "lower")
        lo = one_sided_mollify(phi, kernel).values
        up = one_sided_mollify(phi, MollifierKernel(2 * h, "upper")).values
        # lower[i] and upper[i - 2 eps / h] are the same weighted sum
        k = kernel.steps(h)
        shift = float(np.max(np.abs(up[:-k] - lo[k:])) / np.max(np.abs(vals)))
        abv = abs(abv_norm(phi, (grid.origin, grid.upper)) - (vals[-1] - vals[0]))
        worst_shift, worst_abv = max(worst_shift, shift), max(worst_abv, abv)
        rows.append([i, shift, abv])
    write_csv(out / "diagnostics.csv", ["sample", "shift_defect", "abv_defect"], rows)
    return [_check("mollifier_shift", worst_shift, 1e-14), _check("abv_increasing", worst_abv, 1e-12)]


RUNNERS = {"flow": run_flow, "transport": run_transport, "continuity": run_continuity, "sde": run_sde,
           "nonlinear": run_nonlinear, "burgers-selection": run_burgers, "diagnostics": run_diagnostics}


def run(config_path: str | Path, stream=sys.stdout) -> int:
    """Execute a scenario; returns the process exit status."""
    try:
        cfg, raw = load_config(config_path)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg["output"])
    if not out.is_absolute():
        out = Path(config_path).resolve().parent / out
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, checks, error = 0, [], None
    try:
        checks = RUNNERS[cfg["scenario"]](cfg, out)
        status = 0 if all(c["passed"] for c in checks) else 1
    except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        status, error = 3, f"{type(exc).__name__}: {exc}"
    files = {p.name: _sha256(p) for p in sorted(out.glob("*.csv"))}
    manifest = {
        "config": str(Path(config_path).resolve()),
        "config_sha256": hashlib.sha256(raw).hexdigest(),
        "version": __version__,
        "scenario": cfg["scenario"],
        "workers": os.environ.get("MONOFLOW_WORKERS", "1"),
        "wall_time_s": time.perf_counter() - start,
        "exit_status": status,
        "error": error,
        "checks": checks,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} value={c['value']:.6g} bound={c['bound']:.6g}",
              file=stream)
    if error:
        print(f"guard: {error}", file=sys.stderr)
    return status


def catalog(filter_text: str | None = None, stream=sys.stdout) -> int:
    for name, entry in catalog_entries(filter_text):
        dim = "any" if entry["dim"] is None else f"{entry['dim']}d"
        params = ", ".join(f"{k}: {v}" for k, v in entry["params"].items()) or "-"
        print(f"{name:<10} {dim:<4} params[{params}]  {entry['doc']}", file=stream)
    return 0


def check(manifest_path: str | Path, stream=sys.stdout) -> int:
    """Re-verify a manifest: config digest, file digests and recorded checks."""
    path = Path(manifest_path)
    try:
        man = json.loads(path.read_text())
        digest, files = man["config_sha256"], man["files"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: unreadable manifest: {exc}", file=sys.stderr)
        return 2
    problems = []
    cfg = Path(man.get("config", ""))
    if not cfg.is_file() or _sha256(cfg) != digest:
        problems.append("config digest mismatch")
    for name, sha in files.items():
        f = path.parent / name
        if not f.is_file() or _sha256(f) != sha:
            problems.append(f"file digest mismatch: {name}")
    failed = [c["name"] for c in man.get("checks", []) if not c["passed"]]
    problems += [f"check failed: {n}" for n in failed]
    if man.get("exit_status", 0) == 3:
        problems.append("run stopped on a numerical guard")
    for p in problems:
        print(p, file=stream)
    print("OK" if not problems else "FAILED", file=stream)
    return 0 if not problems else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="monoflow", description=__doc__.splitlines()[0])
    parser.add_argument("--workers", type=int, help="worker threads (sets MONOFLOW_WORKERS)")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute a scenario config")
    p_run.add_argument("config")
    p_cat = sub.add_parser("catalog", help="list catalog fields and nonlinearities")
    p_cat.add_argument("filter", nargs="?")
    p_chk = sub.add_parser("check", help="verify a run manifest")
    p_chk.add_argument("manifest")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.workers is not None:
        if args.workers < 1:
            print("error: --workers must be positive", file=sys.stderr)
            return 2
        os.environ["MONOFLOW_WORKERS"] = str(args.workers)
    if args.command == "run":
        return run(args.config)
    if args.command == "catalog":
        return catalog(args.filter)
    return check(args.manifest)


if __name__ == "__main__":
    sys.exit(main())
