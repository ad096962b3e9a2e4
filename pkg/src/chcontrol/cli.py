"""Configuration parsing, experiment orchestration, and file IO.

One TOML config file drives every run; no environment variables are
consulted except an optional output-directory override on the command
line.  Subcommands:

  forward          one state solve (quench or obstacle)
  adjoint          forward + backward sweep + diagnostics
  gradcheck        adjoint gradient versus central finite differences
  optimize         single-level projected-gradient optimization
  quench-sweep     deep-quench continuation over the configured schedule
  noperator-check  identity suite for the mean-zero Green operator

Exit codes: 0 ok, 2 config error, 3 solver failure, 4 acceptance-check
failure.  Identical config and code version reproduce bitwise-identical
numeric artifacts; every run writes a manifest listing them.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import __version__
from .adjoint import curvature_series, solve_adjoint
from .control import (
    Control,
    ControlError,
    OptimizeOptions,
    deep_quench_drive,
    fd_gradient_check,
    optimize,
    vi_box_residual,
)
from .cost import CostSpec
from .grid import FieldPair, StripGeometry
from .linops import NOperator, SolverError
from .potentials import SmoothPotential
from .problem import ProblemSpec, ValidationError, build
from .state import (
    SolverOptions,
    initial_constant,
    initial_stripe,
    l2q_distance,
    solve_forward,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


class ConfigError(ValueError):
    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


# ----------------------------------------------------------------------
# config parsing
# ----------------------------------------------------------------------

_DEFAULTS = {
    "geometry": {"Lx": 2.0, "Ly": 1.0, "Nx": 16, "Ny": 8},
    "phys": {"tau": 1.0, "t_final": 0.5, "dt": 0.05},
    "initial": {"type": "stripe", "value": 0.2, "amplitude": 0.5, "n_waves": 1, "width": 0.35},
    "potential": {"pi_coeffs": [0.0, -1.0], "pi_gamma_coeffs": [0.0, -1.0]},
    "quench": {"alpha0": 0.1, "ratio": 0.5, "levels": 14, "p": 1.0},
    "cost": {
        "beta": [1.0, 0.0, 0.0, 0.0, 1e-3],
        "target_q": 0.0,
        "target_sigma": 0.0,
        "target_omega": 0.0,
        "target_gamma": 0.0,
    },
    "control": {"mode": "shear", "u_bar": 1.0, "r0": 10.0, "init": "zero", "amplitude": 0.5},
    "solver": {
        "newton_tol": 1e-11,
        "newton_max_iter": 50,
        "pdas_max_sweeps": 50,
        "opt_tol": 1e-8,
        "opt_max_iter": 100,
    },
    "output": {"dir": "out"},
}


def _merged(raw: dict) -> dict:
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        cfg[section] = dict(defaults)
        extra = raw.get(section, {})
        if not isinstance(extra, dict):
            raise ConfigError([f"section [{section}] must be a table"])
        cfg[section].update(extra)
    for section in raw:
        if section not in _DEFAULTS:
            raise ConfigError([f"unknown config section [{section}]"])
    return cfg


def _build_initial(cfg_initial: dict, geom: StripGeometry, base_dir: Path) -> FieldPair:
    kind = cfg_initial.get("type", "stripe")
    if kind == "constant":
        return initial_constant(geom, float(cfg_initial["value"]))
    if kind == "stripe":
        return initial_stripe(
            geom,
            amplitude=float(cfg_initial["amplitude"]),
            n_waves=int(cfg_initial.get("n_waves", 1)),
            width=float(cfg_initial.get("width", 0.35)),
        )
    if kind == "file":
        return load_field_raw(base_dir / cfg_initial["path"], geom)
    raise ConfigError([f"unknown initial data type {kind!r}"])


def parse_config(path) -> ProblemSpec:
    """Parse and validate a run configuration.

    Raises ConfigError carrying the full list of violations; every
    violated modeling assumption is named ((A1)..(A6))."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"]) from exc
    cfg = _merged(raw)

    violations: List[str] = []
    gsec = cfg["geometry"]
    try:
        geom = StripGeometry(
            Lx=float(gsec["Lx"]), Ly=float(gsec["Ly"]), Nx=int(gsec["Nx"]), Ny=int(gsec["Ny"])
        )
    except ValueError as exc:
        raise ConfigError([f"geometry: {exc}"]) from exc

    psec = cfg["phys"]
    if float(psec["tau"]) <= 0:
        violations.append("(A2): tau_Omega > 0 and tau_Gamma > 0")
    if "tau_gamma" in psec and float(psec["tau_gamma"]) != float(psec["tau"]):
        violations.append("(A6): tau_Omega = tau_Gamma is required")
    beta = np.asarray(cfg["cost"]["beta"], dtype=float)
    if beta.shape != (5,) or np.any(beta < 0) or not np.any(beta > 0):
        violations.append("(A4): cost weights nonnegative but not all zero")
    csec = cfg["control"]
    if float(csec["u_bar"]) < 0 or float(csec["r0"]) <= 0:
        violations.append("(A5): control bounds must make the admissible set nonempty")
    try:
        rho0 = _build_initial(cfg["initial"], geom, path.parent)
        if rho0.min() <= -1.0 or rho0.max() >= 1.0:
            violations.append("(A1): -1 < rho0 < 1 everywhere")
    except ConfigError as exc:
        violations.extend(exc.violations)
        rho0 = None
    try:
        pot = SmoothPotential(
            pi_coeffs=tuple(float(c) for c in cfg["potential"]["pi_coeffs"]),
            pi_gamma_coeffs=tuple(float(c) for c in cfg["potential"]["pi_gamma_coeffs"]),
        )
    except Exception:
        violations.append("(A3): pi and pi_Gamma must be polynomial coefficient lists")
        pot = None
    dt = float(psec["dt"])
    t_final = float(psec["t_final"])
    if dt <= 0 or t_final <= 0 or abs(t_final / dt - round(t_final / dt)) > 1e-9:
        violations.append("time grid: t_final must be a positive integer multiple of dt")
    if violations:
        raise ConfigError(violations)

    ssec = cfg["solver"]
    qsec = cfg["quench"]
    try:
        spec = build(
            geom,
            rho0,
            tau=float(psec["tau"]),
            t_final=t_final,
            dt=dt,
            cost=CostSpec(
                beta=beta,
                target_q=cfg["cost"]["target_q"],
                target_sigma=cfg["cost"]["target_sigma"],
                target_omega=cfg["cost"]["target_omega"],
                target_gamma=cfg["cost"]["target_gamma"],
            ),
            potential=pot,
            quench_alpha0=float(qsec["alpha0"]),
            quench_ratio=float(qsec["ratio"]),
            quench_levels=int(qsec["levels"]),
            quench_p=float(qsec["p"]),
            u_bar=float(csec["u_bar"]),
            r0=float(csec["r0"]),
            solver=SolverOptions(
                newton_tol=float(ssec["newton_tol"]),
                newton_max_iter=int(ssec["newton_max_iter"]),
                pdas_max_sweeps=int(ssec["pdas_max_sweeps"]),
            ),
            opt=OptimizeOptions(
                tol=float(ssec["opt_tol"]), max_iter=int(ssec["opt_max_iter"])
            ),
            output_dir=str(cfg["output"]["dir"]),
        )
    except ValidationError as exc:
        raise ConfigError(exc.violations) from exc
    spec._cli_config = cfg  # control initialization lives outside the spec proper
    return spec


def initial_control(spec: ProblemSpec) -> Control:
    cfg = getattr(spec, "_cli_config", None)
    csec = cfg["control"] if cfg else dict(_DEFAULTS["control"])
    geom = spec.geom
    n_steps = spec.phys.n_steps
    mode = csec.get("mode", "shear")
    if mode == "shear":
        values = np.zeros((n_steps, geom.Ny))
        if csec.get("init", "zero") == "sin-shear":
            y = geom.y_nodes()
            values[:] = float(csec.get("amplitude", 0.5)) * np.sin(2 * np.pi * y / geom.Ly)
    elif mode == "streamfunction":
        values = np.zeros((n_steps, geom.Ny + 1, geom.Nx))
    else:
        raise ConfigError([f"unknown control mode {mode!r}"])
    return Control(
        mode=mode, values=values, u_bar=spec.u_bar, r0=spec.r0, grid=spec.grid, dt=spec.phys.dt
    )


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------

def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _cell(c) -> str:
    if isinstance(c, str):
        return c
    if isinstance(c, (int, np.integer)):
        return str(int(c))
    return _fmt(c)


def save_series_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(c) for c in row])


def save_field_csv(path: Path, pair: FieldPair, geom: StripGeometry):
    """Flat (x, y, value) rows: bulk nodes, then bottom and top circles."""
    xs = geom.x_nodes()
    ys = geom.y_nodes()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "value"])
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                writer.writerow([_fmt(x), _fmt(y), _fmt(pair.bulk[j, i])])
        for i, x in enumerate(xs):
            writer.writerow([_fmt(x), _fmt(0.0), _fmt(pair.bottom[i])])
        for i, x in enumerate(xs):
            writer.writerow([_fmt(x), _fmt(geom.Ly), _fmt(pair.top[i])])


def save_field_raw(stem: Path, pair: FieldPair, geom: StripGeometry, time: float):
    """Raw little-endian float64 vector (bulk row-major, bottom, top) plus
    a JSON sidecar with dims, spacing, and the snapshot time."""
    vec = pair.to_vector().astype("<f8")
    raw = stem.with_suffix(".f64")
    raw.write_bytes(vec.tobytes())
    sidecar = {
        "dims": [geom.Ny, geom.Nx],
        "trace_len": geom.Nx,
        "dx": [geom.hx, geom.hy],
        "time": time,
        "layout": "bulk row-major, then bottom trace, then top trace",
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    return [raw, stem.with_suffix(".json")]


def load_field_raw(path: Path, geom: StripGeometry) -> FieldPair:
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f8")
    if data.size != geom.n_total:
        raise ConfigError(
            [f"field file {path} holds {data.size} values, expected {geom.n_total}"]
        )
    return FieldPair.from_vector(data.astype(float), geom)


@dataclass
class RunManifest:
    config_hash: str
    version: str
    started: str
    finished: str = ""
    files: List[str] = field(default_factory=list)
    stages: dict = field(default_factory=dict)

    def write(self, out_dir: Path):
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), sort_keys=True, indent=1))
        return path


def _start_manifest(config_path: Path) -> RunManifest:
    digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()
    return RunManifest(
        config_hash=digest,
        version=__version__,
        started=datetime.now(timezone.utc).isoformat(),
    )


# ----------------------------------------------------------------------
# subcommand bodies
# ----------------------------------------------------------------------

def _forward_series_rows(spec, state):
    rows = []
    for k, d in enumerate(state.diagnostics, start=1):
        rows.append((k, k * spec.phys.dt, d.mean, d.min_rho, d.max_rho, d.iterations))
    return rows


def run_forward(spec: ProblemSpec, out: Path, mode: str, alpha: float, manifest: RunManifest):
    u = initial_control(spec)
    state = solve_forward(spec, u, mode, alpha=alpha if mode == "quench" else None)
    files = []
    series = out / "series.csv"
    save_series_csv(
        series,
        ["step", "time", "mean", "min_rho", "max_rho", "newton_iters"],
        _forward_series_rows(spec, state),
    )
    files.append(series)
    files += save_field_raw(out / "rho_initial", state.rho[0], spec.geom, 0.0)
    files += save_field_raw(out / "rho_final", state.rho[-1], spec.geom, spec.phys.t_final)
    files += save_field_raw(out / "mu_final", state.mu[-1], spec.geom, spec.phys.t_final)
    csvf = out / "rho_final.csv"
    save_field_csv(csvf, state.rho[-1], spec.geom)
    files.append(csvf)
    manifest.stages["forward"] = "ok"
    return files, state


def run_adjoint(spec: ProblemSpec, out: Path, mode: str, alpha: float, manifest: RunManifest):
    files, state = run_forward(spec, out, mode, alpha, manifest)
    u = initial_control(spec)
    adj = solve_adjoint(spec, state, u)
    curv = (
        curvature_series(spec, state, adj)
        if mode == "quench"
        else np.zeros(state.n_steps + 1)
    )
    rows = [
        (k, adj.mean_q[k], adj.norm_q[k], adj.norm_Nq[k], curv[k])
        for k in range(1, state.n_steps + 1)
    ]
    diag = out / "adjoint_diagnostics.csv"
    save_series_csv(diag, ["step", "mean_q", "norm_q", "norm_Nq", "curvature_norm"], rows)
    files.append(diag)
    files += save_field_raw(out / "p_start", adj.p[1], spec.geom, spec.phys.dt)
    files += save_field_raw(out / "q_start", adj.q[1], spec.geom, spec.phys.dt)
    manifest.stages["adjoint"] = "ok"
    return files, (state, adj)


def run_gradcheck(spec: ProblemSpec, out: Path, alpha: float, seed: int, manifest: RunManifest):
    rng = np.random.default_rng(seed)
    u = initial_control(spec)
    dirs = [
        Control(
            mode=u.mode,
            values=_random_direction(u, rng),
            u_bar=u.u_bar,
            r0=u.r0,
            grid=u.grid,
            dt=u.dt,
        )
        for _ in range(5)
    ]
    anchor = Control(
        mode=u.mode,
        values=0.5 * np.ones_like(u.values) * (0.1 if u.mode == "shear" else 0.0),
        u_bar=u.u_bar,
        r0=u.r0,
        grid=u.grid,
        dt=u.dt,
    )
    plain = fd_gradient_check(spec, alpha, u, dirs)
    adapted = fd_gradient_check(spec, alpha, u, dirs, anchor=anchor)
    rows = []
    worst = 0.0
    for i, rec in enumerate(plain):
        rows.append((i, "plain", rec["adjoint"], rec["fd"], rec["rel_err"], rec["step"]))
        worst = max(worst, rec["rel_err"])
    for i, rec in enumerate(adapted):
        rows.append((i, "adapted", rec["adjoint"], rec["fd"], rec["rel_err"], rec["step"]))
        worst = max(worst, rec["rel_err"])
    report = out / "gradcheck.csv"
    save_series_csv(report, ["direction", "cost", "adjoint", "fd", "rel_err", "step"], rows)
    summary = out / "gradcheck.json"
    summary.write_text(json.dumps({"max_rel_err": worst, "tolerance": 1e-6}, indent=1))
    manifest.stages["gradcheck"] = "ok" if worst <= 1e-6 else "failed"
    return [report, summary], worst


def _random_direction(u: Control, rng) -> np.ndarray:
    if u.mode == "shear":
        return rng.standard_normal(u.values.shape)
    vals = rng.standard_normal(u.values.shape)
    vals[:, 0, :] = vals[:, 0, :1]
    vals[:, -1, :] = vals[:, -1, :1]
    return vals


def run_optimize(spec: ProblemSpec, out: Path, alpha: float, manifest: RunManifest):
    u0 = initial_control(spec)
    u_star, hist = optimize(spec, alpha, u0, spec.opt)
    files = []
    history = out / "history.csv"
    save_series_csv(
        history,
        ["iter", "cost", "step_len", "stationarity", "x_l2", "x_linf", "x_h1l3"],
        list(hist.rows()),
    )
    files.append(history)
    vi_res, skipped = (
        vi_box_residual(u_star, hist.final_gradient)
        if u_star.mode == "shear"
        else (float("nan"), 0)
    )
    summary = {
        "alpha": alpha,
        "status": hist.status,
        "iterations": len(hist.cost),
        "final_cost": hist.cost[-1],
        "stationarity": hist.stationarity[-1],
        "vi_residual": vi_res,
        "vi_probes_skipped": skipped,
    }
    sfile = out / "optimize_summary.json"
    sfile.write_text(json.dumps(summary, indent=1, sort_keys=True))
    files.append(sfile)
    np.save(out / "control_values.npy", u_star.values)
    files.append(out / "control_values.npy")
    manifest.stages["optimize"] = hist.status
    return files, (u_star, hist)


def run_quench_sweep(spec: ProblemSpec, out: Path, anchored: bool, manifest: RunManifest):
    u0 = initial_control(spec)
    probe = initial_control(spec)
    if probe.mode == "shear":
        y = spec.geom.y_nodes()
        probe.values[:] = 0.3 * np.sin(2 * np.pi * y / spec.geom.Ly)
    report = deep_quench_drive(
        spec, u0, spec.quench_schedule(), anchored=anchored, probe=probe, opts=spec.opt
    )
    files = []
    for lvl in report.levels:
        f = out / f"alpha_{lvl.alpha:.6e}.json"
        f.write_text(
            json.dumps(
                {
                    "alpha": lvl.alpha,
                    "final_cost": lvl.final_cost,
                    "vi_residual": lvl.vi_residual,
                    "dist_to_obstacle_state": lvl.dist_to_obstacle_state,
                    "control_increment": lvl.control_increment,
                    "probe_cost_gap": lvl.probe_cost_gap,
                    "status": lvl.optimizer_status,
                    "iterations": lvl.iterations,
                },
                indent=1,
                sort_keys=True,
            )
        )
        files.append(f)
    limit = out / "limit_report.json"
    limit.write_text(
        json.dumps(
            {
                "increments_decreasing": report.increments_decreasing,
                "dists_decreasing": report.dists_decreasing,
                "probe_gaps_decreasing": report.probe_gaps_decreasing,
                "levels": len(report.levels),
            },
            indent=1,
            sort_keys=True,
        )
    )
    files.append(limit)
    manifest.stages["quench-sweep"] = "ok"
    return files, report


def run_noperator_check(spec: ProblemSpec, out: Path, seed: int, manifest: RunManifest):
    grid = spec.grid
    nop = NOperator(grid)
    rng = np.random.default_rng(seed)
    n = grid.geom.n_total
    checks = {}
    worst_sym = worst_energy = worst_round = worst_mean = 0.0
    for _ in range(10):
        g1 = rng.standard_normal(n)
        g1 -= grid.generalized_mean(g1)
        g2 = rng.standard_normal(n)
        g2 -= grid.generalized_mean(g2)
        n1 = nop.apply_vector(g1)
        n2 = nop.apply_vector(g2)
        s12 = grid.inner_product_H(g1, n2)
        s21 = grid.inner_product_H(g2, n1)
        worst_sym = max(worst_sym, abs(s12 - s21) / max(abs(s12), 1e-300))
        energy = grid.inner_product_H(g1, n1)
        worst_energy = max(
            worst_energy, abs(energy - grid.norm_V0(n1) ** 2) / max(abs(energy), 1e-300)
        )
        resid = grid.K @ n1 - grid.mass_diag * g1
        worst_round = max(worst_round, np.linalg.norm(resid) / np.linalg.norm(grid.mass_diag * g1))
        worst_mean = max(worst_mean, abs(grid.generalized_mean(n1)))
    checks["symmetry_rel"] = worst_sym
    checks["energy_identity_rel"] = worst_energy
    checks["round_trip_rel"] = worst_round
    checks["mean_abs"] = worst_mean
    ok = worst_sym < 1e-10 and worst_energy < 1e-10 and worst_round < 1e-9 and worst_mean < 1e-12
    checks["pass"] = bool(ok)
    f = out / "noperator_check.json"
    f.write_text(json.dumps(checks, indent=1, sort_keys=True))
    manifest.stages["noperator-check"] = "ok" if ok else "failed"
    return [f], ok


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------

def _parser():
    p = argparse.ArgumentParser(prog="chcontrol", description=__doc__)
    p.add_argument("subcommand", choices=[
        "forward", "adjoint", "gradcheck", "optimize", "quench-sweep", "noperator-check",
    ])
    p.add_argument("--config", required=True, help="path to the TOML run configuration")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--mode", choices=["quench", "obstacle"], default="quench")
    p.add_argument("--alpha", type=float, default=None, help="quench level (default alpha0)")
    p.add_argument("--seed", type=int, default=0, help="seed for random probe directions")
    p.add_argument("--anchored", action="store_true", help="use the adapted cost in sweeps")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = parse_config(args.config)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _start_manifest(Path(args.config))
    alpha = args.alpha if args.alpha is not None else spec.quench_alpha0

    try:
        if args.subcommand == "forward":
            files, _ = run_forward(spec, out, args.mode, alpha, manifest)
        elif args.subcommand == "adjoint":
            files, _ = run_adjoint(spec, out, args.mode, alpha, manifest)
        elif args.subcommand == "gradcheck":
            files, worst = run_gradcheck(spec, out, alpha, args.seed, manifest)
        elif args.subcommand == "optimize":
            files, _ = run_optimize(spec, out, alpha, manifest)
        elif args.subcommand == "quench-sweep":
            files, _ = run_quench_sweep(spec, out, args.anchored, manifest)
        else:
            files, ok = run_noperator_check(spec, out, args.seed, manifest)
    except (SolverError, ControlError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        manifest.stages[args.subcommand] = f"solver failure: {exc}"
        manifest.finished = datetime.now(timezone.utc).isoformat()
        manifest.files = []
        manifest.write(out)
        return EXIT_SOLVER

    manifest.finished = datetime.now(timezone.utc).isoformat()
    manifest.files = sorted(str(Path(f).name) for f in files)
    mpath = manifest.write(out)
    print(f"wrote {len(files)} artifacts to {out} (manifest {mpath.name})")
    if any(status == "failed" for status in manifest.stages.values()):
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
