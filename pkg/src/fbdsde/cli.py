"""Batch experiment runner.

    fbdsde <command> [--config PATH] [--seed INT] [--out DIR] [--quiet]

Every command writes ``<command>.csv`` (header row, 17 significant digits)
and ``summary.json`` (schema-versioned, with the seed, grid, solver config,
build id and one entry per check) into the output directory.  Exit codes:
0 all checks pass, 1 some check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import csv
import json
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import DiscretePath, ito_residual, loglog_slope
from .game import GameSpec, example11_build, solve_game, verify_nash
from .model import (ControlDomain, ControlPath, StateQuadruple, check_lipschitz_bounds,
                    check_monotone, cost, linear_quadratic)
from .noise import build_lattice, make_grid, sample_noise
from .smp import (QUANTITIES, SpikeSpec, adjoint_residual, check_smp, order_experiment,
                  select_convention, solve_adjoint, solve_variational, spike_test_system,
                  variational_inequality)
from .solver import (SCHEMA_VERSION, SolverConfig, fmt17, residual_verify, solve_lattice,
                     write_node_table)
from .spde import derived_cases, fd_comparator, mc_vs_lattice, polynomial_spde, u_grid

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

COMMANDS = ("ito-check", "assumptions", "solve", "verify-example11", "spike-orders",
            "adjoint-check", "smp-check", "game-nash", "spde-grid", "tree-vs-mc")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

# command-specific sections with their defaults; unknown keys are errors
SECTIONS = {
    "ito": dict(alpha0=0.0, beta=0.0, gamma=0.0, delta=1.0, N_list=[8, 16, 32, 64],
                paths=20000, kind="gaussian", slope_target=1.0, slope_tol=0.25),
    "model": dict(kind="example11", f=None, F=None, g=None, G=None, h=[0.0, 0.0], x=0.0, Q=None,
                  r=0.0, s=None, s_v=0.0, terminal=[0.0, 0.0], initial=[0.0, 0.0],
                  domain=None, name="lq", probes=10000),
    "control": dict(value=0.0),
    "example11": dict(v_grid=[-1.0, -0.5, 0.5, 1.0], eps_steps=[1, 2, 3, 4, 5, 6, 8, 10]),
    "spike": dict(tau=0.0, v=1.0, eps_steps=[1, 2, 4, 6, 8, 10], int_min=1.35, sup_min=0.9),
    "adjoint": dict(tau=0.25, eps=0.25, v=1.0, tol_factor=10.0),
    "smp": dict(v_grid=[-1.0, -0.5, 0.0, 0.5, 1.0], tol=1e-10),
    "game": dict(A=0.0, C=0.0, D=0.0, E=0.5, B1=1.0, B2=1.0, R1=1.0, R2=0.0, P1=0.0, P2=0.0,
                 Q1=1.0, Q2=0.0, N1=1.0, N2=1.0, a=1.0, alpha=None, beta=None,
                 variant="consistent"),
    "nash": dict(paths=100000),
    "spde": dict(b=[0.3, -0.2, 0.0], sigma=[0.8, 0.1], f={"y": -0.5, "x": 0.3, "z": 0.2}, g={},
                 h=[1.0, 0.5, 0.5], l={}, gamma=[0.0, 0.0], control=0.0),
    "u_grid": dict(ts=[0.0, 0.2, 0.4, 0.6, 0.8], xs=[-1.0, -0.5, 0.0, 0.5, 1.0], dt=0.05,
                   paths=20000, rel_tol=0.02, fd_level=3),
    "tree": dict(N=3, paths=100000, cases=["kappa_y", "coupled", "controlled"]),
}

GRID_DEFAULTS = {
    "ito-check": (1.0, 8), "assumptions": (1.0, 4), "solve": (1.0, 6), "verify-example11": (1.0, 10),
    "spike-orders": (1.0, 10), "adjoint-check": (1.0, 4), "smp-check": (1.0, 6),
    "game-nash": (1.0, 3), "spde-grid": (1.0, 20), "tree-vs-mc": (1.0, 3),
}

COMMAND_MODEL = {"assumptions": "monotone", "solve": "spike_test", "adjoint-check": "spike_test",
                 "smp-check": "example11"}


@dataclass
class ExperimentConfig:
    command: str
    T: float
    N: int
    seed: int
    out: Path
    solver: SolverConfig
    sections: dict = field(default_factory=dict)
    source: str | None = None

    def section(self, name: str) -> dict:
        return self.sections[name]


def _merge_section(name: str, given: dict, base_dir: Path) -> dict:
    given = dict(given)
    if "file" in given:
        ref = base_dir / given.pop("file")
        if not ref.is_file():
            raise ConfigError(f"[{name}] refers to missing file {ref}")
        try:
            given = {**tomllib.loads(ref.read_text()), **given}
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read {ref}: {e}") from e
    unknown = set(given) - set(SECTIONS[name])
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    return {**SECTIONS[name], **given}


def load_config(command: str, path: str | None, seed: int | None, out: str | None) -> ExperimentConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    raw: dict = {}
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            raw = tomllib.loads(p.read_text())
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        base = p.parent
    allowed = {"command", "seed", "out", "grid", "solver"} | set(SECTIONS)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"config is for {raw['command']!r}, not {command!r}")
    T0, N0 = GRID_DEFAULTS[command]
    grid = dict(raw.get("grid", {}))
    if set(grid) - {"T", "N"}:
        raise ConfigError(f"unknown keys in [grid]: {sorted(set(grid) - {'T', 'N'})}")
    solver_raw = dict(raw.get("solver", {}))
    names = set(SolverConfig.__dataclass_fields__) - {"seed"}
    if set(solver_raw) - names:
        raise ConfigError(f"unknown keys in [solver]: {sorted(set(solver_raw) - names)}")
    if "noise_features" in solver_raw:
        solver_raw["noise_features"] = tuple(solver_raw["noise_features"])
    the_seed = int(seed if seed is not None else raw.get("seed", 0))
    try:
        solver = SolverConfig(**solver_raw, seed=the_seed)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[solver]: {e}") from e
    sections = {name: _merge_section(name, raw.get(name, {}), base) for name in SECTIONS}
    if "kind" not in raw.get("model", {}) and command in COMMAND_MODEL:
        sections["model"]["kind"] = COMMAND_MODEL[command]
    try:
        T, N = float(grid.get("T", T0)), int(grid.get("N", N0))
        make_grid(T, N)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[grid]: {e}") from e
    out_dir = Path(out if out is not None else raw.get("out", f"results/{command}"))
    return ExperimentConfig(command, T, N, the_seed, out_dir, solver, sections, path)


def build_id() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                           cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        if r.returncode == 0 and r.stdout.strip():
            return f"{__version__}+{r.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_model(sec: dict):
    kind = sec["kind"]
    if kind == "example11":
        return example11_build()
    if kind == "spike_test":
        return spike_test_system()
    if kind == "monotone":
        return monotone_system()
    if kind != "lq":
        raise ConfigError(f"unknown model kind {kind!r}")
    dom = ControlDomain() if sec["domain"] is None else ControlDomain(*map(float, sec["domain"]))
    try:
        return linear_quadratic(f=sec["f"], F=sec["F"], g=sec["g"], G=sec["G"], h=sec["h"], x=sec["x"],
                                Q=sec["Q"], r=sec["r"], s=sec["s"], s_v=sec["s_v"],
                                terminal=sec["terminal"], initial=sec["initial"], domain=dom,
                                name=sec["name"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[model]: {e}") from e


def monotone_system():
    """Dissipative coupled system: <A(zeta) - A(zeta'), zeta - zeta'> = -|zeta - zeta'|^2."""
    return linear_quadratic(f={"state": [0.0, -1.0, 0.0, 0.0]}, F={"state": [1.0, 0.0, 0.0, 0.0]},
                            g={"state": [[0.0, 0.0, 0.0, -1.0]]}, G={"state": [[0.0, 0.0, 1.0, 0.0]]},
                            h=(0.5, 0.0), x=1.0, Q=np.eye(4), r=1.0, terminal=(1.0, 0.0),
                            initial=(1.0, 0.0), name="monotone")


def build_spde(sec: dict, T: float):
    try:
        return polynomial_spde(b=sec["b"], sigma=sec["sigma"], f=sec["f"], g=sec["g"], h=sec["h"],
                               l=sec["l"], gamma=sec["gamma"], T=T, name="config")
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[spde]: {e}") from e


# ---------------------------------------------------------------------------
# results


@dataclass
class Result:
    header: list
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def check(self, name: str, passed: bool, value=None, threshold=None) -> None:
        self.checks.append({"name": name, "passed": bool(passed),
                            "value": None if value is None else _jsonable(value),
                            "threshold": None if threshold is None else _jsonable(threshold)})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in x]
    return x


def _cell(x):
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return fmt17(x)
    return str(x)


def write_outputs(cfg: ExperimentConfig, res: Result) -> None:
    cfg.out.mkdir(parents=True, exist_ok=True)
    with open(cfg.out / f"{cfg.command}.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(res.header)
        for r in res.rows:
            w.writerow([_cell(c) for c in r])
    summary = {
        "schema": SCHEMA_VERSION,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "command": cfg.command,
        "build": build_id(),
        "seed": cfg.seed,
        "config": cfg.source,
        "grid": {"T": cfg.T, "N": cfg.N},
        "solver": _jsonable(asdict(cfg.solver)),
        "passed": res.passed,
        "checks": res.checks,
        "info": _jsonable(res.info),
    }
    (cfg.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_ito(cfg: ExperimentConfig) -> Result:
    s = cfg.section("ito")
    res = Result(["N", "dt", "max_abs", "mean", "mean_square"])
    dts, ms = [], []
    for N in s["N_list"]:
        grid = make_grid(cfg.T, int(N))
        noise = sample_noise(grid, 1, 1, int(s["paths"]), cfg.seed + int(N), kind=s["kind"])
        const = lambda c: DiscretePath(grid, np.full(grid.N + 1, float(c)))
        r = ito_residual(s["alpha0"], const(s["beta"]), const(s["gamma"]), const(s["delta"]), noise)
        res.rows.append([int(N), grid.dt, r.max_abs, r.mean, r.mean_square])
        dts.append(grid.dt)
        ms.append(r.mean_square)
    if s["gamma"] == 0 and s["delta"] == 0:
        worst = max(row[2] for row in res.rows)
        res.check("deterministic_zero", worst <= 1e-12, worst, 1e-12)
    elif len(dts) >= 2 and min(ms) > 0:
        slope, se = loglog_slope(dts, ms)
        res.info["slope_stderr"] = se
        res.check("mean_square_slope", abs(slope - s["slope_target"]) <= s["slope_tol"], slope,
                  [s["slope_target"] - s["slope_tol"], s["slope_target"] + s["slope_tol"]])
    return res


def cmd_assumptions(cfg: ExperimentConfig) -> Result:
    coeffs = build_model(cfg.section("model"))
    probes = int(cfg.section("model")["probes"])
    res = Result(["check", "status", "worst_margin", "best_mu", "eig_min", "eig_max"])
    reports = {v: check_monotone(coeffs, probes, cfg.seed, variant=v) for v in ("H3", "H3'")}
    for v, r in reports.items():
        res.rows.append([v, r.status, r.worst_margin, r.best_mu, r.eig_min, r.eig_max])
    lip = check_lipschitz_bounds(coeffs, probes, cfg.seed)
    res.info["lipschitz"] = {"empirical": lip.lipschitz_emp, "declared": lip.lipschitz_declared,
                             "bound_empirical": lip.bound_emp, "bound_declared": lip.bound_declared}
    res.check("derivatives_consistent", True)
    res.check("monotone", any(r.passed for r in reports.values()),
              {v: r.status for v, r in reports.items()})
    return res


def _control(cfg: ExperimentConfig, grid, coeffs) -> ControlPath:
    return ControlPath.constant(grid, float(cfg.section("control")["value"]), coeffs.domain)


def cmd_solve(cfg: ExperimentConfig) -> Result:
    coeffs = build_model(cfg.section("model"))
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    u = _control(cfg, lat.grid, coeffs)
    rep = solve_lattice(coeffs, u, lat, cfg.solver)
    path = cfg.out / "nodes.csv"
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_node_table(path, rep.solution, lat.weights)
    sol = rep.solution
    res = Result(["k", "t", "y_mean", "Y_mean", "z_mean", "Z_mean"])
    w = lat.weights
    for k, t in enumerate(lat.grid.nodes):
        res.rows.append([k, t, w @ sol.y[k], w @ sol.Y[k], w @ sol.z[k].sum(axis=1), w @ sol.Z[k].sum(axis=1)])
    res.info.update(iterations=rep.iterations, estimates=rep.estimates, residuals=rep.residuals,
                    cost=cost(coeffs, sol, u, w).mean)
    worst = max(rep.residuals.values())
    res.check("residual", worst < 10 * cfg.solver.picard_tol, worst, 10 * cfg.solver.picard_tol)
    return res


def cmd_example11(cfg: ExperimentConfig) -> Result:
    s = cfg.section("example11")
    coeffs = example11_build()
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    grid = lat.grid
    u = ControlPath.constant(grid, 0.0, coeffs.domain)
    zero = StateQuadruple.zeros(grid, lat.n_atoms)
    res = Result(["quantity", "v", "value", "expected"])
    r = residual_verify(coeffs, u, zero, lat)
    worst = max(r.values())
    res.check("state_residual_zero", worst < 1e-12, worst, 1e-12)
    adj = solve_adjoint(coeffs, zero, lat, cfg.solver, u)
    ar = max(adjoint_residual(coeffs, zero, u, adj, lat).values())
    amax = max(float(np.max(np.abs(a))) for a in (adj.p, adj.q, adj.k, adj.h))
    res.check("adjoint_residual_zero", ar < 1e-12, ar, 1e-12)
    res.check("adjoint_is_zero", amax < 1e-12, amax, 1e-12)
    sol = solve_lattice(coeffs, u, lat, cfg.solver).solution
    J = cost(coeffs, sol, u, lat.weights).mean
    res.check("cost_at_zero", abs(J) < 1e-12, J, 0.0)
    grid_v = sorted(set([0.0] + [float(v) for v in s["v_grid"]]))
    rep = check_smp(coeffs, zero, u, adj, grid_v, lattice=lat)
    res.check("min_gap_zero_at_v0", abs(rep.min_gap) < 1e-12 and rep.argmin[2] == 0.0,
              rep.min_gap, 0.0)
    for v in s["v_grid"]:
        lo, hi = rep.gaps[float(v)], rep.gaps_max[float(v)]
        res.rows.append(["gap_min", v, lo, 0.5 * v * v])
        res.rows.append(["gap_max", v, hi, 0.5 * v * v])
        err = max(abs(lo - 0.5 * v * v), abs(hi - 0.5 * v * v))
        res.check(f"gap_half_v2[{v:g}]", err < 1e-10, err, 1e-10)
    # variational inequality: LHS >= -c eps^1.2 with c < 1
    eps, lhs = [], []
    for m in s["eps_steps"]:
        if int(m) > grid.N:
            continue
        spec = SpikeSpec(0.0, int(m) * grid.dt, 1.0)
        var = solve_variational(coeffs, zero, u, spec, lat, cfg.solver)
        e = spec.effective_eps(grid)
        val = variational_inequality(coeffs, zero, u, spec, var, lat)
        eps.append(e)
        lhs.append(val)
        res.rows.append(["vi_lhs", e, val, 0.5 * e])
    c = max([0.0] + [-l / e ** 1.2 for e, l in zip(eps, lhs)])
    res.check("variational_inequality_c", c < 1 and len(eps) >= 5, c, 1.0)
    return res


def cmd_spike(cfg: ExperimentConfig) -> Result:
    s = cfg.section("spike")
    coeffs = build_model(cfg.section("model")) if cfg.section("model")["kind"] != "example11" \
        else spike_test_system()
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    u = ControlPath.constant(lat.grid, float(cfg.section("control")["value"]), coeffs.domain)
    eps = [int(m) * lat.grid.dt for m in s["eps_steps"] if int(m) <= lat.N]
    rep = order_experiment(coeffs, u, s["tau"], s["v"], eps, lat, cfg.solver)
    res = Result(["eps"] + list(QUANTITIES))
    for row in rep.rows():
        res.rows.append([row["eps"]] + [row[q] for q in QUANTITIES])
    res.info["slope_stderr"] = rep.stderr
    span = rep.eps.max() / rep.eps.min()
    res.check("eps_battery", len(rep.eps) >= 5 and span >= 10 - 1e-9, [len(rep.eps), span], [5, 10])
    for q in QUANTITIES:
        lim = s["sup_min"] if q.startswith("sup") else s["int_min"]
        res.check(f"slope[{q}]", rep.slopes[q] >= lim, rep.slopes[q], lim)
    return res


def cmd_adjoint(cfg: ExperimentConfig) -> Result:
    s = cfg.section("adjoint")
    coeffs = build_model(cfg.section("model"))
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    u = _control(cfg, lat.grid, coeffs)
    opt = solve_lattice(coeffs, u, lat, cfg.solver).solution
    spec = SpikeSpec(s["tau"], s["eps"], s["v"])
    tol = s["tol_factor"] * cfg.solver.picard_tol
    res = Result(["convention", "lhs", "rhs", "residual", "accepted"])
    try:
        chosen, reports = select_convention(coeffs, opt, u, spec, lat, cfg.solver, s["tol_factor"])
    except RuntimeError:
        chosen, reports = None, {}
    for name, r in reports.items():
        res.rows.append([name, r.lhs, r.rhs, r.residual, r.residual < tol])
    res.info["selected"] = chosen
    res.check("some_convention_accepted", chosen is not None, chosen)
    if reports:
        res.check("derived_duality", reports["derived"].residual < tol, reports["derived"].residual, tol)
    return res


def cmd_smp(cfg: ExperimentConfig) -> Result:
    s = cfg.section("smp")
    coeffs = build_model(cfg.section("model"))
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    u = _control(cfg, lat.grid, coeffs)
    opt = solve_lattice(coeffs, u, lat, cfg.solver).solution
    adj = solve_adjoint(coeffs, opt, lat, cfg.solver, u)
    rep = check_smp(coeffs, opt, u, adj, s["v_grid"], lattice=lat)
    res = Result(["v", "min_gap", "max_gap"])
    for v in s["v_grid"]:
        res.rows.append([float(v), rep.gaps[float(v)], rep.gaps_max[float(v)]])
    res.info["argmin"] = {"node": rep.argmin[0], "atom": rep.argmin[1], "v": rep.argmin[2]}
    res.check("min_gap", rep.min_gap >= -s["tol"], rep.min_gap, -s["tol"])
    return res


def cmd_game(cfg: ExperimentConfig) -> Result:
    try:
        spec = GameSpec.from_dict({**cfg.section("game"), "T": cfg.T})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[game]: {e}") from e
    lat = build_lattice(make_grid(cfg.T, cfg.N))
    cand = solve_game(spec, lat, cfg.solver)
    noise = sample_noise(lat.grid, 1, 1, int(cfg.section("nash")["paths"]), cfg.seed, kind="rademacher")
    rep = verify_nash(spec, cand, None, noise, cfg.solver)
    res = Result(["player", "deviation", "diff", "stderr", "diff_exact",
                  "first_order", "first_order_stderr", "first_order_exact", "cancellation"])
    for r in rep.rows:
        res.rows.append([r.player, r.name, r.diff, r.stderr, r.exact, r.first_order,
                         r.first_order_se, r.first_order_exact, r.cancellation])
        res.check(f"nash[{r.player},{r.name}]", r.diff >= -3 * r.stderr, r.diff, -3 * r.stderr)
        res.check(f"first_order[{r.player},{r.name}]",
                  abs(r.first_order) <= 3 * r.first_order_se + 1e-12, r.first_order, 3 * r.first_order_se)
    dY, dH = cand.aggregation_defect()
    res.check("aggregation", max(dY, dH) < 10 * cfg.solver.picard_tol, max(dY, dH), 10 * cfg.solver.picard_tol)
    res.info.update(u1_0=float(cand.u1[0].mean()), u2_0=float(cand.u2[0].mean()), variant=spec.variant)
    return res


def cmd_spde(cfg: ExperimentConfig) -> Result:
    s, g = cfg.section("spde"), cfg.section("u_grid")
    model = build_spde(s, cfg.T)
    solver = SolverConfig(**{**asdict(cfg.solver), "mc_paths": int(g["paths"])})
    rows = u_grid(model, s["control"], g["ts"], g["xs"], solver, dt=g["dt"])
    fd = None
    if model.g_zero:
        fd = fd_comparator(model, s["control"], g["xs"], g["ts"], level=int(g["fd_level"]))
    res = Result(["t", "x", "u_mc", "stderr", "u_fd", "tolerance"])
    worst = 0.0
    for r in rows:
        ref = fd.at(r.t, r.x) if fd is not None else float("nan")
        tol = max(3 * r.stderr, g["rel_tol"] * abs(ref)) if fd is not None else float("nan")
        if fd is not None:
            worst = max(worst, abs(r.mean - ref) / tol)
        res.rows.append([r.t, r.x, r.mean, r.stderr, ref, tol])
    if fd is not None:
        res.check("mc_vs_fd", worst <= 1.0, worst, 1.0)
        res.info["fd"] = {"dx": fd.dx, "dt": fd.dt, "steps": fd.steps}
    return res


def cmd_tree(cfg: ExperimentConfig) -> Result:
    s = cfg.section("tree")
    cases = derived_cases()
    unknown = set(s["cases"]) - set(cases)
    if unknown:
        raise ConfigError(f"unknown cases {sorted(unknown)}")
    res = Result(["case", "lattice", "mc", "stderr", "z_score"])
    for name in s["cases"]:
        model, control, x = cases[name]
        r = mc_vs_lattice(model, control, x, int(s["N"]), int(s["paths"]), cfg.seed, cfg.solver)
        res.rows.append([name, r.lattice, r.mc, r.stderr, (r.mc - r.lattice) / r.stderr])
        res.check(f"within_3se[{name}]", r.passed, r.mc - r.lattice, 3 * r.stderr)
    return res


HANDLERS = {
    "ito-check": cmd_ito, "assumptions": cmd_assumptions, "solve": cmd_solve,
    "verify-example11": cmd_example11, "spike-orders": cmd_spike, "adjoint-check": cmd_adjoint,
    "smp-check": cmd_smp, "game-nash": cmd_game, "spde-grid": cmd_spde, "tree-vs-mc": cmd_tree,
}


def run(command: str, config: str | None = None, seed: int | None = None, out: str | None = None,
        quiet: bool = False) -> int:
    try:
        cfg = load_config(command, config, seed, out)
        res = HANDLERS[command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    write_outputs(cfg, res)
    if not quiet:
        for c in res.checks:
            print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}  value={c['value']}")
        print(f"{command}: {'pass' if res.passed else 'FAIL'} -> {cfg.out}")
    return 0 if res.passed else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fbdsde", description=__doc__.splitlines()[0])
    ap.add_argument("command", help=" | ".join(COMMANDS))
    ap.add_argument("--config", help="TOML experiment config")
    ap.add_argument("--seed", type=int, help="overrides the config seed")
    ap.add_argument("--out", help="output directory (default results/<command>)")
    ap.add_argument("--quiet", action="store_true")
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    if args.command not in COMMANDS:
        print(f"error: unknown command {args.command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    return run(args.command, args.config, args.seed, args.out, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
