"""Quasilinear SPDEs through their partially coupled representation.

    u(t, x) = h(x) + int_t^T [L u + f(s, x, u, u_x sigma, v)] ds
                   + int_t^T g(s, x, u, u_x sigma) dB^_s,
    L phi = 1/2 sigma^2 phi'' + b(x, v) phi'

is represented by u(t, x) = Y_t^{t,x} where

    X_s = x + int_t^s b(X, v) dr + int_t^s sigma(X) dW_r,
    Y_s = h(X_T) + int_s^T f dr + int_s^T g dB^_r - int_s^T Z dW_r.

Only the representation is computed; the finite-difference comparator is
there for the g = 0 reduction, where the equation is a deterministic PDE.
Everything is scalar.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .model import CoefficientSet, ControlDomain, ControlPath
from .noise import Lattice, NoiseBundle, build_lattice, make_grid, sample_noise
from .smp import SmpReport, check_smp, solve_adjoint
from .solver import (PartiallyCoupledSystem, SolverConfig, fmt17, solve_lattice,
                     solve_partial_lattice, solve_partially_coupled_mc, walsh_basis)


def _zero(*args):
    return np.zeros(np.shape(args[1]))


@dataclass(frozen=True)
class A2Report:
    alpha_needed: float   # max |g(y, z1) - g(y, z2)|^2 / |z1 - z2|^2 over probes
    c_needed: float       # smallest c with |dg|^2 <= c|dy|^2 + alpha|dz|^2 on the probes
    alpha: float
    passed: bool


@dataclass(frozen=True)
class SpdeModel:
    """Scalar coefficients with their first derivatives.

    b(x, v), sigma(x), f(t, x, y, z, v), g(t, x, y, z), h(x); running cost
    l(t, x, y, z, v) with gradient (l_x, l_y, l_z) as an (n, 3) array;
    gamma(Y) the cost on u(0, x).  ``alpha`` is the z-contraction constant of
    g and must lie below 1.
    """

    b: Callable
    b_x: Callable
    sigma: Callable
    sigma_x: Callable
    f: Callable
    f_x: Callable
    f_y: Callable
    f_z: Callable
    g: Callable
    g_x: Callable
    g_y: Callable
    g_z: Callable
    h: Callable
    h_x: Callable
    running: Callable = _zero
    running_jac: Callable | None = None
    gamma: Callable = lambda Y: np.zeros(np.shape(Y))
    gamma_y: Callable = lambda Y: np.zeros(np.shape(Y))
    T: float = 1.0
    alpha: float = 0.5
    c: float | None = None
    name: str = "spde"
    g_zero: bool = False
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        if self.check:
            rep = check_a2(self)
            if not rep.passed:
                raise ValueError(f"(A2) fails: z-ratio {rep.alpha_needed:.4g} against alpha {self.alpha:.4g}, "
                                 f"needed c {rep.c_needed:.4g}")


def check_a2(model: SpdeModel, probes: int = 4000, seed: int = 7, scale: float = 3.0) -> A2Report:
    """Probe the Lipschitz split of g: alpha < 1 on the z-channel and a finite c."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, model.T, probes)
    x, y1, y2, z1, z2 = (rng.uniform(-scale, scale, probes) for _ in range(5))
    g = model.g
    dz = z1 - z2
    pure = (g(t, x, y1, z1) - g(t, x, y1, z2)) ** 2 / np.maximum(dz ** 2, 1e-300)
    alpha_needed = float(np.max(pure))
    dg = (g(t, x, y1, z1) - g(t, x, y2, z2)) ** 2
    dy = (y1 - y2) ** 2
    c_needed = float(max(0.0, np.max((dg - model.alpha * dz ** 2) / np.maximum(dy, 1e-300))))
    ok = model.alpha < 1 and alpha_needed <= model.alpha + 1e-12 and np.isfinite(c_needed)
    if model.c is not None:
        ok = ok and c_needed <= model.c * (1 + 1e-9)
    return A2Report(alpha_needed, c_needed, model.alpha, bool(ok))


def _affine(c0, cx=0.0, cy=0.0, cz=0.0):
    return lambda t, x, y, z, *v: c0 + cx * np.asarray(x, dtype=float) + cy * np.asarray(y, dtype=float) \
        + cz * np.asarray(z, dtype=float) + 0 * np.asarray(t, dtype=float)


def _const(c):
    return lambda *args: np.full(np.broadcast(*[np.asarray(a, dtype=float) for a in args]).shape, float(c))


def polynomial_spde(*, b=(0.0, 0.0, 0.0), sigma=(1.0, 0.0), f=None, g=None, h=(0.0, 0.0, 0.0),
                    l=None, gamma=(0.0, 0.0), T: float = 1.0, alpha: float | None = None,
                    name: str = "spde") -> SpdeModel:
    """Model with low-order polynomial coefficients.

    b = b0 + bx x + bv v;  sigma = s0 + sx x;
    f = c + x*fx + y*fy + z*fz + v*fv + v^2*fvv  (dict keys const, x, y, z, v, vv);
    g = c + x*gx + y*gy + z*gz  (dict keys const, x, y, z);
    h = h0 + h1 x + h2 x^2;
    l = 1/2 (lx x^2 + ly y^2 + lz z^2 + lv v^2)  (dict keys x, y, z, v);
    gamma(Y) = a/2 Y^2 + b Y.
    ``alpha`` defaults to the midpoint between gz^2 and 1.
    """
    f = {**dict(const=0.0, x=0.0, y=0.0, z=0.0, v=0.0, vv=0.0), **(f or {})}
    g = {**dict(const=0.0, x=0.0, y=0.0, z=0.0), **(g or {})}
    l = {**dict(x=0.0, y=0.0, z=0.0, v=0.0), **(l or {})}
    for d, keys in ((f, 6), (g, 4), (l, 4)):
        if len(d) != keys:
            raise ValueError(f"unknown coefficient keys in {sorted(d)}")
    b0, bx, bv = (float(c) for c in b)
    s0, sx = (float(c) for c in sigma)
    h0, h1, h2 = (float(c) for c in h)
    ga, gb = (float(c) for c in gamma)
    gz2 = g["z"] ** 2
    if gz2 >= 1:
        raise ValueError(f"g_z^2 = {gz2:g} violates alpha < 1")
    a = 0.5 * (1 + gz2) if alpha is None else alpha

    def fv(t, x, y, z, v):
        v = np.asarray(v, dtype=float)
        return _affine(f["const"], f["x"], f["y"], f["z"])(t, x, y, z) + f["v"] * v + f["vv"] * v ** 2

    def run(t, x, y, z, v):
        x, y, z, v = (np.asarray(q, dtype=float) for q in (x, y, z, v))
        return 0.5 * (l["x"] * x ** 2 + l["y"] * y ** 2 + l["z"] * z ** 2 + l["v"] * v ** 2)

    def run_jac(t, x, y, z, v):
        x, y, z = (np.asarray(q, dtype=float) for q in (x, y, z))
        return np.stack(np.broadcast_arrays(l["x"] * x, l["y"] * y, l["z"] * z), axis=-1)

    return SpdeModel(
        b=lambda x, v: b0 + bx * np.asarray(x, dtype=float) + bv * np.asarray(v, dtype=float),
        b_x=lambda x, v: _const(bx)(x, v),
        sigma=lambda x: s0 + sx * np.asarray(x, dtype=float),
        sigma_x=lambda x: _const(sx)(x),
        f=fv, f_x=_const(f["x"]), f_y=_const(f["y"]), f_z=_const(f["z"]),
        g=_affine(g["const"], g["x"], g["y"], g["z"]),
        g_x=_const(g["x"]), g_y=_const(g["y"]), g_z=_const(g["z"]),
        h=lambda x: h0 + h1 * np.asarray(x, dtype=float) + h2 * np.asarray(x, dtype=float) ** 2,
        h_x=lambda x: h1 + 2 * h2 * np.asarray(x, dtype=float),
        running=run, running_jac=run_jac,
        gamma=lambda Y: 0.5 * ga * np.asarray(Y, dtype=float) ** 2 + gb * np.asarray(Y, dtype=float),
        gamma_y=lambda Y: ga * np.asarray(Y, dtype=float) + gb,
        T=float(T), alpha=float(a), name=name,
        g_zero=all(g[k] == 0 for k in g),
    )


def lq_spde(T: float = 1.0) -> SpdeModel:
    """b = v, sigma = 1, f = g = h = 0, l = v^2 / 2, gamma = 0: the optimum is v = 0."""
    return polynomial_spde(b=(0.0, 0.0, 1.0), l={"v": 1.0}, T=T, name="lq")


# ---------------------------------------------------------------------------
# representation


def spde_to_fbdsde(model: SpdeModel, t: float, x: float) -> PartiallyCoupledSystem:
    """Forward SDE from (t, x) and the backward equation with terminal h(X_T)."""
    if not 0 <= t < model.T:
        raise ValueError(f"need 0 <= t < T, got t={t}")
    return PartiallyCoupledSystem(
        b=lambda s, X, v: model.b(X, v),
        sigma=lambda s, X, v: model.sigma(X),
        f=lambda s, X, Y, Z, v: model.f(s, X, Y, Z, v),
        g=lambda s, X, Y, Z, v: model.g(s, X, Y, Z),
        terminal=model.h, x=float(x), T=model.T, t0=float(t))


def spde_coefficients(model: SpdeModel, x0: float, domain: ControlDomain = ControlDomain()) -> CoefficientSet:
    """The same system in the generic coefficient layout, zeta = (X, Y, z, Z)
    with z the (identically zero) dB-integrand of X."""

    def jac4(*parts):
        return np.stack(np.broadcast_arrays(*parts), axis=-1)

    def n0(y):
        return np.zeros(np.shape(y))

    return CoefficientSet(
        d=1, l=1,
        f=lambda t, y, Y, z, Z, v: np.broadcast_to(model.b(y, v), np.shape(y)) + 0.0,
        g=lambda t, y, Y, z, Z, v: np.broadcast_to(model.sigma(y), np.shape(y))[:, None] + 0.0,
        F=lambda t, y, Y, z, Z, v: np.broadcast_to(model.f(t, y, Y, Z[:, 0], v), np.shape(y)) + 0.0,
        G=lambda t, y, Y, z, Z, v: np.broadcast_to(model.g(t, y, Y, Z[:, 0]), np.shape(y))[:, None] + 0.0,
        h=model.h,
        running=lambda t, y, Y, z, Z, v: np.broadcast_to(model.running(t, y, Y, Z[:, 0], v), np.shape(y)) + 0.0,
        terminal=n0,
        initial=model.gamma,
        f_jac=lambda t, y, Y, z, Z, v: jac4(model.b_x(y, v), n0(y), n0(y), n0(y)),
        g_jac=lambda t, y, Y, z, Z, v: jac4(model.sigma_x(y), n0(y), n0(y), n0(y))[:, None, :],
        F_jac=lambda t, y, Y, z, Z, v: jac4(model.f_x(t, y, Y, Z[:, 0], v), model.f_y(t, y, Y, Z[:, 0], v),
                                            n0(y), model.f_z(t, y, Y, Z[:, 0], v)),
        G_jac=lambda t, y, Y, z, Z, v: jac4(model.g_x(t, y, Y, Z[:, 0]), model.g_y(t, y, Y, Z[:, 0]),
                                            n0(y), model.g_z(t, y, Y, Z[:, 0]))[:, None, :],
        running_jac=lambda t, y, Y, z, Z, v: _running_jac4(model, t, y, Y, Z[:, 0], v),
        h_y=model.h_x, terminal_y=n0, initial_Y=model.gamma_y,
        x=float(x0), domain=domain, name=model.name,
    )


def _running_jac4(model, t, x, y, z, v):
    if model.running_jac is None:
        raise ValueError("model has no running-cost gradient")
    j = np.asarray(model.running_jac(t, x, y, z, v), dtype=float).reshape(-1, 3)
    j = np.broadcast_to(j, (np.shape(x)[0], 3))
    return np.column_stack([j[:, 0], j[:, 1], np.zeros(j.shape[0]), j[:, 2]])


@dataclass(frozen=True)
class UEstimate:
    t: float
    x: float
    mean: float
    stderr: float
    field: np.ndarray | None = None  # per-path Y_t, F^B_{t,T}-measurable


def evaluate_u(model: SpdeModel, control, t: float, x: float, cfg: SolverConfig = SolverConfig(),
               noise: NoiseBundle | None = None, steps: int | None = None,
               keep_field: bool = False) -> UEstimate:
    """Monte Carlo estimate of u(t, x) = Y_t^{t,x}.

    Without ``noise`` a Gaussian bundle of cfg.mc_paths paths is drawn with
    cfg.seed on [t, T] split into ``steps`` (default: dt close to 0.05).
    """
    if not t < model.T:
        raise ValueError(f"need t < T, got t={t}")
    if noise is None:
        n = steps or max(2, int(round((model.T - t) / 0.05)))
        noise = sample_noise(make_grid(model.T - t, n), 1, 1, cfg.mc_paths, cfg.seed)
    if abs(noise.grid.T - (model.T - t)) > 1e-12:
        raise ValueError("noise horizon must equal T - t")
    rep = solve_partially_coupled_mc(spde_to_fbdsde(model, t, x), control, noise, cfg)
    Y0 = rep.solution.Y[0]
    return UEstimate(float(t), float(x), rep.estimates["Y0_mean"], rep.stderr["Y0_mean"],
                     Y0.copy() if keep_field else None)


def u_grid(model: SpdeModel, control, ts, xs, cfg: SolverConfig = SolverConfig(),
           dt: float = 0.05) -> list[UEstimate]:
    """evaluate_u on the product grid; every point draws from its own seed."""
    out = []
    for i, t in enumerate(ts):
        n = max(2, int(round((model.T - t) / dt)))
        for j, x in enumerate(xs):
            c = SolverConfig(**{**cfg.__dict__, "seed": cfg.seed + 1000 * i + j})
            out.append(evaluate_u(model, control, t, x, c, steps=n))
    return out


# ---------------------------------------------------------------------------
# finite differences for the g = 0 reduction


@dataclass(frozen=True)
class FdTable:
    ts: np.ndarray
    xs: np.ndarray
    u: np.ndarray      # (len(ts), len(xs))
    dx: float
    dt: float
    steps: int

    def at(self, t: float, x: float) -> float:
        i = int(np.argmin(np.abs(self.ts - t)))
        j = int(np.argmin(np.abs(self.xs - x)))
        return float(self.u[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "u"])
            for i, t in enumerate(self.ts):
                for j, x in enumerate(self.xs):
                    w.writerow([fmt17(t), fmt17(x), fmt17(self.u[i, j])])


def _is_g_zero(model: SpdeModel, probes: int = 256) -> bool:
    if model.g_zero:
        return True
    rng = np.random.default_rng(3)
    a = rng.uniform(-3, 3, (4, probes))
    t = rng.uniform(0, model.T, probes)
    return bool(np.all(model.g(t, a[0], a[1], a[2]) == 0))


def fd_comparator(model: SpdeModel, control, xs, ts, level: int = 3, dx0: float = 0.2,
                  width: float | None = None, max_steps: int = 2_000_000) -> FdTable:
    """Explicit scheme for u_t + 1/2 sigma^2 u_xx + b u_x + f = 0, backward from h.

    Advection is upwinded, diffusion centred; the step obeys
    dt <= 0.9 dx^2 / (sigma^2 + |b| dx).  Boundary values come from cubic
    extrapolation of the interior, exact for data of degree <= 3.
    ``control`` is a constant or a function of time.
    """
    if not _is_g_zero(model):
        raise ValueError("finite differences need g = 0 (no backward noise)")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if xs.ndim != 1 or ts.ndim != 1:
        raise ValueError("only scalar x is supported")
    if np.any(ts < -1e-12) or np.any(ts > model.T + 1e-12):
        raise ValueError("output times must lie in [0, T]")
    vfn = control if callable(control) else (lambda s, c=float(control or 0.0): c)
    T = model.T
    probe = np.linspace(xs.min() - 5, xs.max() + 5, 201)
    smax = float(np.max(np.abs(model.sigma(probe))))
    bmax = float(max(np.max(np.abs(model.b(probe, vfn(s)))) for s in np.linspace(0, T, 5)))
    if width is None:
        width = 6 * smax * np.sqrt(T) + bmax * T + 1.0
    dx = dx0 / 2 ** level
    x = np.arange(xs.min() - width, xs.max() + width + dx / 2, dx)
    if x.size < 8:
        raise ValueError("spatial grid too small")
    sig = model.sigma(x) * np.ones_like(x)
    bound = np.max(sig ** 2 + np.abs(model.b(x, vfn(0.0))) * dx)
    dt_max = 0.9 * dx ** 2 / max(bound, 1e-300)
    steps = int(np.ceil(T / dt_max))
    if steps > max_steps:
        raise ValueError(f"CFL needs {steps} steps, above the limit {max_steps}")
    dt = T / steps
    u = model.h(x) * np.ones_like(x)
    snaps = {}
    order = np.argsort(-ts)
    want = [(i, ts[i]) for i in order]

    def record(s_hi, u_hi, s_lo, u_lo):
        while want and want[0][1] >= s_lo - 1e-12:
            i, t = want.pop(0)
            w = 0.0 if s_hi == s_lo else (s_hi - t) / (s_hi - s_lo)
            snaps[i] = (1 - w) * u_hi + w * u_lo
    record(T, u, T, u)
    s = T
    for _ in range(steps):
        v = vfn(s)
        b = model.b(x, v) * np.ones_like(x)
        ux_f = (u[2:] - u[1:-1]) / dx
        ux_b = (u[1:-1] - u[:-2]) / dx
        ux_c = (u[2:] - u[:-2]) / (2 * dx)
        uxx = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx ** 2
        bi = b[1:-1]
        adv = np.where(bi > 0, bi * ux_f, bi * ux_b)
        src = model.f(s, x[1:-1], u[1:-1], sig[1:-1] * ux_c, v)
        new = u.copy()
        new[1:-1] = u[1:-1] + dt * (0.5 * sig[1:-1] ** 2 * uxx + adv + src)
        new[0] = 4 * new[1] - 6 * new[2] + 4 * new[3] - new[4]
        new[-1] = 4 * new[-2] - 6 * new[-3] + 4 * new[-4] - new[-5]
        s_new = s - dt
        record(s, u, s_new, new)
        u, s = new, s_new
    record(s, u, -np.inf, u)
    out = np.empty((ts.size, xs.size))
    for i in range(ts.size):
        out[i] = CubicSpline(x, snaps[i])(xs)
    return FdTable(ts, xs, out, dx, dt, steps)


# ---------------------------------------------------------------------------
# lattice cross-checks and the maximum principle


def lattice_u(model: SpdeModel, control, x: float, lattice: Lattice,
              cfg: SolverConfig = SolverConfig()) -> float:
    """E[Y_0] of the representation on the lattice (t = 0, horizon = lattice.T)."""
    if abs(lattice.grid.T - model.T) > 1e-12:
        raise ValueError("lattice horizon must equal T")
    rep = solve_partial_lattice(spde_to_fbdsde(model, 0.0, x), control, lattice, cfg)
    return float(rep.estimates["Y0_mean"])


@dataclass(frozen=True)
class McLatticeRow:
    name: str
    lattice: float
    mc: float
    stderr: float

    @property
    def passed(self) -> bool:
        return abs(self.mc - self.lattice) <= 3 * self.stderr


def mc_vs_lattice(model: SpdeModel, control, x: float, N: int = 3, M: int = 100_000,
                  seed: int = 0, cfg: SolverConfig = SolverConfig()) -> McLatticeRow:
    """Regression on coin-flip paths with a basis complete for the lattice,
    against the exact lattice value of the same scheme."""
    lat = build_lattice(make_grid(model.T, N))
    exact = lattice_u(model, control, x, lat, cfg)
    noise = sample_noise(lat.grid, 1, 1, M, seed, kind="rademacher")
    rep = solve_partially_coupled_mc(spde_to_fbdsde(model, 0.0, x), control, noise, cfg,
                                     basis=walsh_basis(cfg.poly_degree))
    return McLatticeRow(model.name, exact, rep.estimates["Y0_mean"], rep.stderr["Y0_mean"])


def derived_cases() -> dict:
    """Three representations with backward noise used for MC/lattice checks:
    name -> (model, control, x)."""
    return {
        "kappa_y": (polynomial_spde(g={"y": 0.3}, h=(0.0, 0.0, 1.0), name="kappa_y"), 0.0, 0.5),
        "coupled": (polynomial_spde(b=(0.3, -0.2, 0.0), sigma=(0.8, 0.1), f={"y": -0.5, "z": 0.2, "x": 0.3},
                                    g={"y": 0.2, "z": 0.5, "const": 0.1}, h=(0.5, 1.0, 0.0),
                                    name="coupled"), 0.0, -0.3),
        "controlled": (polynomial_spde(b=(0.0, 0.0, 1.0), f={"y": -0.5, "vv": 0.5}, g={"y": 0.2},
                                       h=(0.0, 0.0, 1.0), l={"v": 1.0}, name="controlled"), 0.5, 0.0),
    }


def check_smp_spde(model: SpdeModel, control: ControlPath, lattice: Lattice, v_grid, x0: float = 0.0,
                   cfg: SolverConfig = SolverConfig(), convention: str = "derived") -> SmpReport:
    """Gap report of the reduced Hamiltonian
    l - k g + q b - p f + h sigma along the lattice solution."""
    coeffs = spde_coefficients(model, x0, control.domain)
    sol = solve_lattice(coeffs, control, lattice, cfg).solution
    adj = solve_adjoint(coeffs, sol, lattice, cfg, control, convention)
    return check_smp(coeffs, sol, control, adj, v_grid, lattice=lattice)


def write_u_table(path, rows: list[UEstimate], fd: FdTable | None = None) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "u_mc", "stderr"] + (["u_fd"] if fd is not None else []))
        for r in rows:
            w.writerow([fmt17(r.t), fmt17(r.x), fmt17(r.mean), fmt17(r.stderr)]
                       + ([fmt17(fd.at(r.t, r.x))] if fd is not None else []))
