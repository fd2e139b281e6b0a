"""Coefficient data of the controlled FBDSDE, cost, Hamiltonian and probes.

State layout used throughout: zeta = (y, Y, z, Z) stacked into a vector of
length m = 2 + l + d with z in R^l (backward-noise channel of y) and Z in
R^d (forward-noise channel of Y).  Every coefficient map is vectorised over
a leading axis of n samples: y, Y and v are (n,), z is (n, l), Z is (n, d).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .noise import TimeGrid


def stack_state(y, Y, z, Z) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.shape[0]
    Y = np.broadcast_to(np.asarray(Y, dtype=float), (n,))
    z = np.asarray(z, dtype=float).reshape(n, -1)
    Z = np.asarray(Z, dtype=float).reshape(n, -1)
    return np.concatenate([y[:, None], Y[:, None], z, Z], axis=1)


def split_state(zeta: np.ndarray, l: int, d: int):
    return zeta[:, 0], zeta[:, 1], zeta[:, 2:2 + l], zeta[:, 2 + l:2 + l + d]


@dataclass(frozen=True)
class ControlDomain:
    """Either a closed interval [low, high] or a finite set of points."""

    low: float = -np.inf
    high: float = np.inf
    points: tuple[float, ...] | None = None

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        if self.points is not None:
            return bool(np.all(np.isin(v, np.asarray(self.points))))
        return bool(np.all((v >= self.low - 1e-12) & (v <= self.high + 1e-12)))

    def grid(self, n: int = 9) -> np.ndarray:
        if self.points is not None:
            return np.asarray(self.points, dtype=float)
        lo = self.low if np.isfinite(self.low) else -1.0
        hi = self.high if np.isfinite(self.high) else 1.0
        return np.linspace(lo, hi, n)


@dataclass(frozen=True)
class ControlPath:
    """Control values at the grid nodes.

    ``values`` is (N+1,) for a deterministic control or (N+1, n) for a field
    defined per atom / path.  Node N is only read by right-endpoint terms.
    """

    grid: TimeGrid
    values: np.ndarray
    domain: ControlDomain = ControlDomain()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.N + 1:
            raise ValueError(f"control needs {self.grid.N + 1} node values, got {v.shape[0]}")
        if not self.domain.contains(v):
            raise ValueError("control leaves its domain")
        object.__setattr__(self, "values", v)

    def at(self, k: int, n: int, idx=None) -> np.ndarray:
        """Values at node k for n samples; ``idx`` picks rows of a per-atom field."""
        v = self.values[k]
        if np.ndim(v) == 0:
            return np.broadcast_to(v, (n,))
        return v if idx is None else v[idx]

    @classmethod
    def constant(cls, grid: TimeGrid, c: float, domain: ControlDomain = ControlDomain()):
        return cls(grid, np.full(grid.N + 1, float(c)), domain)

    @classmethod
    def from_function(cls, grid: TimeGrid, fn: Callable[[float], float],
                      domain: ControlDomain = ControlDomain()):
        return cls(grid, np.array([fn(t) for t in grid.nodes], dtype=float), domain)


# (k, t, y, Y, z, Z) -> v, a closed-loop rule evaluated inside the sweeps
FeedbackRule = Callable[..., np.ndarray]


def control_at(control, k: int, t: float, y, Y, z, Z, idx=None) -> np.ndarray:
    n = y.shape[0]
    if isinstance(control, ControlPath):
        return control.at(k, n, idx)
    if callable(control):
        return np.broadcast_to(np.asarray(control(k, t, y, Y, z, Z), dtype=float), (n,))
    return np.broadcast_to(np.asarray(control, dtype=float), (n,))


Map = Callable[..., np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficients of the state system and the cost.

    Value maps take (t, y, Y, z, Z, v); the diffusion maps g (into R^d) and G
    (into R^l) accept v as well so that systems whose noise coefficients carry
    the control (the LQ example does) fit the same interface.  Jacobians are
    with respect to the stacked zeta = (y, Y, z, Z): f_jac, F_jac and l_jac
    return (n, m), g_jac (n, d, m), G_jac (n, l, m).
    """

    d: int
    l: int
    f: Map
    F: Map
    g: Map
    G: Map
    h: Callable[[np.ndarray], np.ndarray]
    running: Map
    terminal: Callable[[np.ndarray], np.ndarray]
    initial: Callable[[np.ndarray], np.ndarray]
    f_jac: Map
    F_jac: Map
    g_jac: Map
    G_jac: Map
    running_jac: Map
    h_y: Callable[[np.ndarray], np.ndarray]
    terminal_y: Callable[[np.ndarray], np.ndarray]
    initial_Y: Callable[[np.ndarray], np.ndarray]
    x: float = 0.0
    lipschitz: float = np.inf
    mu: float = 0.0
    bound: float = np.inf
    domain: ControlDomain = ControlDomain()
    name: str = "system"
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.check:
            check_derivatives(self)

    @property
    def m(self) -> int:
        return 2 + self.l + self.d

    def stacked_A(self, t, zeta: np.ndarray, v) -> np.ndarray:
        """A(t, zeta) = (-F, f, -G, g), paired with zeta = (y, Y, z, Z)."""
        y, Y, z, Z = split_state(zeta, self.l, self.d)
        return np.concatenate([
            -self.F(t, y, Y, z, Z, v)[:, None],
            self.f(t, y, Y, z, Z, v)[:, None],
            -self.G(t, y, Y, z, Z, v),
            self.g(t, y, Y, z, Z, v),
        ], axis=1)

    def stacked_A_jac(self, t, zeta: np.ndarray, v) -> np.ndarray:
        y, Y, z, Z = split_state(zeta, self.l, self.d)
        return np.concatenate([
            -self.F_jac(t, y, Y, z, Z, v)[:, None, :],
            self.f_jac(t, y, Y, z, Z, v)[:, None, :],
            -self.G_jac(t, y, Y, z, Z, v),
            self.g_jac(t, y, Y, z, Z, v),
        ], axis=1)


def _fd_jac(fn, t, zeta, v, l, d, step):
    cols = []
    for j in range(zeta.shape[1]):
        e = np.zeros_like(zeta)
        e[:, j] = step
        hi = fn(t, *split_state(zeta + e, l, d), v)
        lo = fn(t, *split_state(zeta - e, l, d), v)
        cols.append((hi - lo) / (2 * step))
    return np.stack(cols, axis=-1)


def check_derivatives(coeffs: CoefficientSet, probes: int = 16, seed: int = 12345,
                      step: float = 1e-4, rtol: float = 1e-5) -> float:
    """Compare analytic Jacobians with central differences at random probes.

    Returns the worst relative error; raises ValueError above ``rtol``.
    """
    rng = np.random.default_rng(seed)
    zeta = rng.standard_normal((probes, coeffs.m))
    v = coeffs.domain.grid(probes)[rng.integers(0, len(coeffs.domain.grid(probes)), probes)]
    t = float(rng.uniform(0, 1))
    l, d = coeffs.l, coeffs.d
    pairs = [
        ("f", coeffs.f, coeffs.f_jac), ("F", coeffs.F, coeffs.F_jac),
        ("g", coeffs.g, coeffs.g_jac), ("G", coeffs.G, coeffs.G_jac),
        ("l", coeffs.running, coeffs.running_jac),
    ]
    worst = 0.0
    for name, fn, jac in pairs:
        fd = _fd_jac(fn, t, zeta, v, l, d, step)
        an = jac(t, *split_state(zeta, l, d), v)
        err = np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an)))
        if err > rtol:
            raise ValueError(f"{coeffs.name}: Jacobian of {name} disagrees with "
                             f"finite differences (rel. err {err:.2e})")
        worst = max(worst, err)
    y = zeta[:, 0]
    Y = zeta[:, 1]
    for name, fn, der, arg in [("h", coeffs.h, coeffs.h_y, y),
                               ("Phi", coeffs.terminal, coeffs.terminal_y, y),
                               ("gamma", coeffs.initial, coeffs.initial_Y, Y)]:
        fd = (fn(arg + step) - fn(arg - step)) / (2 * step)
        an = der(arg)
        err = np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an)))
        if err > rtol:
            raise ValueError(f"{coeffs.name}: derivative of {name} disagrees with "
                             f"finite differences (rel. err {err:.2e})")
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# linear-quadratic builder


@dataclass(frozen=True)
class AffineMap:
    """phi(zeta, v) = (K0 + v K1) zeta + c0 + c1 v, with rows = output dims."""

    K0: np.ndarray
    K1: np.ndarray
    c0: np.ndarray
    c1: np.ndarray

    @classmethod
    def build(cls, rows: int, m: int, spec: dict | None) -> "AffineMap":
        spec = dict(spec or {})
        unknown = set(spec) - {"state", "state_v", "const", "v"}
        if unknown:
            raise ValueError(f"unknown affine-map keys {sorted(unknown)}")

        def mat(key):
            a = np.asarray(spec.get(key, np.zeros((rows, m))), dtype=float)
            return a.reshape(rows, m)

        def vec(key):
            return np.asarray(spec.get(key, np.zeros(rows)), dtype=float).reshape(rows)

        return cls(mat("state"), mat("state_v"), vec("const"), vec("v"))

    def value(self, zeta, v):
        return self.value_cols(list(zeta.T), v)

    def value_cols(self, cols, v):
        """Same as ``value`` on the columns of zeta; skips zero coefficients."""
        n = cols[0].shape[0]
        v = np.broadcast_to(np.asarray(v, dtype=float), (n,))
        out = np.empty((n, self.K0.shape[0]))
        for r in range(self.K0.shape[0]):
            acc = np.full(n, self.c0[r])
            if self.c1[r]:
                acc += self.c1[r] * v
            for j, col in enumerate(cols):
                if self.K0[r, j]:
                    acc += self.K0[r, j] * col
                if self.K1[r, j]:
                    acc += self.K1[r, j] * v * col
            out[:, r] = acc
        return out

    def jac(self, zeta, v):
        return self.jac_n(zeta.shape[0], v)

    def jac_n(self, n, v):
        """(n, rows, m); a read-only broadcast view when it does not vary."""
        if not self.K1.any():
            return np.broadcast_to(self.K0, (n,) + self.K0.shape)
        v = np.broadcast_to(np.asarray(v, dtype=float), (n,))
        if n and (v.strides == (0,) or np.all(v == v[0])):
            return np.broadcast_to(self.K0 + v[0] * self.K1, (n,) + self.K0.shape)
        return self.K0[None] + v[:, None, None] * self.K1[None]


def state_columns(y, Y, z, Z) -> list[np.ndarray]:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n = y.shape[0]
    Y = np.broadcast_to(np.asarray(Y, dtype=float), (n,))
    z = np.asarray(z, dtype=float).reshape(n, -1)
    Z = np.asarray(Z, dtype=float).reshape(n, -1)
    return [y, Y] + [z[:, i] for i in range(z.shape[1])] + [Z[:, i] for i in range(Z.shape[1])]


def linear_quadratic(*, d: int = 1, l: int = 1, f=None, F=None, g=None, G=None,
                     h: Sequence[float] = (0.0, 0.0), x: float = 0.0,
                     Q=None, r: float = 0.0, s=None, s_v: float = 0.0,
                     terminal: Sequence[float] = (0.0, 0.0),
                     initial: Sequence[float] = (0.0, 0.0),
                     domain: ControlDomain = ControlDomain(), name: str = "lq",
                     lipschitz: float = np.inf, mu: float = 0.0,
                     bound: float = np.inf) -> CoefficientSet:
    """Coefficients affine in zeta (with control-modulated slopes) and a
    quadratic cost.

    f, F: dicts with keys state (m,), state_v (m,), const, v.
    g (d rows), G (l rows): same keys with leading output dimension.
    h = (slope, offset); terminal Phi(y) = a/2 y^2 + b y given as (a, b);
    initial gamma(Y) likewise.  Running cost 1/2 zeta'Q zeta + r/2 v^2 +
    s.zeta + s_v v.
    """
    m = 2 + l + d
    maps = {
        "f": AffineMap.build(1, m, f), "F": AffineMap.build(1, m, F),
        "g": AffineMap.build(d, m, g), "G": AffineMap.build(l, m, G),
    }
    Qm = np.zeros((m, m)) if Q is None else np.asarray(Q, dtype=float).reshape(m, m)
    Qm = 0.5 * (Qm + Qm.T)
    sv = np.zeros(m) if s is None else np.asarray(s, dtype=float).reshape(m)
    h1, h0 = (float(c) for c in h)
    pa, pb = (float(c) for c in terminal)
    ga, gb = (float(c) for c in initial)

    def value(key, scalar):
        amap = maps[key]

        def fn(t, y, Y, z, Z, v):
            out = amap.value_cols(state_columns(y, Y, z, Z), v)
            return out[:, 0] if scalar else out
        return fn

    def jac(key, scalar):
        amap = maps[key]

        def fn(t, y, Y, z, Z, v):
            out = amap.jac_n(np.atleast_1d(y).shape[0], v)
            return out[:, 0, :] if scalar else out
        return fn

    def running(t, y, Y, z, Z, v):
        cols = state_columns(y, Y, z, Z)
        v = np.broadcast_to(np.asarray(v, dtype=float), cols[0].shape)
        out = 0.5 * r * v ** 2 + s_v * v
        for i, ci in enumerate(cols):
            if sv[i]:
                out = out + sv[i] * ci
            for j in range(i, m):
                if Qm[i, j]:
                    out = out + (0.5 if i == j else 1.0) * Qm[i, j] * ci * cols[j]
        return out

    def running_jac(t, y, Y, z, Z, v):
        zeta = stack_state(y, Y, z, Z)
        return zeta @ Qm + sv

    return CoefficientSet(
        d=d, l=l,
        f=value("f", True), F=value("F", True), g=value("g", False), G=value("G", False),
        h=lambda y: h1 * np.asarray(y, dtype=float) + h0,
        running=running,
        terminal=lambda y: 0.5 * pa * np.asarray(y, dtype=float) ** 2 + pb * np.asarray(y, dtype=float),
        initial=lambda Y: 0.5 * ga * np.asarray(Y, dtype=float) ** 2 + gb * np.asarray(Y, dtype=float),
        f_jac=jac("f", True), F_jac=jac("F", True), g_jac=jac("g", False), G_jac=jac("G", False),
        running_jac=running_jac,
        h_y=lambda y: np.full(np.shape(y), h1),
        terminal_y=lambda y: pa * np.asarray(y, dtype=float) + pb,
        initial_Y=lambda Y: ga * np.asarray(Y, dtype=float) + gb,
        x=float(x), lipschitz=lipschitz, mu=mu, bound=bound, domain=domain, name=name,
    )


def zero_system(d: int = 1, l: int = 1, x: float = 0.0) -> CoefficientSet:
    return linear_quadratic(d=d, l=l, x=x, name="zero")


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class StateQuadruple:
    """(y, Y, z, Z) on the grid: y, Y are (N+1, n); z (N+1, n, l); Z (N+1, n, d).

    z[0] and Z[N] are the zero extensions of the integrands at the ends.
    """

    grid: TimeGrid
    y: np.ndarray
    Y: np.ndarray
    z: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        n1 = self.grid.N + 1
        for name in ("y", "Y", "z", "Z"):
            a = getattr(self, name)
            if a.shape[0] != n1:
                raise ValueError(f"{name} has {a.shape[0]} nodes, grid has {n1}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def n(self) -> int:
        return self.y.shape[1]

    def node(self, k: int):
        return self.y[k], self.Y[k], self.z[k], self.Z[k]

    def __sub__(self, other: "StateQuadruple") -> "StateQuadruple":
        return StateQuadruple(self.grid, self.y - other.y, self.Y - other.Y,
                              self.z - other.z, self.Z - other.Z)

    def scaled(self, c: float) -> "StateQuadruple":
        return StateQuadruple(self.grid, c * self.y, c * self.Y, c * self.z, c * self.Z)

    @classmethod
    def zeros(cls, grid: TimeGrid, n: int, d: int = 1, l: int = 1) -> "StateQuadruple":
        n1 = grid.N + 1
        return cls(grid, np.zeros((n1, n)), np.zeros((n1, n)),
                   np.zeros((n1, n, l)), np.zeros((n1, n, d)))


@dataclass(frozen=True)
class AdjointQuadruple:
    """(p, q, k, h): p, q are (N+1, n); k (N+1, n, l); h (N+1, n, d)."""

    grid: TimeGrid
    p: np.ndarray
    q: np.ndarray
    k: np.ndarray
    h: np.ndarray

    def node(self, j: int):
        return self.p[j], self.q[j], self.k[j], self.h[j]

    def as_state(self) -> StateQuadruple:
        return StateQuadruple(self.grid, self.p, self.q, self.k, self.h)


# ---------------------------------------------------------------------------
# Hamiltonian and cost


def hamiltonian(coeffs: CoefficientSet, t: float, state, v, adjoint) -> np.ndarray:
    """H = q f - p F - <k, G> + <h, g> + l, vectorised over samples."""
    y, Y, z, Z = (np.atleast_1d(np.asarray(a, dtype=float)) for a in state)
    n = y.shape[0]
    z = z.reshape(n, coeffs.l)
    Z = Z.reshape(n, coeffs.d)
    p, q, k, h = (np.asarray(a, dtype=float) for a in adjoint)
    p = np.broadcast_to(p, (n,))
    q = np.broadcast_to(q, (n,))
    k = np.broadcast_to(k.reshape(-1, coeffs.l) if k.ndim else k, (n, coeffs.l))
    h = np.broadcast_to(h.reshape(-1, coeffs.d) if h.ndim else h, (n, coeffs.d))
    v = np.broadcast_to(np.asarray(v, dtype=float), (n,))
    return (q * coeffs.f(t, y, Y, z, Z, v) - p * coeffs.F(t, y, Y, z, Z, v)
            - np.sum(k * coeffs.G(t, y, Y, z, Z, v), axis=1)
            + np.sum(h * coeffs.g(t, y, Y, z, Z, v), axis=1)
            + coeffs.running(t, y, Y, z, Z, v))


@dataclass(frozen=True)
class CostEstimate:
    per_path: np.ndarray
    mean: float
    stderr: float


def cost(coeffs: CoefficientSet, traj: StateQuadruple, control,
         weights: np.ndarray | None = None) -> CostEstimate:
    """Left-Riemann running cost + Phi(y_T) + gamma(Y_0), per path.

    With ``weights`` (lattice atom weights) the mean is the exact weighted
    expectation and the reported stderr is 0.
    """
    grid = traj.grid
    if isinstance(control, ControlPath) and control.grid != grid:
        raise ValueError("control and trajectory live on different grids")
    dt = grid.dt
    total = np.zeros(traj.n)
    for k in range(grid.N):
        y, Y, z, Z = traj.node(k)
        v = control_at(control, k, grid.nodes[k], y, Y, z, Z)
        total += coeffs.running(grid.nodes[k], y, Y, z, Z, v) * dt
    total += coeffs.terminal(traj.y[grid.N]) + coeffs.initial(traj.Y[0])
    if weights is not None:
        return CostEstimate(total, float(np.dot(weights, total)), 0.0)
    se = float(total.std(ddof=1) / np.sqrt(total.size)) if total.size > 1 else 0.0
    return CostEstimate(total, float(total.mean()), se)


# ---------------------------------------------------------------------------
# assumption probes


@dataclass(frozen=True)
class MonotoneReport:
    variant: str
    mu: float
    worst_margin: float
    h_margin: float
    best_mu: float
    eig_min: float
    eig_max: float
    status: str

    @property
    def passed(self) -> bool:
        return self.status in ("pass", "degenerate")


def check_monotone(coeffs: CoefficientSet, probes: int = 10_000, seed: int = 0,
                   variant: str = "H3", mu: float | None = None,
                   t: float = 0.0, v: float = 0.0, degenerate_tol: float = 1e-8) -> MonotoneReport:
    """Worst normalised violation of the one-sided monotonicity bound.

    H3:  <A(z)-A(zb), z-zb> + mu|z-zb|^2 <= 0 and <h(y)-h(yb), y-yb> >= 0.
    H3': mu|z-zb|^2 - <A(z)-A(zb), z-zb> <= 0 and <h(y)-h(yb), y-yb> <= 0.
    Margins are divided by |z-zb|^2 (resp. |y-yb|^2); <= 0 means pass.
    The symmetric part of dA/dzeta at the probes gives eigenvalue bounds;
    when the best achievable mu is 0 the status is "degenerate".
    """
    if variant not in ("H3", "H3'"):
        raise ValueError(f"unknown variant {variant!r}")
    mu = coeffs.mu if mu is None else mu
    rng = np.random.default_rng(seed)
    m = coeffs.m
    a = rng.standard_normal((probes, m))
    b = rng.standard_normal((probes, m))
    vv = np.full(probes, v)
    dz = a - b
    dA = coeffs.stacked_A(t, a, vv) - coeffs.stacked_A(t, b, vv)
    n2 = np.sum(dz ** 2, axis=1)
    ratio = np.sum(dA * dz, axis=1) / n2
    dy = dz[:, 0]
    dh = coeffs.h(a[:, 0]) - coeffs.h(b[:, 0])
    hratio = dh * dy / dy ** 2
    if variant == "H3":
        margin = float(np.max(ratio + mu))
        h_margin = float(np.max(-hratio))
        best = float(-np.max(ratio))
    else:
        margin = float(np.max(mu - ratio))
        h_margin = float(np.max(hratio))
        best = float(np.min(ratio))
    J = coeffs.stacked_A_jac(t, a[:64], vv[:64])
    sym = 0.5 * (J + np.swapaxes(J, 1, 2))
    eig = np.linalg.eigvalsh(sym)
    eig_min, eig_max = float(eig.min()), float(eig.max())
    if variant == "H3":
        bound_mu = -eig_max
    else:
        bound_mu = eig_min
    if h_margin > 1e-12 or margin > 1e-12:
        status = "fail"
    elif abs(bound_mu) <= degenerate_tol:
        status = "degenerate"
    else:
        status = "pass"
    return MonotoneReport(variant, mu, margin, h_margin, best, eig_min, eig_max, status)


@dataclass(frozen=True)
class LipschitzReport:
    lipschitz_emp: float
    lipschitz_declared: float
    bound_emp: float
    bound_declared: float

    @property
    def lipschitz_ratio(self) -> float:
        if self.lipschitz_declared == 0:
            return 0.0 if self.lipschitz_emp == 0 else np.inf
        return self.lipschitz_emp / self.lipschitz_declared

    @property
    def bound_ratio(self) -> float:
        if self.bound_declared == 0:
            return 0.0 if self.bound_emp == 0 else np.inf
        return self.bound_emp / self.bound_declared

    @property
    def passed(self) -> bool:
        return self.lipschitz_ratio <= 1 + 1e-9 and self.bound_ratio <= 1 + 1e-9


def check_lipschitz_bounds(coeffs: CoefficientSet, probes: int = 10_000,
                           seed: int = 0, t: float = 0.0, v: float = 0.0) -> LipschitzReport:
    """Empirical Lipschitz constant of (A, h) and the largest derivative
    magnitude of the value maps at Gaussian probes."""
    rng = np.random.default_rng(seed)
    m = coeffs.m
    a = rng.standard_normal((probes, m))
    b = rng.standard_normal((probes, m))
    vv = np.full(probes, v)
    dA = np.linalg.norm(coeffs.stacked_A(t, a, vv) - coeffs.stacked_A(t, b, vv), axis=1)
    dz = np.linalg.norm(a - b, axis=1)
    dh = np.abs(coeffs.h(a[:, 0]) - coeffs.h(b[:, 0]))
    dy = np.abs(a[:, 0] - b[:, 0])
    lip = float(max(np.max(dA / dz), np.max(dh / dy)))
    args = (t, *split_state(a, coeffs.l, coeffs.d), vv)
    mags = [np.abs(coeffs.f_jac(*args)), np.abs(coeffs.F_jac(*args)),
            np.abs(coeffs.g_jac(*args)), np.abs(coeffs.G_jac(*args)),
            np.abs(coeffs.h_y(a[:, 0]))]
    bound = float(max(np.max(x) for x in mags))
    declared_k = coeffs.lipschitz
    declared_c = coeffs.bound
    return LipschitzReport(lip, declared_k, bound, declared_c)
