"""Linear-quadratic instances: the scalar control example with a zero optimum
and the two-player nonzero-sum doubly stochastic game.

Game dynamics (state x in R^n, controls v^i in R^k):

    dx = [A x + B1 v1 + B2 v2 + C k + alpha] dt + [D x + E k + beta] dW - k dB^
    J^i = 1/2 E[ int (x'R^i x + v^i'N^i v^i + k'P^i k) dt + x_T'Q^i x_T ]

The Nash candidate is u^i = -(N^i)^{-1} (B^i)' y^i, where y^i solves

    dy^i = -[A'y^i + D'h^i + R^i x] dt - [C'y^i + E'h^i + P^i k] dB^ + h^i dW,
    y^i_T = Q^i x_T.

Everything is solved on the binary lattice.  The generators of the y-equations
are switched off at the last node (the cost is a left Riemann sum), which
makes the discrete y^i the exact adjoint of the discrete cost: the lattice
candidate is then an exact Nash point of the discretised game.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ControlDomain, CoefficientSet, linear_quadratic
from .noise import Lattice, NoiseBundle
from .solver import ClassFields, ConvergenceError, SolverConfig, krylov, picard

VARIANTS = ("consistent", "literal")


def example11_build() -> CoefficientSet:
    """dy = (z - Z + v) dW - z dB^, dY = -(z + Z + v) dB^ + Z dW, y_0 = 0, Y_T = 0,
    cost 1/2 E int (y^2 + Y^2 + z^2 + Z^2 + v^2) + 1/2 E y_T^2 + 1/2 E Y_0^2, U = [-1, 1]."""
    return linear_quadratic(
        g={"state": [[0.0, 0.0, 1.0, -1.0]], "v": [1.0]},
        G={"state": [[0.0, 0.0, 1.0, 1.0]], "v": [1.0]},
        Q=np.eye(4), r=1.0, terminal=(1.0, 0.0), initial=(1.0, 0.0),
        domain=ControlDomain(-1.0, 1.0), name="example11",
    )


# ---------------------------------------------------------------------------
# specification


def _mat(x, shape, name):
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if a.shape != shape:
        raise ValueError(f"{name} must be {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def _vecfn(x, n, name) -> Callable[[float], np.ndarray]:
    if callable(x):
        return lambda t: np.asarray(x(t), dtype=float).reshape(n)
    v = np.zeros(n) if x is None else np.asarray(x, dtype=float).reshape(n)
    return lambda t: v


@dataclass(frozen=True)
class GameSpec:
    A: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    Q1: np.ndarray
    Q2: np.ndarray
    N1: np.ndarray
    N2: np.ndarray
    a: np.ndarray
    T: float = 1.0
    alpha: object = None  # constant vector or t -> vector
    beta: object = None
    variant: str = "consistent"

    def __post_init__(self):
        n = np.atleast_2d(np.asarray(self.A)).shape[0]
        k = np.atleast_2d(np.asarray(self.B1, dtype=float).reshape(n, -1)).shape[1]
        for name in ("A", "C", "D", "E", "R1", "R2", "P1", "P2", "Q1", "Q2"):
            object.__setattr__(self, name, _mat(getattr(self, name), (n, n), name))
        for name in ("B1", "B2"):
            object.__setattr__(self, name, _mat(np.asarray(getattr(self, name), dtype=float).reshape(n, -1),
                                                (n, k), name))
        for name in ("N1", "N2"):
            object.__setattr__(self, name, _mat(getattr(self, name), (k, k), name))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(n))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown game variant {self.variant!r}")
        if not self.T > 0:
            raise ValueError("horizon must be positive")
        for name in ("R1", "R2", "P1", "P2", "Q1", "Q2", "N1", "N2"):
            M = getattr(self, name)
            if np.max(np.abs(M - M.T)) > 1e-12:
                raise ValueError(f"{name} must be symmetric")
            lo = np.linalg.eigvalsh(M).min()
            if name.startswith("N"):
                if lo <= 0:
                    raise ValueError(f"{name} must be positive definite (min eigenvalue {lo:g})")
            elif lo < -1e-12:
                raise ValueError(f"{name} must be nonnegative (min eigenvalue {lo:g})")
        e = np.linalg.norm(self.E, 2)
        if not 0 < e < 1:
            raise ValueError(f"need 0 < |E| < 1, got {e:g}")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B1.shape[1]

    def S(self, i: int) -> np.ndarray:
        """B^i (N^i)^{-1} (B^i)'."""
        B, N = self.player(i)[:2]
        return B @ np.linalg.solve(N, B.T)

    def player(self, i: int):
        if i == 1:
            return self.B1, self.N1, self.R1, self.P1, self.Q1
        if i == 2:
            return self.B2, self.N2, self.R2, self.P2, self.Q2
        raise ValueError("player must be 1 or 2")

    @classmethod
    def from_dict(cls, d: dict) -> "GameSpec":
        names = set(cls.__dataclass_fields__)
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown game keys: {sorted(unknown)}")
        return cls(**d)


def scalar_game(**over) -> GameSpec:
    """n = k = 1 game with unit control weights; keyword overrides."""
    base = dict(A=0.0, C=0.0, D=0.0, E=0.5, B1=1.0, B2=1.0, R1=0.0, R2=0.0, P1=0.0, P2=0.0,
                Q1=0.0, Q2=0.0, N1=1.0, N2=1.0, a=1.0, T=1.0)
    base.update(over)
    return GameSpec(**base)


def derived_game(**over) -> GameSpec:
    """The scalar game with A = C = D = 0, E = 0.5, a = 1, R1 = Q1 = 1, the
    rest of the cost zero."""
    return scalar_game(**{"R1": 1.0, "Q1": 1.0, **over})


# ---------------------------------------------------------------------------
# commutation and aggregation


@dataclass(frozen=True)
class CommutationReport:
    defects: dict
    worst: float
    passed: bool


def check_commutation(spec: GameSpec, tol: float = 1e-10) -> CommutationReport:
    """Frobenius norms of [S^i, M] for M in (A', C', D', E', P1, P2), i = 1, 2."""
    defects = {}
    for i in (1, 2):
        S = spec.S(i)
        for name, M in (("A'", spec.A.T), ("C'", spec.C.T), ("D'", spec.D.T), ("E'", spec.E.T),
                        ("P1", spec.P1), ("P2", spec.P2)):
            defects[f"S{i},{name}"] = float(np.linalg.norm(S @ M - M @ S))
    worst = max(defects.values())
    return CommutationReport(defects, worst, worst < tol)


@dataclass(frozen=True)
class Aggregate:
    """Matrices of the aggregated system in (X, Y, K, H)."""

    S: np.ndarray    # S1 + S2, the coupling of Y into the forward drift
    R: np.ndarray    # S1 R1 + S2 R2
    P: np.ndarray    # P1 S1 + P2 S2
    Q: np.ndarray    # S1 Q1 + S2 Q2, the terminal weight


def build_aggregate(spec: GameSpec, tol: float = 1e-10) -> Aggregate:
    rep = check_commutation(spec, tol)
    if not rep.passed:
        raise ValueError(f"commutation conditions fail (worst defect {rep.worst:.3e}); "
                         "the aggregated system does not represent the game")
    S1, S2 = spec.S(1), spec.S(2)
    return Aggregate(S1 + S2, S1 @ spec.R1 + S2 @ spec.R2, spec.P1 @ S1 + spec.P2 @ S2,
                     S1 @ spec.Q1 + S2 @ spec.Q2)


# ---------------------------------------------------------------------------
# engine systems


def _forward(spec: GameSpec, t, x, K, push):
    """Drift and dW-coefficient of the state; ``push`` is the control term."""
    if spec.variant == "consistent":
        drift = x @ spec.A.T + push + K @ spec.C.T + _vecfn(spec.alpha, spec.n, "alpha")(t)
        diff = x @ spec.D.T + K @ spec.E.T + _vecfn(spec.beta, spec.n, "beta")(t)
    else:
        drift = x @ spec.A.T + push + _vecfn(spec.alpha, spec.n, "alpha")(t)
        diff = x @ spec.C.T + _vecfn(spec.beta, spec.n, "beta")(t)
    return drift, diff[:, :, None]


def _adjoint(spec: GameSpec, y, h, x, K, R, P):
    A = spec.A if spec.variant == "consistent" else spec.A.T
    F = y @ A + h @ spec.D + x @ R.T
    G = y @ spec.C + h @ spec.E + K @ P.T
    return F, G[:, :, None]


class _Base:
    def __init__(self, spec: GameSpec, lat: Lattice, nY: int):
        self.spec, self.lat = spec, lat
        self.ny, self.nY = spec.n, nY
        self.t = lat.grid.nodes
        self.N = lat.N

    def initial(self, Y0, idx):
        return np.broadcast_to(self.spec.a, (Y0.shape[0], self.spec.n))


class AggregateSystem(_Base):
    def __init__(self, spec: GameSpec, lat: Lattice, agg: Aggregate):
        super().__init__(spec, lat, spec.n)
        self.agg = agg

    def fwd(self, k, y, Y, z, Z, idx):
        return _forward(self.spec, self.t[k], y, z[:, :, 0], -Y)

    def bwd(self, k, y, Y, z, Z, idx):
        if k == self.N:
            return np.zeros_like(Y), np.zeros(Y.shape + (1,))
        return _adjoint(self.spec, Y, Z[:, :, 0], y, z[:, :, 0], self.agg.R, self.agg.P)

    def terminal(self, yN, idx):
        return yN @ self.agg.Q.T


class ComponentSystem(_Base):
    """Forward state driven by a fixed aggregate Y; backward (y1, y2) stacked."""

    def __init__(self, spec: GameSpec, lat: Lattice, agg: Aggregate, Yagg: np.ndarray):
        super().__init__(spec, lat, 2 * spec.n)
        self.agg, self.Yagg = agg, Yagg

    def fwd(self, k, y, Y, z, Z, idx):
        return _forward(self.spec, self.t[k], y, z[:, :, 0], -self.Yagg[k][idx])

    def bwd(self, k, y, Y, z, Z, idx):
        if k == self.N:
            return np.zeros_like(Y), np.zeros(Y.shape + (1,))
        n = self.spec.n
        out = []
        for i in (1, 2):
            _, _, R, P, _ = self.spec.player(i)
            sl = slice((i - 1) * n, i * n)
            out.append(_adjoint(self.spec, Y[:, sl], Z[:, sl, 0], y, z[:, :, 0], R, P))
        return np.concatenate([o[0] for o in out], axis=1), np.concatenate([o[1] for o in out], axis=1)

    def terminal(self, yN, idx):
        return np.concatenate([yN @ self.spec.Q1.T, yN @ self.spec.Q2.T], axis=1)


# controls: objects with at(k, t, x, idx) -> (rows, k)

@dataclass(frozen=True)
class FieldControl:
    """Per-atom control field, (N+1, atoms, k)."""

    values: np.ndarray
    name: str = "field"

    def at(self, k, t, x, idx):
        return self.values[k][idx]


@dataclass(frozen=True)
class OpenLoop:
    """Deterministic control t -> R^k."""

    fn: Callable[[float], object]
    dim: int
    name: str

    def at(self, k, t, x, idx):
        v = np.asarray(self.fn(t), dtype=float).reshape(self.dim)
        return np.broadcast_to(v, (x.shape[0], self.dim))


@dataclass(frozen=True)
class Feedback:
    """v = gain x, gain (k, n)."""

    gain: np.ndarray
    name: str

    def at(self, k, t, x, idx):
        return x @ np.asarray(self.gain).T


@dataclass(frozen=True)
class Shifted:
    """base + s (other - base), used for directional derivatives."""

    base: object
    other: object
    s: float
    name: str = "shifted"

    def at(self, k, t, x, idx):
        b = self.base.at(k, t, x, idx)
        return b + self.s * (self.other.at(k, t, x, idx) - b)


class StateSystem(_Base):
    """State under a pair of controls (the backward slot is a dummy)."""

    def __init__(self, spec: GameSpec, lat: Lattice, v1, v2):
        super().__init__(spec, lat, 1)
        self.v1, self.v2 = v1, v2

    def fwd(self, k, y, Y, z, Z, idx):
        t = self.t[k]
        push = self.v1.at(k, t, y, idx) @ self.spec.B1.T + self.v2.at(k, t, y, idx) @ self.spec.B2.T
        return _forward(self.spec, t, y, z[:, :, 0], push)

    def bwd(self, k, y, Y, z, Z, idx):
        return np.zeros_like(Y), np.zeros(Y.shape + (1,))

    def terminal(self, yN, idx):
        return np.zeros((yN.shape[0], 1))


# ---------------------------------------------------------------------------
# solving


@dataclass
class NashCandidate:
    spec: GameSpec
    lattice: Lattice
    x: np.ndarray      # (N+1, atoms, n)
    kx: np.ndarray     # (N+1, atoms, n)
    y1: np.ndarray
    y2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    Y: np.ndarray      # aggregate backward field
    H: np.ndarray
    u1: np.ndarray     # (N+1, atoms, k)
    u2: np.ndarray
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def control(self, i: int) -> FieldControl:
        return FieldControl(self.u1 if i == 1 else self.u2, f"u{i}")

    def aggregation_defect(self) -> tuple[float, float]:
        S1, S2 = self.spec.S(1), self.spec.S(2)
        dY = self.y1 @ S1.T + self.y2 @ S2.T - self.Y
        dH = self.h1 @ S1.T + self.h2 @ S2.T - self.H
        return float(np.max(np.abs(dY))), float(np.max(np.abs(dH)))


def nash_controls(spec: GameSpec, y1: np.ndarray, y2: np.ndarray):
    """u^i = -(N^i)^{-1} (B^i)' y^i, applied to row fields."""
    u1 = -y1 @ spec.B1 @ np.linalg.inv(spec.N1).T
    u2 = -y2 @ spec.B2 @ np.linalg.inv(spec.N2).T
    return u1, u2


def solve_game(spec: GameSpec, lattice: Lattice, cfg: SolverConfig = SolverConfig()) -> NashCandidate:
    """Aggregate first, then the two component equations given (x, k)."""
    if lattice.d != 1 or lattice.l != 1:
        raise ValueError("the game uses scalar drivers")
    if abs(lattice.grid.T - spec.T) > 1e-12:
        raise ValueError("lattice horizon differs from the game horizon")
    agg = build_aggregate(spec)
    system = AggregateSystem(spec, lattice, agg)
    try:
        res = picard(lattice, system, cfg)
    except ConvergenceError:
        # strongly coupled: the system is affine, so solve the fixed point directly
        res = krylov(lattice, system, cfg)
    A = res.fields.to_atoms(lattice)
    comp = picard(lattice, ComponentSystem(spec, lattice, agg, A.Y), cfg)
    C = comp.fields.to_atoms(lattice)
    n = spec.n
    y1, y2 = C.Y[:, :, :n], C.Y[:, :, n:]
    h1, h2 = C.Z[:, :, :n, 0], C.Z[:, :, n:, 0]
    u1, u2 = nash_controls(spec, y1, y2)
    return NashCandidate(spec, lattice, A.y, A.z[..., 0], y1, y2, h1, h2, A.Y, A.Z[..., 0],
                         u1, u2, res.iterations + comp.iterations,
                         {"aggregate_sweeps": res.iterations, "component_sweeps": comp.iterations,
                          "state_drift": float(np.max(np.abs(C.y - A.y)))})


def game_state(spec: GameSpec, lattice: Lattice, v1, v2,
               cfg: SolverConfig = SolverConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom state x and its dB-coefficient k under (v1, v2), (N+1, atoms, n)."""
    F = picard(lattice, StateSystem(spec, lattice, v1, v2), cfg).fields.to_atoms(lattice)
    return F.y, F.z[..., 0]


def realize(control, lattice: Lattice, x: np.ndarray) -> FieldControl:
    """The control as a per-atom process along the state x."""
    t = lattice.grid.nodes
    vals = np.stack([control.at(k, t[k], x[k], slice(None)) for k in range(lattice.N + 1)])
    return FieldControl(vals, getattr(control, "name", "field"))


def player_costs(spec: GameSpec, lattice: Lattice, v1, v2,
                 cfg: SolverConfig = SolverConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom J^1, J^2 under the control pair (v1, v2)."""
    x, K = game_state(spec, lattice, v1, v2, cfg)
    dt, t = lattice.grid.dt, lattice.grid.nodes
    out = []
    for i, v in ((1, v1), (2, v2)):
        _, Nm, R, P, Q = spec.player(i)
        total = 0.5 * np.einsum("ai,ij,aj->a", x[-1], Q, x[-1])
        for k in range(lattice.N):
            vk = v.at(k, t[k], x[k], slice(None))
            run = (np.einsum("ai,ij,aj->a", x[k], R, x[k]) + np.einsum("ai,ij,aj->a", vk, Nm, vk)
                   + np.einsum("ai,ij,aj->a", K[k], P, K[k]))
            total = total + 0.5 * run * dt
        out.append(total)
    return out[0], out[1]


# ---------------------------------------------------------------------------
# verification


def deviation_battery(spec: GameSpec, i: int) -> list:
    """Constants +/-0.25, +/-0.5, one sinusoid and the feedback -0.1 (B^i)' x."""
    k, T = spec.k, spec.T
    out = [OpenLoop(lambda t, c=c: np.full(k, c), k, f"const{c:+g}") for c in (0.25, -0.25, 0.5, -0.5)]
    out.append(OpenLoop(lambda t: np.full(k, np.sin(2 * np.pi * t / T)), k, "sin"))
    B = spec.player(i)[0]
    out.append(Feedback(-0.1 * B.T, "feedback-0.1x"))
    return out


@dataclass(frozen=True)
class DeviationRow:
    player: int
    name: str
    diff: float          # MC mean of J^i(deviation) - J^i(candidate)
    stderr: float
    exact: float         # lattice expectation of the same difference
    first_order: float   # MC directional derivative of J^i at the candidate
    first_order_se: float
    first_order_exact: float
    cancellation: float  # E int (<N u, dv> + <B'y, dv>) dt

    @property
    def passed(self) -> bool:
        return self.diff >= -3 * self.stderr and abs(self.first_order) <= 3 * self.first_order_se + 1e-12


@dataclass
class NashReport:
    rows: list
    M: int
    seed: int

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def min_score(self) -> float:
        """min diff / stderr over the battery (>= -3 is a pass)."""
        return min(r.diff / r.stderr if r.stderr > 0 else np.sign(r.diff) * np.inf
                   for r in self.rows)


def _mc(values: np.ndarray, atoms: np.ndarray) -> tuple[float, float]:
    s = values[atoms]
    se = float(s.std(ddof=1) / np.sqrt(s.size)) if s.size > 1 else 0.0
    return float(s.mean()), se


def verify_nash(spec: GameSpec, cand: NashCandidate, deviations: dict | None,
                noise: NoiseBundle, cfg: SolverConfig = SolverConfig()) -> NashReport:
    """Monte Carlo check of the Nash inequalities.

    Each player's deviations (dict player -> list, default battery) are costed
    exactly per lattice atom; the sample paths of ``noise`` (Rademacher coins
    on the lattice grid) pick the atoms, so differences are paired and the
    stderr is that of the sample mean.
    """
    lat = cand.lattice
    atoms = lat.atom_index(noise)
    w = lat.weights
    u = {1: cand.control(1), 2: cand.control(2)}
    base = player_costs(spec, lat, u[1], u[2], cfg)
    dt, t = lat.grid.dt, lat.grid.nodes
    rows = []
    for i in (1, 2):
        B, Nm = spec.player(i)[:2]
        y = cand.y1 if i == 1 else cand.y2
        devs = (deviations or {}).get(i) or deviation_battery(spec, i)
        for dev in devs:
            pair = {1: u[1], 2: u[2]}
            pair[i] = dev
            diff = player_costs(spec, lat, pair[1], pair[2], cfg)[i - 1] - base[i - 1]
            # feedback deviations are frozen into the process they generate
            v = realize(dev, lat, game_state(spec, lat, pair[1], pair[2], cfg)[0])
            # J is quadratic in an open-loop control: the central difference is exact
            plus, minus = dict(pair), dict(pair)
            plus[i] = Shifted(u[i], v, 1.0)
            minus[i] = Shifted(u[i], v, -1.0)
            deriv = 0.5 * (player_costs(spec, lat, plus[1], plus[2], cfg)[i - 1]
                           - player_costs(spec, lat, minus[1], minus[2], cfg)[i - 1])
            # the proof's cancellation line, along the candidate state
            canc = np.zeros(lat.n_atoms)
            for k in range(lat.N):
                dv = v.values[k] - u[i].values[k]
                canc += (np.einsum("ai,ij,aj->a", u[i].values[k], Nm, dv)
                         + np.einsum("ai,ij,aj->a", y[k] @ B, np.eye(spec.k), dv)) * dt
            m, se = _mc(diff, atoms)
            fm, fse = _mc(deriv, atoms)
            rows.append(DeviationRow(i, getattr(dev, "name", "deviation"), m, se, float(w @ diff),
                                     fm, fse, float(w @ deriv), float(w @ canc)))
    return NashReport(rows, noise.M, noise.seed)
