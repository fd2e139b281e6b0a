"""Solution backends for the discretised forward-backward system.

One step of the scheme, with E_k the conditional expectation given F_{t_k}:

    forward   pre = y_k + f_k dt + g_k . dW_k
              y_{k+1} = E_{k+1}[pre],  z_{k+1} = E_{k+1}[pre dB_k] / dt
    backward  pre = Y_{k+1} + F_{k+1} dt + G_{k+1} . dB_k
              Y_k = E_k[pre],          Z_k = E_k[pre dW_k] / dt

with z_0 = 0 and Z_N = 0.  On the lattice every field measurable at k+1 plus
one extra coin is affine in that coin, so the discrete integral equations
hold exactly at the fixed point.  The engine is generic in the dimensions of
the forward unknown (ny) and the backward unknown (nY) so that the adjoint
and the game reuse it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .model import CoefficientSet, ControlPath, StateQuadruple, control_at
from .noise import Lattice, NoiseBundle, TimeGrid

SCHEMA_VERSION = "1.0"


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: Sequence[float]):
        super().__init__(message)
        self.history = list(history)


class SingularRegressionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    picard_max_iters: int = 50
    picard_tol: float = 1e-10
    relaxation: float = 1.0
    poly_degree: int = 3
    noise_features: tuple[str, ...] = ("one", "dB", "B_future")
    mc_paths: int = 100_000
    mc_batches: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.picard_max_iters < 1:
            raise ValueError("picard_max_iters must be >= 1")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.poly_degree < 0 or not self.noise_features:
            raise ValueError("regression basis is empty")
        unknown = set(self.noise_features) - {"one", "dB", "B_future"}
        if unknown:
            raise ValueError(f"unknown noise features {sorted(unknown)}")
        if self.mc_paths < 1 or self.mc_batches < 2:
            raise ValueError("need at least one path and two batches")


# ---------------------------------------------------------------------------
# generic sweep engine
#
# Systems expose
#   fwd(k, y, Y, z, Z, idx) -> (drift (n, ny), diffusion (n, ny, d))
#   bwd(k, y, Y, z, Z, idx) -> (drift (n, nY), diffusion (n, nY, l))
#   initial(Y0, idx) -> (n, ny);  terminal(yN, idx) -> (n, nY)
# where the node fields are (n, ny), (n, nY), (n, ny, l), (n, nY, d) and
# ``idx`` selects the rows of any per-atom data the system carries (an
# index array of class representatives, or slice(None) for full fields).


class SweepSystem(Protocol):
    ny: int
    nY: int

    def fwd(self, k, y, Y, z, Z, idx): ...

    def bwd(self, k, y, Y, z, Z, idx): ...

    def initial(self, Y0, idx): ...

    def terminal(self, yN, idx): ...


@dataclass
class Fields:
    """Per-atom (or per-path) fields: y (N+1, A, ny), Y (N+1, A, nY),
    z (N+1, A, ny, l), Z (N+1, A, nY, d)."""

    y: np.ndarray
    Y: np.ndarray
    z: np.ndarray
    Z: np.ndarray

    def node(self, k):
        return self.y[k], self.Y[k], self.z[k], self.Z[k]


@dataclass
class ClassFields:
    """Lattice fields stored once per F_{t_k}-class: lists over nodes."""

    y: list
    Y: list
    z: list
    Z: list

    @classmethod
    def zeros(cls, lat: Lattice, ny: int, nY: int) -> "ClassFields":
        C = [lat.n_classes(k) for k in range(lat.N + 1)]
        return cls([np.zeros((c, ny)) for c in C], [np.zeros((c, nY)) for c in C],
                   [np.zeros((c, ny, lat.l)) for c in C], [np.zeros((c, nY, lat.d)) for c in C])

    @classmethod
    def from_atoms(cls, lat: Lattice, F: Fields) -> "ClassFields":
        r = range(lat.N + 1)
        return cls([lat.compress(F.y[k], k) for k in r], [lat.compress(F.Y[k], k) for k in r],
                   [lat.compress(F.z[k], k) for k in r], [lat.compress(F.Z[k], k) for k in r])

    def to_atoms(self, lat: Lattice) -> Fields:
        r = range(lat.N + 1)
        return Fields(*(np.stack([lat.expand(a[k], k) for k in r])
                        for a in (self.y, self.Y, self.z, self.Z)))

    def copy(self) -> "ClassFields":
        return ClassFields(*([a.copy() for a in lst] for lst in (self.y, self.Y, self.z, self.Z)))

    def node(self, k):
        return self.y[k], self.Y[k], self.z[k], self.Z[k]


def _set(out: np.ndarray, value, relax: float) -> float:
    new = relax * value + (1 - relax) * out if relax < 1 else value
    change = float(np.max(np.abs(out - new))) if out.size else 0.0
    out[...] = new
    return change


class _Steps:
    """Shapes and increments of the step-k joint spaces of a lattice."""

    def __init__(self, lat: Lattice):
        self.lat = lat
        self.reps = [lat.representatives(k) for k in range(lat.N + 1)]
        self.dW = lat.coin_values(lat.d)   # (2^d, d)
        self.dB = lat.coin_values(lat.l)   # (2^l, l)

    def dims(self, k):
        return self.lat.step_dims(k)

    def fwd_pre(self, system, F: ClassFields, k):
        """pre on the joint space, shape (P0, Dw, Db, R, ny)."""
        P0, Dw, Db, R = self.dims(k)
        dt = self.lat.grid.dt
        y, Y, z, Z = F.node(k)
        a, b = system.fwd(k, y, Y, z, Z, self.reps[k])
        ny = y.shape[1]
        y5 = y.reshape(P0, 1, Db, R, ny)
        a5 = np.asarray(a).reshape(P0, 1, Db, R, ny)
        b6 = np.asarray(b).reshape(P0, 1, Db, R, ny, self.lat.d)
        dW6 = self.dW.reshape(1, Dw, 1, 1, 1, self.lat.d)
        return y5 + a5 * dt + np.sum(b6 * dW6, axis=-1)

    def bwd_pre(self, system, F: ClassFields, k):
        """pre on the joint space of step k (uses node k+1), (P0, Dw, Db, R, nY)."""
        P0, Dw, Db, R = self.dims(k)
        dt = self.lat.grid.dt
        y, Y, z, Z = F.node(k + 1)
        c, e = system.bwd(k + 1, y, Y, z, Z, self.reps[k + 1])
        nY = Y.shape[1]
        Y5 = Y.reshape(P0, Dw, 1, R, nY)
        c5 = np.asarray(c).reshape(P0, Dw, 1, R, nY)
        e6 = np.asarray(e).reshape(P0, Dw, 1, R, nY, self.lat.l)
        dB6 = self.dB.reshape(1, 1, Db, 1, 1, self.lat.l)
        return Y5 + c5 * dt + np.sum(e6 * dB6, axis=-1)

    def dW5(self):
        return self.dW.reshape(1, -1, 1, 1, 1, self.lat.d)

    def dB5(self):
        return self.dB.reshape(1, 1, -1, 1, 1, self.lat.l)


def forward_sweep(steps: _Steps, system, F: ClassFields, relax: float = 1.0) -> float:
    """In-place forward sweep; returns the sup-norm change of (y, z)."""
    lat = steps.lat
    dt = lat.grid.dt
    change = _set(F.y[0], system.initial(F.Y[0], steps.reps[0]), relax)
    change = max(change, _set(F.z[0], 0.0, relax))
    for k in range(lat.N):
        pre = steps.fwd_pre(system, F, k)
        n1 = lat.n_classes(k + 1)
        ynew = pre.mean(axis=2).reshape(n1, -1)
        znew = (pre[..., None] * steps.dB5()).mean(axis=2).reshape(n1, pre.shape[-1], lat.l) / dt
        change = max(change, _set(F.y[k + 1], ynew, relax), _set(F.z[k + 1], znew, relax))
    return change


def backward_sweep(steps: _Steps, system, F: ClassFields, relax: float = 1.0) -> float:
    """In-place backward sweep; returns the sup-norm change of (Y, Z)."""
    lat = steps.lat
    dt, N = lat.grid.dt, lat.N
    change = _set(F.Y[N], system.terminal(F.y[N], steps.reps[N]), relax)
    change = max(change, _set(F.Z[N], 0.0, relax))
    for k in range(N - 1, -1, -1):
        pre = steps.bwd_pre(system, F, k)
        n0 = lat.n_classes(k)
        Ynew = pre.mean(axis=1).reshape(n0, -1)
        Znew = (pre[..., None] * steps.dW5()).mean(axis=1).reshape(n0, pre.shape[-1], lat.d) / dt
        change = max(change, _set(F.Y[k], Ynew, relax), _set(F.Z[k], Znew, relax))
    return change


@dataclass
class SweepResult:
    fields: ClassFields
    iterations: int
    history: list[float]


def picard(lat: Lattice, system, cfg: SolverConfig, warm: ClassFields | None = None) -> SweepResult:
    """Iterate forward then backward sweeps from ``warm`` (default zero).

    Sweeps update the class fields in place; the recorded change of a sweep
    pair is the sup norm over all four fields.
    """
    if lat.grid.dt < 1e-12:
        raise ValueError("time step below 1e-12")
    steps = _Steps(lat)
    cur = warm.copy() if warm is not None else ClassFields.zeros(lat, system.ny, system.nY)
    history: list[float] = []
    for it in range(1, cfg.picard_max_iters + 1):
        diff = forward_sweep(steps, system, cur, cfg.relaxation)
        diff = max(diff, backward_sweep(steps, system, cur, cfg.relaxation))
        history.append(diff)
        if not np.isfinite(diff) or diff > 1e12:
            raise ConvergenceError(f"Picard iteration diverged at sweep {it}", history)
        if diff < cfg.picard_tol:
            return SweepResult(cur, it, history)
    raise ConvergenceError(
        f"Picard iteration did not reach {cfg.picard_tol:g} in {cfg.picard_max_iters} sweeps "
        f"(last change {history[-1]:.3e})", history)


def _flatten(F: ClassFields) -> np.ndarray:
    return np.concatenate([a.ravel() for lst in (F.y, F.Y, F.z, F.Z) for a in lst])


def _unflatten(vec: np.ndarray, like: ClassFields) -> ClassFields:
    out, pos = [], 0
    for lst in (like.y, like.Y, like.z, like.Z):
        cur = []
        for a in lst:
            cur.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        out.append(cur)
    return ClassFields(*out)


def krylov(lat: Lattice, system, cfg: SolverConfig) -> SweepResult:
    """Fixed point of one sweep pair for systems affine in the unknowns.

    Picard only converges when the sweep map contracts; for an affine map
    x -> Mx + c the fixed point solves (I - M) x = c, which GMRES handles
    without forming M.  ``history`` holds the sup change of a final
    verification sweep pair.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    steps = _Steps(lat)
    zero = ClassFields.zeros(lat, system.ny, system.nY)

    def sweep(vec):
        F = _unflatten(vec, zero)
        forward_sweep(steps, system, F)
        backward_sweep(steps, system, F)
        return _flatten(F)

    n = _flatten(zero).size
    c = sweep(np.zeros(n))
    op = LinearOperator((n, n), matvec=lambda x: x - (sweep(x) - c), dtype=float)
    scale = max(1.0, float(np.max(np.abs(c))))
    # the 2-norm target cannot go below rounding; the verification sweep decides
    atol = max(1e-3 * cfg.picard_tol, 64 * np.finfo(float).eps * np.sqrt(n)) * scale
    x, info = gmres(op, c, rtol=0.0, atol=atol,
                    restart=min(n, 200), maxiter=max(1, cfg.picard_max_iters))
    if info != 0 or not np.all(np.isfinite(x)):
        raise ConvergenceError(f"GMRES did not converge (info={info})", [])
    F = _unflatten(x, zero)
    history = [max(forward_sweep(steps, system, F), backward_sweep(steps, system, F))]
    if not history[-1] < cfg.picard_tol:
        raise ConvergenceError(
            f"fixed-point defect {history[-1]:.3e} above {cfg.picard_tol:g} after GMRES", history)
    return SweepResult(F, 1, history)


class _Norms:
    """Running sup and max-over-nodes L2 norm of per-atom defects."""

    def __init__(self, w):
        self.w, self.sup, self.l2 = w, 0.0, 0.0

    def add(self, r):
        if r.size:
            self.sup = max(self.sup, float(np.max(np.abs(r))))
            sq = r ** 2
            self.l2 = max(self.l2, float(np.sqrt(np.max(self.w @ sq.reshape(sq.shape[0], -1)))))


def lattice_residuals(lat: Lattice, system, F: ClassFields) -> dict[str, float]:
    """Defects of the two discrete integral equations on the lattice.

    forward:  y_k - [y_0* + sum_{j<k} (f_j dt + g_j dW_j - z_{j+1} dB_j)]
    backward: Y_k - [terminal + sum_{j>=k} (F_{j+1} dt + G_{j+1} dB_j - Z_j dW_j)]
    The one-step defects are evaluated per class, then accumulated per atom.
    """
    steps = _Steps(lat)
    w = lat.weights
    fn, bn = _Norms(w), _Norms(w)
    acc = lat.expand(F.y[0] - system.initial(F.Y[0], steps.reps[0]), 0)
    fn.add(acc)
    for k in range(lat.N):
        P0, Dw, Db, R = steps.dims(k)
        pre = steps.fwd_pre(system, F, k)
        ny = pre.shape[-1]
        y1 = F.y[k + 1].reshape(P0, Dw, 1, R, ny)
        z1 = F.z[k + 1].reshape(P0, Dw, 1, R, ny, lat.l)
        step = y1 - (pre - np.sum(z1 * steps.dB5(), axis=-1))
        acc = acc + lat.expand_step(step.reshape(-1, ny), k)
        fn.add(acc)
    N = lat.N
    acc = lat.expand(F.Y[N] - system.terminal(F.y[N], steps.reps[N]), N)
    bn.add(acc)
    for k in range(N - 1, -1, -1):
        P0, Dw, Db, R = steps.dims(k)
        pre = steps.bwd_pre(system, F, k)
        nY = pre.shape[-1]
        Y0 = F.Y[k].reshape(P0, 1, Db, R, nY)
        Z0 = F.Z[k].reshape(P0, 1, Db, R, nY, lat.d)
        step = Y0 - (pre - np.sum(Z0 * steps.dW5(), axis=-1))
        acc = acc + lat.expand_step(step.reshape(-1, nY), k)
        bn.add(acc)
    return {"forward_sup": fn.sup, "forward_l2": fn.l2,
            "backward_sup": bn.sup, "backward_l2": bn.l2}


def path_residuals(noise, system, F: Fields) -> dict[str, float]:
    """Same defects for arbitrary per-path fields (Monte Carlo paths or
    lattice candidates that are not class-measurable)."""
    dt, N = noise.grid.dt, noise.grid.N
    full = slice(None)
    fn, bn = _Norms(noise.weights), _Norms(noise.weights)
    acc = F.y[0] - system.initial(F.Y[0], full)
    fn.add(acc)
    for k in range(N):
        a, b = system.fwd(k, *F.node(k), full)
        acc = F.y[k + 1] - (F.y[k] - acc + a * dt + np.einsum("and,ad->an", b, noise.dW_at(k))
                            - np.einsum("anl,al->an", F.z[k + 1], noise.dB_at(k)))
        fn.add(acc)
    acc = F.Y[N] - system.terminal(F.y[N], full)
    bn.add(acc)
    for k in range(N - 1, -1, -1):
        c, e = system.bwd(k + 1, *F.node(k + 1), full)
        acc = F.Y[k] - (F.Y[k + 1] - acc + c * dt + np.einsum("anl,al->an", e, noise.dB_at(k))
                        - np.einsum("and,ad->an", F.Z[k], noise.dW_at(k)))
        bn.add(acc)
    return {"forward_sup": fn.sup, "forward_l2": fn.l2,
            "backward_sup": bn.sup, "backward_l2": bn.l2}


def residuals_for(space, system, F: Fields) -> dict[str, float]:
    """Lattice fast path when every node field is class-measurable."""
    if isinstance(space, Lattice):
        r = range(space.N + 1)
        if all(space.is_measurable(a[k], k) for a in (F.y, F.Y, F.z, F.Z) for k in r):
            return lattice_residuals(space, system, ClassFields.from_atoms(space, F))
    return path_residuals(space, system, F)


# ---------------------------------------------------------------------------
# the state system of a CoefficientSet


@dataclass
class StateSystem:
    """Adapter from CoefficientSet + control to the engine interface."""

    coeffs: CoefficientSet
    control: object
    grid: TimeGrid
    ny: int = 1
    nY: int = 1

    def _args(self, k, y, Y, z, Z, idx):
        yy, YY, zz, ZZ = y[:, 0], Y[:, 0], z[:, 0, :], Z[:, 0, :]
        t = self.grid.nodes[k]
        v = control_at(self.control, k, t, yy, YY, zz, ZZ, idx)
        return t, yy, YY, zz, ZZ, v

    def fwd(self, k, y, Y, z, Z, idx):
        args = self._args(k, y, Y, z, Z, idx)
        return self.coeffs.f(*args)[:, None], self.coeffs.g(*args)[:, None, :]

    def bwd(self, k, y, Y, z, Z, idx):
        args = self._args(k, y, Y, z, Z, idx)
        return self.coeffs.F(*args)[:, None], self.coeffs.G(*args)[:, None, :]

    def initial(self, Y0, idx):
        return np.full((Y0.shape[0], 1), self.coeffs.x)

    def terminal(self, yN, idx):
        return self.coeffs.h(yN[:, 0])[:, None]


def fields_from_state(q: StateQuadruple) -> Fields:
    return Fields(q.y[:, :, None], q.Y[:, :, None], q.z[:, :, None, :], q.Z[:, :, None, :])


def state_from_fields(grid: TimeGrid, F: Fields) -> StateQuadruple:
    return StateQuadruple(grid, F.y[:, :, 0], F.Y[:, :, 0], F.z[:, :, 0, :], F.Z[:, :, 0, :])


def state_from_classes(lat: Lattice, F: ClassFields) -> StateQuadruple:
    return state_from_fields(lat.grid, F.to_atoms(lat))


@dataclass
class SolveReport:
    solution: StateQuadruple
    iterations: int
    picard_residual: float
    residuals: dict[str, float]
    history: list[float] = field(default_factory=list)
    stderr: dict[str, float] = field(default_factory=dict)
    estimates: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    classes: ClassFields | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "grid": {"T": self.solution.grid.T, "N": self.solution.grid.N},
            "iterations": self.iterations,
            "picard_residual": self.picard_residual,
            "residuals": self.residuals,
            "history": self.history,
            "estimates": self.estimates,
            "stderr": self.stderr,
            "meta": self.meta,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True))

    def to_csv(self, path, weights: np.ndarray | None = None) -> None:
        """Per-node mean and second moment of every field."""
        write_node_table(path, self.solution, weights)


def fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else str(float(x))


def fmt17(x: float) -> str:
    return f"{float(x):.17g}"


def write_node_table(path, sol: StateQuadruple, weights=None) -> None:
    w = np.full(sol.n, 1.0 / sol.n) if weights is None else weights
    cols = {"y": sol.y, "Y": sol.Y, "z": sol.z.sum(axis=2), "Z": sol.Z.sum(axis=2)}
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "t"] + [f"{c}_{s}" for c in cols for s in ("mean", "msq")])
        for k, t in enumerate(sol.grid.nodes):
            row = [k, fmt17(t)]
            for a in cols.values():
                row += [fmt17(w @ a[k]), fmt17(w @ a[k] ** 2)]
            wr.writerow(row)


def residual_verify(coeffs: CoefficientSet, control, candidate: StateQuadruple,
                    noise) -> dict[str, float]:
    """Sup and L2 defects of both discrete integral equations for a candidate."""
    if candidate.grid != noise.grid:
        raise ValueError("candidate and noise live on different grids")
    if candidate.n != noise.M:
        raise ValueError("candidate path count does not match the noise")
    system = StateSystem(coeffs, control, candidate.grid)
    return residuals_for(noise, system, fields_from_state(candidate))


def _lattice_report(lat: Lattice, system, cfg: SolverConfig, warm) -> SolveReport:
    if isinstance(warm, StateQuadruple):
        warm = ClassFields.from_atoms(lat, fields_from_state(warm))
    res = picard(lat, system, cfg, warm)
    sol = state_from_classes(lat, res.fields)
    return SolveReport(sol, res.iterations, res.history[-1], lattice_residuals(lat, system, res.fields),
                       res.history, estimates={"Y0_mean": float(np.mean(res.fields.Y[0][:, 0]))},
                       classes=res.fields)


def solve_lattice(coeffs: CoefficientSet, control, lattice: Lattice,
                  cfg: SolverConfig = SolverConfig(), warm=None) -> SolveReport:
    """Picard solution of the state system on the lattice.

    ``warm`` may be a StateQuadruple or the ``classes`` of an earlier report.
    """
    if isinstance(control, ControlPath) and control.grid != lattice.grid:
        raise ValueError("control and lattice live on different grids")
    if coeffs.d != lattice.d or coeffs.l != lattice.l:
        raise ValueError("coefficient and lattice driver dimensions differ")
    return _lattice_report(lattice, StateSystem(coeffs, control, lattice.grid), cfg, warm)


# ---------------------------------------------------------------------------
# partially coupled systems by least-squares Monte Carlo


@dataclass(frozen=True)
class PartiallyCoupledSystem:
    """Scalar forward SDE dX = b dt + sigma dW (free of Y, Z) and the BDSDE

        Y_t = terminal(X_T) + int f ds + int g dB^ - int Z dW.

    Maps: b(t, x, v), sigma(t, x, v), f(t, x, y, Z, v), g(t, x, y, Z, v);
    all vectorised over paths.
    """

    b: Callable
    sigma: Callable
    f: Callable
    g: Callable
    terminal: Callable
    x: float
    T: float
    t0: float = 0.0


def _bcast(a, n):
    return np.broadcast_to(np.asarray(a, dtype=float), (n,))


@dataclass
class PartialSystemAdapter:
    """A partially coupled system in the engine interface: the forward
    unknown is X (its d^B-integrand stays 0), the backward one is (Y, Z)."""

    sys: PartiallyCoupledSystem
    control: object
    grid: TimeGrid
    ny: int = 1
    nY: int = 1

    def _v(self, k, n, idx):
        if isinstance(self.control, ControlPath):
            return self.control.at(k, n, idx)
        return _bcast(0.0 if self.control is None else self.control, n)

    def _t(self, k):
        return self.sys.t0 + self.grid.nodes[k]

    def fwd(self, k, y, Y, z, Z, idx):
        x = y[:, 0]
        n = x.shape[0]
        v = self._v(k, n, idx)
        return (_bcast(self.sys.b(self._t(k), x, v), n)[:, None],
                _bcast(self.sys.sigma(self._t(k), x, v), n)[:, None, None])

    def bwd(self, k, y, Y, z, Z, idx):
        x = y[:, 0]
        n = x.shape[0]
        args = (self._t(k), x, Y[:, 0], Z[:, 0, 0], self._v(k, n, idx))
        return _bcast(self.sys.f(*args), n)[:, None], _bcast(self.sys.g(*args), n)[:, None, None]

    def initial(self, Y0, idx):
        return np.full((Y0.shape[0], 1), self.sys.x)

    def terminal(self, yN, idx):
        return _bcast(self.sys.terminal(yN[:, 0]), yN.shape[0])[:, None]


def solve_partial_lattice(system: PartiallyCoupledSystem, control, lattice: Lattice,
                          cfg: SolverConfig = SolverConfig()) -> SolveReport:
    """Lattice solution of a partially coupled system (the forward part does
    not see Y, so two Picard passes reach the fixed point)."""
    if lattice.d != 1 or lattice.l != 1:
        raise ValueError("partially coupled systems use scalar drivers")
    return _lattice_report(lattice, PartialSystemAdapter(system, control, lattice.grid), cfg, None)


# basis(k, X_k, dB_k, B_T - B_{t_{k+1}}, future) -> design matrix, where
# future holds the later increments dB_{k+1..N-1} as an (M, N-k-1) array
Basis = Callable[..., np.ndarray]


def polynomial_basis(degree: int = 3, features: Sequence[str] = ("one", "dB", "B_future")) -> Basis:
    """Monomials of X_k up to ``degree`` tensored with backward-noise features.

    The degree is capped at (distinct X values - 1), so a deterministic X_0
    contributes only the constant.
    """

    def basis(k, X, dB, B_future, future=None):
        powers = [X ** p for p in range(_cap(degree, X) + 1)]
        extra = {"one": np.ones_like(X), "dB": dB, "B_future": B_future}
        return np.column_stack([pw * extra[f] for f in features for pw in powers])
    return basis


def indicator_basis(lattice: Lattice) -> Basis:
    """One-hot of the F_{t_k}-class; with the atoms as paths the regression is
    the exact conditional expectation."""

    def basis(k, X, dB, B_future, future=None):
        ids = lattice.class_ids(k)
        if ids.shape[0] != X.shape[0]:
            raise ValueError("indicator basis needs the full atom set as paths")
        _, inv = np.unique(ids, return_inverse=True)
        out = np.zeros((ids.shape[0], inv.max() + 1))
        out[np.arange(ids.shape[0]), inv] = 1.0
        return out
    return basis


def _cap(degree: int, X: np.ndarray) -> int:
    if X.size > 4 * (degree + 1):
        # cheap test first: a continuous sample has many distinct values
        if np.unique(np.round(X[: 4 * (degree + 1)], 10)).size > degree:
            return degree
    return min(degree, np.unique(np.round(X, 10)).size - 1)


def walsh_basis(degree: int = 3) -> Basis:
    """Powers of X_k times every product of the signs of dB_k, ..., dB_{N-1}.

    On coin-flip paths this spans all functions of (X_k, future coins), so
    the regression reproduces the lattice conditional expectation.  The X
    degree is capped at (distinct X values - 1) to keep the design full rank.
    """

    def basis(k, X, dB, B_future, future=None):
        signs = np.sign(np.column_stack([dB] + ([future] if future is not None and future.size else [])))
        deg = _cap(degree, X)
        powers = [X ** p for p in range(deg + 1)]
        out = []
        for mask in range(1 << signs.shape[1]):
            w = np.prod(signs[:, [j for j in range(signs.shape[1]) if mask >> j & 1]], axis=1)
            out.extend(pw * w for pw in powers)
        return np.column_stack(out)
    return basis


def _design(basis: Basis, k, X, dB, Bf, future=None) -> np.ndarray:
    Phi = basis(k, X, dB, Bf, future)
    # drop columns that carry no information on this sample (e.g. B_future at k = N-1)
    scale = np.max(np.abs(Phi), axis=0)
    keep = scale > 1e-14
    const = np.all(np.abs(Phi - Phi[:1]) <= 1e-14 * np.maximum(scale, 1), axis=0)
    first_const = np.argmax(const) if const.any() else -1
    keep &= ~const | (np.arange(Phi.shape[1]) == first_const)
    Phi = Phi[:, keep]
    if Phi.shape[0] < Phi.shape[1]:
        raise SingularRegressionError(
            f"{Phi.shape[0]} paths cannot fit a basis of size {Phi.shape[1]}")
    return Phi


def _project(Phi: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Least-squares fitted values of the target columns."""
    q, r = np.linalg.qr(Phi)
    diag = np.abs(np.diag(r))
    if diag.size and diag.min() <= 1e-10 * diag.max():
        raise SingularRegressionError("regression matrix is rank deficient")
    return q @ (q.T @ targets)


def _lsmc(system: PartiallyCoupledSystem, control, dW, dB, dt, basis: Basis):
    """One regression pass; dW, dB are (M, N).  Returns X, Y, Z of shape (M, N+1)."""
    M, N = dW.shape
    v = (lambda k: control.at(k, M, None)) if isinstance(control, ControlPath) else \
        (lambda k: _bcast(0.0 if control is None else control, M))
    X = np.empty((M, N + 1))
    X[:, 0] = system.x
    for k in range(N):
        t = system.t0 + k * dt
        X[:, k + 1] = X[:, k] + _bcast(system.b(t, X[:, k], v(k)), M) * dt \
            + _bcast(system.sigma(t, X[:, k], v(k)), M) * dW[:, k]
    Y = np.empty((M, N + 1))
    Z = np.zeros((M, N + 1))
    Y[:, N] = _bcast(system.terminal(X[:, N]), M)
    B_future = np.zeros(M)  # B_T - B_{t_{k+1}}
    for k in range(N - 1, -1, -1):
        t1 = system.t0 + (k + 1) * dt
        args = (t1, X[:, k + 1], Y[:, k + 1], Z[:, k + 1], v(k + 1))
        pre = Y[:, k + 1] + _bcast(system.f(*args), M) * dt + _bcast(system.g(*args), M) * dB[:, k]
        Phi = _design(basis, k, X[:, k], dB[:, k], B_future, dB[:, k + 1:])
        fit = _project(Phi, np.column_stack([pre, pre * dW[:, k]]))
        Y[:, k] = fit[:, 0]
        Z[:, k] = fit[:, 1] / dt
        B_future = B_future + dB[:, k]
    return X, Y, Z


def solve_partially_coupled_mc(system: PartiallyCoupledSystem, control, noise: NoiseBundle,
                               cfg: SolverConfig = SolverConfig(), basis: Basis | None = None) -> SolveReport:
    """Euler forward pass, regression backward pass.

    The reported stderr of Y_0 comes from rerunning the regression on
    ``cfg.mc_batches`` disjoint blocks of paths.
    """
    if noise.d != 1 or noise.l != 1:
        raise ValueError("the regression solver handles scalar drivers only")
    if noise.grid.dt < 1e-12:
        raise ValueError("time step below 1e-12")
    basis = basis or polynomial_basis(cfg.poly_degree, cfg.noise_features)
    dW, dB, dt = noise.dW[:, :, 0], noise.dB[:, :, 0], noise.grid.dt
    X, Y, Z = _lsmc(system, control, dW, dB, dt, basis)
    nb = cfg.mc_batches if noise.M >= 2 * cfg.mc_batches else 0
    stderr = {}
    if nb:
        blocks = np.array_split(np.arange(noise.M), nb)
        means = []
        for idx in blocks:
            try:
                means.append(_lsmc(system, control, dW[idx], dB[idx], dt, basis)[1][:, 0].mean())
            except SingularRegressionError:
                means = []
                break
        if means:
            stderr["Y0_mean"] = float(np.std(means, ddof=1) / np.sqrt(len(means)))
    if "Y0_mean" not in stderr:
        stderr["Y0_mean"] = float(Y[:, 0].std(ddof=1) / np.sqrt(noise.M)) if noise.M > 1 else 0.0
    M, N1 = Y.shape
    sol = StateQuadruple(noise.grid, X.T.copy(), Y.T.copy(), np.zeros((N1, M, 1)), Z.T[:, :, None].copy())
    resid = path_residuals(noise, PartialSystemAdapter(system, control, noise.grid),
                           fields_from_state(sol))
    return SolveReport(sol, 1, 0.0, resid, [], stderr=stderr,
                       estimates={"Y0_mean": float(Y[:, 0].mean())},
                       meta={"paths": noise.M, "seed": noise.seed, "kind": noise.kind})
