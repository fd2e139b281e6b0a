"""Spike variations, the variational system, the adjoint system and the
maximum-principle checks.

Everything runs on the lattice so expectations are exact sums.  The adjoint
is the exact discrete dual of the sweep scheme: with the state steps

    y_{k+1} = y_k + f_k dt + g_k dW_k - z_{k+1} dB_k        (k < N)
    Y_k     = Y_{k+1} + F_{k+1} dt + G_{k+1} dB_k - Z_k dW_k

and the left-Riemann cost, node k carries the f, g, l terms only if k < N
and the F, G terms only if k > 0.  The Hamiltonian derivatives are masked
accordingly, which makes the duality identity hold to solver precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import loglog_slope
from .model import (AdjointQuadruple, CoefficientSet, ControlPath, StateQuadruple,
                    control_at, hamiltonian)
from .noise import Lattice, TimeGrid
from .solver import (ClassFields, Fields, SolverConfig, picard, residuals_for, solve_lattice,
                     state_from_classes)


# ---------------------------------------------------------------------------
# spikes


@dataclass(frozen=True)
class SpikeSpec:
    tau: float
    eps: float
    v: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("spike width must be positive")
        if self.tau < 0:
            raise ValueError("spike starts before 0")

    def window(self, grid: TimeGrid) -> tuple[int, int]:
        """(first node, node count) after snapping to whole steps."""
        j0 = grid.index_of(self.tau)
        m = max(1, int(round(self.eps / grid.dt)))
        if j0 + m > grid.N:
            raise ValueError(f"spike window [{self.tau}, {self.tau + self.eps}] leaves [0, {grid.T}]")
        return j0, m

    def effective_eps(self, grid: TimeGrid) -> float:
        return self.window(grid)[1] * grid.dt


def spike_control(u: ControlPath, spec: SpikeSpec) -> ControlPath:
    """v on nodes j0..j0+m-1 (and on node N when the window reaches T)."""
    j0, m = spec.window(u.grid)
    vals = np.array(u.values, dtype=float, copy=True)
    stop = j0 + m + (1 if j0 + m == u.grid.N else 0)
    vals[j0:stop] = spec.v
    return ControlPath(u.grid, vals, u.domain)


# ---------------------------------------------------------------------------
# linearisation along a trajectory
#
# Node data are evaluated lazily on the rows the caller asks for: the
# engine passes one representative atom per F_{t_k}-class, and node-local
# expectations are plain means over classes (every class holds the same
# number of atoms).


def _rows(traj: StateQuadruple, k: int, idx):
    y, Y, z, Z = traj.node(k)
    return y[idx], Y[idx], z[idx], Z[idx]


class _NodeCache:
    def __init__(self):
        self._store = {}

    def get(self, k, idx, build):
        if isinstance(idx, slice):
            return build()
        key = (k, idx.shape[0])
        if key not in self._store:
            self._store[key] = build()
        return self._store[key]


class Linearisation:
    """Jacobians of (f, g, F, G, l) in zeta along a trajectory.

    ``at(k, idx)`` returns (fz (n, m), gz (n, d, m), Fz (n, m), Gz (n, l, m),
    lz (n, m)) on the selected rows; results may be broadcast views.
    """

    def __init__(self, coeffs: CoefficientSet, traj: StateQuadruple, control):
        self.coeffs, self.traj, self.control = coeffs, traj, control
        self._cache = _NodeCache()

    def at(self, k: int, idx):
        def build():
            c = self.coeffs
            t = self.traj.grid.nodes[k]
            y, Y, z, Z = _rows(self.traj, k, idx)
            v = control_at(self.control, k, t, y, Y, z, Z, None if isinstance(idx, slice) else idx)
            args = (t, y, Y, z, Z, v)
            return (c.f_jac(*args), c.g_jac(*args), c.F_jac(*args), c.G_jac(*args),
                    c.running_jac(*args))
        return self._cache.get(k, idx, build)

    def hy(self, idx):
        yN = self.traj.y[self.traj.grid.N][idx]
        return np.broadcast_to(self.coeffs.h_y(yN), yN.shape)

    def Phiy(self, idx):
        yN = self.traj.y[self.traj.grid.N][idx]
        return np.broadcast_to(self.coeffs.terminal_y(yN), yN.shape)

    def gamY(self, idx):
        Y0 = self.traj.Y[0][idx]
        return np.broadcast_to(self.coeffs.initial_Y(Y0), Y0.shape)


def linearise(coeffs: CoefficientSet, traj: StateQuadruple, control) -> Linearisation:
    return Linearisation(coeffs, traj, control)


class Differences:
    """phi(u^eps) - phi(u) along the trajectory for phi in (f, g, F, G, l).

    ``at(k, idx)`` returns (df (n,), dg (n, d), dF (n,), dG (n, l), dl (n,)).
    """

    def __init__(self, coeffs: CoefficientSet, traj: StateQuadruple, u, ueps):
        self.coeffs, self.traj, self.u, self.ueps = coeffs, traj, u, ueps
        self._cache = _NodeCache()

    def at(self, k: int, idx):
        def build():
            c = self.coeffs
            t = self.traj.grid.nodes[k]
            y, Y, z, Z = _rows(self.traj, k, idx)
            sel = None if isinstance(idx, slice) else idx
            a = control_at(self.ueps, k, t, y, Y, z, Z, sel)
            b = control_at(self.u, k, t, y, Y, z, Z, sel)
            return tuple(fn(t, y, Y, z, Z, a) - fn(t, y, Y, z, Z, b)
                         for fn in (c.f, c.g, c.F, c.G, c.running))
        return self._cache.get(k, idx, build)


def spike_differences(coeffs: CoefficientSet, traj: StateQuadruple, u, ueps) -> Differences:
    return Differences(coeffs, traj, u, ueps)


def contract(J: np.ndarray, cols: list[np.ndarray]) -> np.ndarray:
    """sum_j J[..., j] * cols[j] over the trailing axis of J (J is (n, m) or (n, r, m))."""
    zeta = np.column_stack(cols)
    if J.ndim == 2:
        return np.einsum("am,am->a", J, zeta)
    return np.einsum("arm,am->ar", J, zeta)


def _cols(y, Y, z, Z) -> list[np.ndarray]:
    """Engine node fields -> the columns of zeta."""
    return [y[:, 0], Y[:, 0]] + [z[:, 0, i] for i in range(z.shape[2])] \
        + [Z[:, 0, i] for i in range(Z.shape[2])]


def _zeta(q: StateQuadruple, k: int, idx) -> np.ndarray:
    y, Y, z, Z = _rows(q, k, idx)
    return np.concatenate([y[:, None], Y[:, None], z, Z], axis=1)


@dataclass
class VariationalSystem:
    """Linear system along the trajectory, driven by the spike differences."""

    lin: Linearisation
    diff: Differences
    scale: float = 1.0
    ny: int = 1
    nY: int = 1

    def fwd(self, k, y, Y, z, Z, idx):
        fz, gz, _, _, _ = self.lin.at(k, idx)
        df, dg, _, _, _ = self.diff.at(k, idx)
        cols = _cols(y, Y, z, Z)
        a = contract(fz, cols) + self.scale * df
        b = contract(gz, cols) + self.scale * dg
        return a[:, None], b[:, None, :]

    def bwd(self, k, y, Y, z, Z, idx):
        _, _, Fz, Gz, _ = self.lin.at(k, idx)
        _, _, dF, dG, _ = self.diff.at(k, idx)
        cols = _cols(y, Y, z, Z)
        c = contract(Fz, cols) + self.scale * dF
        e = contract(Gz, cols) + self.scale * dG
        return c[:, None], e[:, None, :]

    def initial(self, Y0, idx):
        return np.zeros((Y0.shape[0], 1))

    def terminal(self, yN, idx):
        return self.lin.hy(idx)[:, None] * yN


VariationalQuadruple = StateQuadruple


def _variational_classes(coeffs, optimal, u, spec, lattice, cfg, scale=1.0, warm=None, lin=None):
    ueps = spike_control(u, spec)
    system = VariationalSystem(lin or linearise(coeffs, optimal, u),
                               spike_differences(coeffs, optimal, u, ueps), scale)
    return picard(lattice, system, cfg, warm).fields


def solve_variational(coeffs: CoefficientSet, optimal: StateQuadruple, u: ControlPath,
                      spec: SpikeSpec, lattice: Lattice, cfg: SolverConfig = SolverConfig(),
                      scale: float = 1.0) -> StateQuadruple:
    """Lattice solution of the linearised system driven by the spike.

    ``scale`` multiplies the inhomogeneity (linearity checks).
    """
    F = _variational_classes(coeffs, optimal, u, spec, lattice, cfg, scale)
    return state_from_classes(lattice, F)


# ---------------------------------------------------------------------------
# adjoint


CONVENTIONS = ("derived", "flip_k_in_dW", "no_terminal_coupling")


@dataclass
class AdjointSystem:
    """(p, kappa) play the forward role, (q, h) the backward role.

    p_{k+1} = p_k - H_Y(k) dt - H_Z(k) dW_k - kappa_{k+1} dB_k,  p_0 = -gamma_Y(Y_0)
    q_k     = q_{k+1} + H_y(k+1) dt + H_z(k+1) dB_k - h_k dW_k,  q_N = Phi_y - h_y p_N
    with H_zeta(k) = [q f_zeta + h.g_zeta + l_zeta]_{k<N} - [p F_zeta + kappa.G_zeta]_{k>0};
    at node N the chain rule through Y_N = h(y_N) adds -h_y (p F_Y + kappa.G_Y) to H_y.
    """

    lin: Linearisation
    l: int
    d: int
    N: int
    convention: str = "derived"
    ny: int = 1
    nY: int = 1

    def _H(self, k, p, q, kap, h, idx):
        fz, gz, Fz, Gz, lz = self.lin.at(k, idx)
        out = np.zeros((p.shape[0], fz.shape[-1]))
        if k < self.N:
            out += q[:, :1] * fz + np.einsum("ad,adm->am", h[:, 0, :], gz) + lz
        if k > 0:
            out -= p[:, :1] * Fz + np.einsum("al,alm->am", kap[:, 0, :], Gz)
        return out

    def fwd(self, k, p, q, kap, h, idx):
        H = self._H(k, p, q, kap, h, idx)
        drift = -H[:, 1]
        dW = -H[:, 2 + self.l:]
        if self.convention == "flip_k_in_dW" and k > 0:
            Gz = self.lin.at(k, idx)[3]
            dW = dW - 2 * np.einsum("al,alm->am", kap[:, 0, :], Gz)[:, 2 + self.l:]
        return drift[:, None], dW[:, None, :]

    def bwd(self, k, p, q, kap, h, idx):
        H = self._H(k, p, q, kap, h, idx)
        if k == self.N and self.convention != "no_terminal_coupling":
            _, _, Fz, Gz, _ = self.lin.at(k, idx)
            H[:, 0] -= self.lin.hy(idx) * (p[:, 0] * Fz[:, 1]
                                           + np.einsum("al,al->a", kap[:, 0, :], Gz[:, :, 1]))
        return H[:, :1], H[:, None, 2:2 + self.l]

    def initial(self, q0, idx):
        return -np.broadcast_to(self.lin.gamY(idx), (q0.shape[0],))[:, None]

    def terminal(self, pN, idx):
        Phiy = np.broadcast_to(self.lin.Phiy(idx), (pN.shape[0],))[:, None]
        if self.convention == "no_terminal_coupling":
            return Phiy.copy()
        return Phiy - self.lin.hy(idx)[:, None] * pN


def adjoint_system(coeffs: CoefficientSet, optimal: StateQuadruple, control,
                   convention: str = "derived") -> AdjointSystem:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown adjoint convention {convention!r}")
    return AdjointSystem(linearise(coeffs, optimal, control), coeffs.l, coeffs.d,
                         optimal.grid.N, convention)


def solve_adjoint(coeffs: CoefficientSet, optimal: StateQuadruple, lattice: Lattice,
                  cfg: SolverConfig = SolverConfig(), control=None,
                  convention: str = "derived") -> AdjointQuadruple:
    """Adjoint along ``optimal`` (the control enters through the Jacobians;
    it defaults to zero)."""
    control = 0.0 if control is None else control
    system = adjoint_system(coeffs, optimal, control, convention)
    F = picard(lattice, system, cfg).fields.to_atoms(lattice)
    return AdjointQuadruple(lattice.grid, F.y[:, :, 0], F.Y[:, :, 0], F.z[:, :, 0, :], F.Z[:, :, 0, :])


def adjoint_residual(coeffs: CoefficientSet, optimal: StateQuadruple, control,
                     adjoint: AdjointQuadruple, lattice: Lattice,
                     convention: str = "derived") -> dict[str, float]:
    """Defects of the discrete adjoint integral equations for a candidate."""
    system = adjoint_system(coeffs, optimal, control, convention)
    F = Fields(adjoint.p[:, :, None], adjoint.q[:, :, None],
               adjoint.k[:, :, None, :], adjoint.h[:, :, None, :])
    return residuals_for(lattice, system, F)


# ---------------------------------------------------------------------------
# duality and the variational inequality


@dataclass(frozen=True)
class DualityReport:
    lhs: float
    rhs: float
    residual: float
    convention: str


def duality(coeffs: CoefficientSet, optimal: StateQuadruple, u, spec: SpikeSpec,
            var: StateQuadruple, adjoint: AdjointQuadruple, lattice: Lattice,
            convention: str = "derived") -> DualityReport:
    """Discrete integration by parts of <p, Y1> + <q, y1>:

    E[Phi_y y1_N] + E[gamma_Y Y1_0] + sum_{k<N} E[l_zeta . zeta1_k] dt
        = sum_{k<N} E[q_k df_k + h_k.dg_k] dt - sum_{k>=1} E[p_k dF_k + kappa_k.dG_k] dt
    """
    grid = lattice.grid
    dt, N = grid.dt, grid.N
    reps = [lattice.representatives(k) for k in range(N + 1)]
    lin = linearise(coeffs, optimal, u)
    dif = spike_differences(coeffs, optimal, u, spike_control(u, spec))
    lhs = np.mean(lin.Phiy(reps[N]) * var.y[N][reps[N]]) + np.mean(lin.gamY(reps[0]) * var.Y[0][reps[0]])
    rhs = 0.0
    for k in range(N):
        r = reps[k]
        lz = lin.at(k, r)[4]
        df, dg, _, _, _ = dif.at(k, r)
        lhs += np.mean(np.einsum("am,am->a", lz, _zeta(var, k, r))) * dt
        rhs += np.mean(adjoint.q[k][r] * df + np.sum(adjoint.h[k][r] * dg, axis=1)) * dt
    for k in range(1, N + 1):
        r = reps[k]
        _, _, dF, dG, _ = dif.at(k, r)
        rhs -= np.mean(adjoint.p[k][r] * dF + np.sum(adjoint.k[k][r] * dG, axis=1)) * dt
    return DualityReport(float(lhs), float(rhs), float(abs(lhs - rhs)), convention)


def select_convention(coeffs: CoefficientSet, optimal: StateQuadruple, u, spec: SpikeSpec,
                      lattice: Lattice, cfg: SolverConfig = SolverConfig(),
                      tol_factor: float = 10.0) -> tuple[str, dict[str, DualityReport]]:
    """Run the duality identity for every adjoint convention and keep those
    with residual below tol_factor * picard_tol.  Returns the first accepted
    convention (in CONVENTIONS order) and all reports; raises if none pass."""
    var = solve_variational(coeffs, optimal, u, spec, lattice, cfg)
    reports = {}
    for conv in CONVENTIONS:
        adj = solve_adjoint(coeffs, optimal, lattice, cfg, u, conv)
        reports[conv] = duality(coeffs, optimal, u, spec, var, adj, lattice, conv)
    accepted = [c for c in CONVENTIONS if reports[c].residual < tol_factor * cfg.picard_tol]
    if not accepted:
        raise RuntimeError("no adjoint convention satisfies the duality identity")
    return accepted[0], reports


def variational_inequality(coeffs: CoefficientSet, optimal: StateQuadruple, u: ControlPath,
                           spec: SpikeSpec, variational: StateQuadruple,
                           space=None) -> float:
    """E sum_{k<N} [l_zeta . zeta1 + l(u^eps) - l(u)] dt + E[Phi_y y1_T] + E[gamma_Y Y1_0].

    ``space`` is the Lattice (class-level evaluation), a weight vector over
    paths, or None for equal path weights.
    """
    grid = optimal.grid
    if variational.grid != grid or u.grid != grid:
        raise ValueError("inputs live on different grids")
    lin = linearise(coeffs, optimal, u)
    dif = spike_differences(coeffs, optimal, u, spike_control(u, spec))
    if isinstance(space, Lattice):
        rows = [space.representatives(k) for k in range(grid.N + 1)]

        def E(a, k):
            return float(np.mean(a))
    else:
        w = np.full(optimal.n, 1.0 / optimal.n) if space is None else np.asarray(space)
        rows = [slice(None)] * (grid.N + 1)

        def E(a, k):
            return float(w @ np.broadcast_to(a, (optimal.n,)))
    N = grid.N
    total = E(lin.Phiy(rows[N]) * variational.y[N][rows[N]], N) \
        + E(lin.gamY(rows[0]) * variational.Y[0][rows[0]], 0)
    for k in range(N):
        r = rows[k]
        lz = lin.at(k, r)[4]
        dl = dif.at(k, r)[4]
        total += E(np.einsum("am,am->a", lz, _zeta(variational, k, r)) + dl, k) * grid.dt
    return float(total)


# ---------------------------------------------------------------------------
# maximum principle


@dataclass(frozen=True)
class SmpReport:
    min_gap: float
    argmin: tuple[int, int, float]
    gaps: dict[float, float] = field(default_factory=dict)  # v -> min over (t, atom)
    gaps_max: dict[float, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.min_gap >= -1e-12


def check_smp(coeffs: CoefficientSet, optimal: StateQuadruple, u, adjoint: AdjointQuadruple,
              v_grid, nodes: range | None = None, ham=None, lattice: Lattice | None = None) -> SmpReport:
    """gap(v) = H(v) - H(u_{t_k}) at every node and atom; report the minimum.

    With ``lattice`` only one atom per class is visited (the fields are
    class-measurable, so nothing is lost)."""
    grid = optimal.grid
    ham = ham or (lambda t, st, v, adj: hamiltonian(coeffs, t, st, v, adj))
    nodes = range(grid.N) if nodes is None else nodes
    best = (np.inf, (-1, -1, np.nan))
    gmin, gmax = {}, {}
    for k in nodes:
        t = grid.nodes[k]
        r = lattice.representatives(k) if lattice is not None else np.arange(optimal.n)
        st = _rows(optimal, k, r)
        adj = tuple(a[k][r] for a in (adjoint.p, adjoint.q, adjoint.k, adjoint.h))
        base = ham(t, st, control_at(u, k, t, *st, r), adj)
        for v in v_grid:
            gap = ham(t, st, v, adj) - base
            i = int(np.argmin(gap))
            if gap[i] < best[0]:
                best = (float(gap[i]), (k, int(r[i]), float(v)))
            gmin[float(v)] = min(gmin.get(float(v), np.inf), float(gap.min()))
            gmax[float(v)] = max(gmax.get(float(v), -np.inf), float(gap.max()))
    return SmpReport(best[0], best[1], gmin, gmax)


# ---------------------------------------------------------------------------
# order experiments


QUANTITIES = ("int_y1", "int_Y1", "int_z1", "int_Z1", "sup_y1", "sup_Y1",
              "rem_y", "rem_Y", "rem_z", "rem_Z")


@dataclass
class OrderReport:
    eps: np.ndarray
    values: dict[str, np.ndarray]
    slopes: dict[str, float]
    stderr: dict[str, float]

    def rows(self):
        for i, e in enumerate(self.eps):
            yield {"eps": float(e), **{q: float(self.values[q][i]) for q in QUANTITIES}}


def _class_integrals(F: ClassFields, dt: float):
    """Left sums for y, Y, Z; right sum for z (z_0 is the zero extension).
    Class means are expectations because classes have equal weight."""
    N = len(F.y) - 1
    ey = sum(np.mean(F.y[k] ** 2) for k in range(N)) * dt
    eY = sum(np.mean(F.Y[k] ** 2) for k in range(N)) * dt
    ez = sum(np.mean(np.sum(F.z[k] ** 2, axis=(1, 2))) for k in range(1, N + 1)) * dt
    eZ = sum(np.mean(np.sum(F.Z[k] ** 2, axis=(1, 2))) for k in range(N)) * dt
    return ey, eY, ez, eZ


def _sup_moment(lat: Lattice, nodes: list) -> float:
    """E max_k |x_k|^2 for class fields (the max is pathwise, so per atom)."""
    best = np.zeros(lat.n_atoms)
    for k, a in enumerate(nodes):
        np.maximum(best, lat.expand(a[:, 0] ** 2, k), out=best)
    return float(best.mean())


def _minus(a: ClassFields, b: ClassFields) -> ClassFields:
    return ClassFields(*([x - y for x, y in zip(la, lb)]
                         for la, lb in zip((a.y, a.Y, a.z, a.Z), (b.y, b.Y, b.z, b.Z))))


def order_experiment(coeffs: CoefficientSet, u: ControlPath, tau: float, v: float,
                     eps_list, lattice: Lattice, cfg: SolverConfig = SolverConfig(),
                     optimal: StateQuadruple | None = None) -> OrderReport:
    """Measure the eps-scaling of the variational solution and of the
    remainder y^eps - y - y1 (etc.) on the lattice, then fit log-log slopes.
    The snapped (effective) eps is used throughout."""
    grid = lattice.grid
    eff = sorted({SpikeSpec(tau, e, v).effective_eps(grid) for e in eps_list})
    if len(eff) < 4:
        raise ValueError(f"need at least 4 distinct snapped eps values, got {len(eff)}")
    base = solve_lattice(coeffs, u, lattice, cfg, warm=optimal)
    optimal = base.solution
    dt = grid.dt
    vals = {q: [] for q in QUANTITIES}
    lin = linearise(coeffs, optimal, u)
    pert, var = base.classes, None
    for e in eff:
        # consecutive eps differ by a few steps, so the previous solutions
        # are good Picard seeds
        spec = SpikeSpec(tau, e, v)
        pert = solve_lattice(coeffs, spike_control(u, spec), lattice, cfg, warm=pert).classes
        var = _variational_classes(coeffs, optimal, u, spec, lattice, cfg, warm=var, lin=lin)
        for name, val in zip(("int_y1", "int_Y1", "int_z1", "int_Z1"), _class_integrals(var, dt)):
            vals[name].append(val)
        vals["sup_y1"].append(_sup_moment(lattice, var.y))
        vals["sup_Y1"].append(_sup_moment(lattice, var.Y))
        rem = _minus(_minus(pert, base.classes), var)
        for name, val in zip(("rem_y", "rem_Y", "rem_z", "rem_Z"), _class_integrals(rem, dt)):
            vals[name].append(val)
    values = {k: np.asarray(a, dtype=float) for k, a in vals.items()}
    slopes, errs = {}, {}
    for name, a in values.items():
        if np.all(a > 0):
            slopes[name], errs[name] = loglog_slope(eff, a)
        else:
            slopes[name], errs[name] = float("nan"), float("nan")
    return OrderReport(np.asarray(eff), values, slopes, errs)


def spike_test_system() -> CoefficientSet:
    """Coupled linear system with control-modulated slopes, used for the
    order experiments and the non-trivial duality check."""
    from .model import linear_quadratic
    return linear_quadratic(
        f={"state": [-1.0, 0.2, 0.1, 0.1], "state_v": [0.3, 0.3, 0, 0], "v": 1.0},
        g={"state": [[0.3, 0.1, 0.1, -0.1]], "const": [0.2]},
        F={"state": [0.5, -1.0, 0.1, 0.1], "state_v": [0, 0.2, 0, 0], "v": 0.5},
        G={"state": [[0.2, 0.3, 0.1, 0.1]], "const": [0.1]},
        h=(0.5, 0.0), x=1.0, Q=np.eye(4), r=1.0, terminal=(1.0, 0.0), initial=(1.0, 0.0),
        name="spike-test")
