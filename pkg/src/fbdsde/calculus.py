"""Discrete forward/backward Ito integrals and the squared-norm Ito identity.

Conventions: the forward integral evaluates its integrand at the left end of
each step, the backward integral at the right end.  Left values only see the
past of W, right values only see the future of B, which is what the
two-sided filtration needs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise import TimeGrid


@dataclass(frozen=True)
class DiscretePath:
    """Values at the nodes t_0..t_N; trailing axes are (paths?, dim?)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.N + 1:
            raise ValueError(f"path has {v.shape[0]} nodes, grid has {self.grid.N + 1}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path has non-finite entries")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def _align(values: np.ndarray, inc: np.ndarray):
    """Bring integrand to (N+1, M, m) and increments to (N, M, m)."""
    inc = np.asarray(inc, dtype=float)
    u = np.asarray(values, dtype=float)
    if inc.ndim == 1:
        inc = inc[:, None, None]
    elif inc.ndim == 2:
        inc = inc[:, None, :]
    elif inc.ndim == 3:
        inc = np.swapaxes(inc, 0, 1)  # bundle layout (M, N, m) -> (N, M, m)
    else:
        raise ValueError("increments must have 1 to 3 axes")
    n, M, m = inc.shape
    if u.shape[0] != n + 1:
        raise ValueError(f"integrand has {u.shape[0]} nodes, increments {n} steps")
    if u.ndim == 1:
        u = u[:, None, None]
    elif u.ndim == 2:
        u = u[:, None, :]  # deterministic vector integrand (N+1, m)
    if u.ndim != 3 or u.shape[2] != m or u.shape[1] not in (1, M):
        raise ValueError(f"integrand shape {np.shape(values)} does not conform to increments {np.shape(inc)}")
    return u, inc


def _squeeze(out: np.ndarray, single: bool) -> np.ndarray:
    return out[:, 0] if single else out


def forward_ito(integrand: DiscretePath, dW) -> DiscretePath:
    """I_k = sum_{j<k} u_{t_j} . dW_j, I_0 = 0."""
    u, inc = _align(integrand.values, dW)
    terms = np.sum(u[:-1] * inc, axis=2)
    out = np.zeros((inc.shape[0] + 1, terms.shape[1]))
    np.cumsum(terms, axis=0, out=out[1:])
    return DiscretePath(integrand.grid, _squeeze(out, np.ndim(dW) < 3))


def backward_ito(integrand: DiscretePath, dB) -> DiscretePath:
    """I_k = sum_{j>=k} v_{t_{j+1}} . dB_j, I_N = 0."""
    u, inc = _align(integrand.values, dB)
    terms = np.sum(u[1:] * inc, axis=2)
    out = np.zeros((inc.shape[0] + 1, terms.shape[1]))
    out[:-1] = np.cumsum(terms[::-1], axis=0)[::-1]
    return DiscretePath(integrand.grid, _squeeze(out, np.ndim(dB) < 3))


@dataclass(frozen=True)
class ItoResidual:
    """Defect of the discrete |alpha|^2 identity.

    per_path: defect at t_N on each path; max_abs / rms over paths;
    mean: expectation-form defect (the stochastic integrals drop out);
    mean_square: E[defect^2], the quantity whose Delta-t slope is fitted.
    """

    per_path: np.ndarray
    max_abs: float
    rms: float
    mean: float
    mean_square: float


def reconstruct_alpha(alpha0, beta, gamma, delta, dW, dB, dt) -> np.ndarray:
    """alpha_{k+1} = alpha_k + beta_k dt + gamma_{k+1} dB_k + delta_k dW_k.

    beta, gamma, delta: (N+1, M, m); dW, dB: (N, M, m).  Returns (N+1, M, m).
    """
    n, M, m = dW.shape
    a = np.empty((n + 1, M, m))
    a[0] = np.broadcast_to(np.asarray(alpha0, dtype=float), (M, m))
    for k in range(n):
        a[k + 1] = a[k] + beta[k] * dt + gamma[k + 1] * dB[k] + delta[k] * dW[k]
    return a


def ito_residual(alpha0, beta: DiscretePath, gamma: DiscretePath, delta: DiscretePath,
                 noise) -> ItoResidual:
    """Compare |alpha_T|^2 with the right side of the extended Ito formula

        |a_0|^2 + 2 int <a, beta> ds + 2 int <a, gamma> dB^ + 2 int <a, delta> dW
                - int |gamma|^2 ds + int |delta|^2 ds

    on every path of ``noise`` (NoiseBundle or Lattice).  The forward-noise
    coordinates of alpha are driven by dW and the backward ones by dB, so
    alpha lives in R^m with m = d = l.  The Riemann sum carries its own
    square term beta^2 dt^2, so purely deterministic alphas give exactly 0.
    """
    grid = beta.grid
    dt = grid.dt
    dW = np.swapaxes(np.asarray(noise.dW, dtype=float), 0, 1)
    dB = np.swapaxes(np.asarray(noise.dB, dtype=float), 0, 1)
    if dW.shape != dB.shape:
        raise ValueError("the identity needs matching forward and backward dimensions")
    n, M, m = dW.shape
    if n != grid.N:
        raise ValueError("noise and paths live on different grids")

    def full(p: DiscretePath) -> np.ndarray:
        v = p.values
        if v.ndim == 1:
            v = v[:, None, None]
        elif v.ndim == 2:
            v = v[:, None, :]
        if v.shape[2] != m:
            raise ValueError(f"path dimension {v.shape[2]} does not match noise dimension {m}")
        return np.broadcast_to(v, (n + 1, M, m))

    b, g, d = full(beta), full(gamma), full(delta)
    a = reconstruct_alpha(alpha0, b, g, d, dW, dB, dt)
    riemann = np.sum(2 * a[:-1] * b[:-1] * dt + (b[:-1] * dt) ** 2, axis=(0, 2))
    fwd = np.sum(2 * a[:-1] * d[:-1] * dW, axis=(0, 2))
    bwd = np.sum(2 * a[1:] * g[1:] * dB, axis=(0, 2))
    qv = np.sum((-g[1:] ** 2 + d[:-1] ** 2) * dt, axis=(0, 2))
    lhs = np.sum(a[-1] ** 2, axis=1)
    res = lhs - (np.sum(a[0] ** 2, axis=1) + riemann + fwd + bwd + qv)
    w = getattr(noise, "weights", np.full(M, 1.0 / M))
    return ItoResidual(
        per_path=res,
        max_abs=float(np.max(np.abs(res))),
        rms=float(np.sqrt(np.dot(w, res ** 2))),
        mean=float(np.dot(w, res)),
        mean_square=float(np.dot(w, res ** 2)),
    )


def loglog_slope(x, y) -> tuple[float, float]:
    """Least-squares slope of log y against log x and its standard error."""
    lx = np.log(np.asarray(x, dtype=float))
    ly = np.log(np.asarray(y, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope")
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    if lx.size > 2:
        resid = ly - A @ coef
        s2 = resid @ resid / (lx.size - 2)
        se = float(np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2)))
    else:
        se = float("nan")
    return float(coef[0]), se
