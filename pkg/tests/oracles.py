"""Independent reference solutions for small lattices.

The discrete forward-backward system on a binary lattice is affine when the
coefficients are, so the whole thing (every field, node and atom) is one
square linear system.  ``dense_solve`` assembles it from scratch and solves it
with a single dense factorisation.  It shares nothing with the sweep engine
beyond the increment table: conditional expectations are computed here by
grouping atoms on their own sign patterns.

Scheme (per atom, k = 0..N-1):
    y_{k+1} = E_{k+1}[y_k + f_k dt + g_k dW_k]       z_{k+1} = E_{k+1}[(...) dB_k] / dt
    Y_k     = E_k[Y_{k+1} + F_{k+1} dt + G_{k+1} dB_k] Z_k   = E_k[(...) dW_k] / dt
    y_0 = initial(Y_0), Y_N = terminal(y_N), z_0 = 0, Z_N = 0
where F_k is measurable w.r.t. W_0..W_{k-1} and B_k..B_{N-1}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DenseSolution:
    y: np.ndarray  # (N+1, A, ny)
    Y: np.ndarray  # (N+1, A, nY)
    z: np.ndarray  # (N+1, A, ny)
    Z: np.ndarray  # (N+1, A, nY)


def cond_matrix(sw: np.ndarray, sb: np.ndarray, k: int) -> np.ndarray:
    """Averaging operator for sigma(W_0..W_{k-1}, B_k..B_{N-1})."""
    keys = [tuple(sw[a, :k]) + ("|",) + tuple(sb[a, k:]) for a in range(sw.shape[0])]
    P = np.zeros((len(keys), len(keys)))
    groups: dict = {}
    for a, key in enumerate(keys):
        groups.setdefault(key, []).append(a)
    for members in groups.values():
        P[np.ix_(members, members)] = 1.0 / len(members)
    return P


def _affine(fn, A, sizes):
    """Probe a map acting atom-wise on (y, Y, z, Z) blocks: const (A, out) and jac (A, out, m)."""
    m = sum(sizes)

    def call(zeta):
        parts, o = [], 0
        for s in sizes:
            parts.append(zeta[:, o:o + s])
            o += s
        return np.asarray(fn(*parts), dtype=float).reshape(A, -1)

    c = call(np.zeros((A, m)))
    J = np.empty((A, c.shape[1], m))
    for j in range(m):
        e = np.zeros((A, m))
        e[:, j] = 1.0
        J[:, :, j] = call(e) - c
    return c, J


def dense_solve(dW, dB, dt, ny, nY, fwd, bwd, initial, terminal) -> DenseSolution:
    """fwd(k, y, Y, z, Z) -> (f, g) and bwd(k, ...) -> (F, G), all shaped (A, ny|nY);
    initial(Y0) -> (A, ny); terminal(yN) -> (A, nY).  dW, dB: (A, N)."""
    A, N = dW.shape
    sw, sb = np.sign(dW), np.sign(dB)
    sizes = (ny, nY, ny, nY)
    m = sum(sizes)
    block = (N + 1) * A

    def col(field, k, a, i):
        width = sizes[field]
        base = sum(s * block for s in sizes[:field])
        return base + (k * A + a) * width + i

    n = sum(sizes) * block
    M = np.zeros((n, n))
    rhs = np.zeros(n)
    row = 0

    def local(k, a):
        """Unknown columns of the local vector zeta_k at atom a."""
        return [col(f, k, a, i) for f in range(4) for i in range(sizes[f])]

    P = [cond_matrix(sw, sb, k) for k in range(N + 1)]

    # initial and terminal couplings
    c0, J0 = _affine(lambda y, Y, z, Z: initial(Y), A, sizes)
    cN, JN = _affine(lambda y, Y, z, Z: terminal(y), A, sizes)
    for a in range(A):
        for i in range(ny):
            M[row, col(0, 0, a, i)] = 1.0
            M[row, local(0, a)] -= J0[a, i]
            rhs[row] = c0[a, i]
            row += 1
            M[row, col(2, 0, a, i)] = 1.0
            row += 1
        for i in range(nY):
            M[row, col(1, N, a, i)] = 1.0
            M[row, local(N, a)] -= JN[a, i]
            rhs[row] = cN[a, i]
            row += 1
            M[row, col(3, N, a, i)] = 1.0
            row += 1

    for k in range(N):
        cf, Jf = _affine(lambda y, Y, z, Z: fwd(k, y, Y, z, Z)[0], A, sizes)
        cg, Jg = _affine(lambda y, Y, z, Z: fwd(k, y, Y, z, Z)[1], A, sizes)
        cF, JF = _affine(lambda y, Y, z, Z: bwd(k + 1, y, Y, z, Z)[0], A, sizes)
        cG, JG = _affine(lambda y, Y, z, Z: bwd(k + 1, y, Y, z, Z)[1], A, sizes)
        # pre-values as affine rows: pre[b, i] = L[b, i] . unknowns + c[b, i]
        Lf = np.zeros((A, ny, n))
        cpf = np.zeros((A, ny))
        Lb = np.zeros((A, nY, n))
        cpb = np.zeros((A, nY))
        for b in range(A):
            lk, lk1 = local(k, b), local(k + 1, b)
            for i in range(ny):
                Lf[b, i, col(0, k, b, i)] += 1.0
                Lf[b, i, lk] += dt * Jf[b, i] + dW[b, k] * Jg[b, i]
                cpf[b, i] = dt * cf[b, i] + dW[b, k] * cg[b, i]
            for i in range(nY):
                Lb[b, i, col(1, k + 1, b, i)] += 1.0
                Lb[b, i, lk1] += dt * JF[b, i] + dB[b, k] * JG[b, i]
                cpb[b, i] = dt * cF[b, i] + dB[b, k] * cG[b, i]
        Pf, Pb = P[k + 1], P[k]
        for a in range(A):
            for i in range(ny):
                for weight, field in ((np.ones(A), 0), (dB[:, k] / dt, 2)):
                    w = Pf[a] * weight
                    M[row, col(field, k + 1, a, i)] += 1.0
                    M[row] -= w @ Lf[:, i, :]
                    rhs[row] = w @ cpf[:, i]
                    row += 1
            for i in range(nY):
                for weight, field in ((np.ones(A), 1), (dW[:, k] / dt, 3)):
                    w = Pb[a] * weight
                    M[row, col(field, k, a, i)] += 1.0
                    M[row] -= w @ Lb[:, i, :]
                    rhs[row] = w @ cpb[:, i]
                    row += 1
    assert row == n
    sol = np.linalg.solve(M, rhs)
    out, o = [], 0
    for s in sizes:
        out.append(sol[o:o + s * block].reshape(N + 1, A, s))
        o += s * block
    return DenseSolution(*out)


def state_oracle(coeffs, lattice, v: float) -> DenseSolution:
    """Reference for a scalar CoefficientSet under the constant control v."""
    t = lattice.grid.nodes
    dW, dB = lattice.dW[:, :, 0], lattice.dB[:, :, 0]
    A = dW.shape[0]
    vv = np.full(A, float(v))

    def args(y, Y, z, Z):
        return y[:, 0], Y[:, 0], z, Z

    def fwd(k, y, Y, z, Z):
        a = args(y, Y, z, Z)
        return coeffs.f(t[k], *a, vv), coeffs.g(t[k], *a, vv)

    def bwd(k, y, Y, z, Z):
        a = args(y, Y, z, Z)
        return coeffs.F(t[k], *a, vv), coeffs.G(t[k], *a, vv)

    return dense_solve(dW, dB, lattice.grid.dt, 1, 1, fwd, bwd,
                       lambda Y: np.full(Y.shape, coeffs.x),
                       lambda y: coeffs.h(y[:, 0])[:, None])


def game_oracle(p: dict, lattice) -> DenseSolution:
    """Scalar two-player game solved as one coupled system.

    State x with dB-coefficient k; each player's adjoint (y^i, h^i) with
    u^i = -B_i y^i / N_i.  Forward drift A x + B1 u1 + B2 u2 + C k + alpha,
    W-diffusion D x + E k + beta.  Adjoint generator A y + D h + R_i x
    (dt) and C y + E h + P_i k (dB), switched off at the last node;
    terminal Q_i x_N.  Fields: y = x, Y = (y1, y2), z = k, Z = (h1, h2).
    """
    dW, dB = lattice.dW[:, :, 0], lattice.dB[:, :, 0]
    N = lattice.N
    al, be = p.get("alpha", 0.0), p.get("beta", 0.0)

    def fwd(k, x, Y, kx, H):
        u1 = -p["B1"] * Y[:, 0] / p["N1"]
        u2 = -p["B2"] * Y[:, 1] / p["N2"]
        drift = p["A"] * x[:, 0] + p["B1"] * u1 + p["B2"] * u2 + p["C"] * kx[:, 0] + al
        diff = p["D"] * x[:, 0] + p["E"] * kx[:, 0] + be
        return drift[:, None], diff[:, None]

    def bwd(k, x, Y, kx, H):
        if k == N:
            return np.zeros_like(Y), np.zeros_like(Y)
        F = np.stack([p["A"] * Y[:, i] + p["D"] * H[:, i] + p[f"R{i + 1}"] * x[:, 0] for i in (0, 1)], 1)
        G = np.stack([p["C"] * Y[:, i] + p["E"] * H[:, i] + p[f"P{i + 1}"] * kx[:, 0] for i in (0, 1)], 1)
        return F, G

    return dense_solve(dW, dB, lattice.grid.dt, 1, 2, fwd, bwd,
                       lambda Y: np.full((Y.shape[0], 1), p["a"]),
                       lambda x: np.concatenate([p["Q1"] * x, p["Q2"] * x], axis=1))
