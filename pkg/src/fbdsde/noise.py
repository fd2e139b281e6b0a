"""Time grids, seeded Brownian increments and the exhaustive binary lattice.

The lattice replaces every increment of the forward driver W and the
backward driver B by an independent +/- sqrt(dt) coin.  Conditioning on

    F_{t_k} = sigma(dW_0 .. dW_{k-1}) v sigma(dB_k .. dB_{N-1})

is then a finite average over the unobserved coins.  With the atom index laid
out as [W bits by step][B bits by step] (most significant first) the
unobserved coins at index k form one contiguous block of bit positions, so a
conditional expectation is a single reshape + mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LATTICE_BUDGET = 24


@dataclass(frozen=True)
class TimeGrid:
    T: float
    N: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"need at least one step, got N={self.N}")
        if self.T / self.N < 1e-12:
            raise ValueError("time step below 1e-12")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return self.T * np.arange(self.N + 1) / self.N

    def index_of(self, t: float) -> int:
        """Nearest node index for time t (t must lie in [0, T])."""
        if t < -1e-12 or t > self.T + 1e-12:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return int(round(t / self.dt))


def make_grid(T: float, N: int) -> TimeGrid:
    return TimeGrid(float(T), int(N))


@dataclass(frozen=True)
class NoiseBundle:
    """M sampled paths of both drivers; arrays are (M, N, dim)."""

    grid: TimeGrid
    dW: np.ndarray
    dB: np.ndarray
    seed: int
    kind: str = "gaussian"

    @property
    def M(self) -> int:
        return self.dW.shape[0]

    @property
    def d(self) -> int:
        return self.dW.shape[2]

    @property
    def l(self) -> int:
        return self.dB.shape[2]

    def dW_at(self, k: int) -> np.ndarray:
        return self.dW[:, k, :]

    def dB_at(self, k: int) -> np.ndarray:
        return self.dB[:, k, :]

    @property
    def W(self) -> np.ndarray:
        """Forward driver at the nodes, (M, N+1, d), W_0 = 0."""
        return _cumulate(self.dW)

    @property
    def B(self) -> np.ndarray:
        """Backward driver at the nodes, (M, N+1, l), B_0 = 0."""
        return _cumulate(self.dB)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)


def _halving_mean(blocks: np.ndarray) -> np.ndarray:
    """Mean over axis 1 (a power of two) by repeated pairwise averaging; a
    constant block comes back bit-identical, so conditioning is idempotent."""
    while blocks.shape[1] > 1:
        blocks = 0.5 * (blocks[:, 0::2] + blocks[:, 1::2])
    return blocks


def _cumulate(inc: np.ndarray) -> np.ndarray:
    out = np.zeros((inc.shape[0], inc.shape[1] + 1, inc.shape[2]))
    np.cumsum(inc, axis=1, out=out[:, 1:, :])
    return out


def sample_noise(grid: TimeGrid, d: int, l: int, M: int, seed: int,
                 antithetic: bool = False, kind: str = "gaussian") -> NoiseBundle:
    """Draw M independent paths of (W, B) increments.

    ``kind="rademacher"`` draws +/- sqrt(dt) coins, i.e. samples atoms of the
    lattice with their natural weights.  With ``antithetic`` the second half
    of the paths are the negated first half (M must be even).
    """
    if M < 1:
        raise ValueError("need at least one path")
    if d < 1 or l < 1:
        raise ValueError("driver dimensions must be >= 1")
    if antithetic and M % 2:
        raise ValueError("antithetic sampling needs an even path count")
    rng = np.random.default_rng(seed)
    m = M // 2 if antithetic else M
    sq = np.sqrt(grid.dt)
    if kind == "gaussian":
        dW = rng.standard_normal((m, grid.N, d)) * sq
        dB = rng.standard_normal((m, grid.N, l)) * sq
    elif kind == "rademacher":
        dW = rng.choice([-sq, sq], size=(m, grid.N, d))
        dB = rng.choice([-sq, sq], size=(m, grid.N, l))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    if antithetic:
        dW = np.concatenate([dW, -dW])
        dB = np.concatenate([dB, -dB])
    return NoiseBundle(grid, dW, dB, int(seed), kind)


@dataclass(frozen=True)
class FiltrationIndex:
    """F_{t_k}: W increments 0..k-1 joined with B increments k..N-1."""

    k: int
    N: int

    def __post_init__(self):
        if not 0 <= self.k <= self.N:
            raise ValueError(f"filtration index {self.k} outside [0, {self.N}]")

    def observed(self) -> tuple[range, range]:
        return range(0, self.k), range(self.k, self.N)


@dataclass(frozen=True)
class Lattice:
    """All 2**((d+l)N) sign assignments of the increments, equal weights.

    Bit b of the atom index (counted from the most significant end) is the
    coin of W-step b//d, coordinate b%d for b < N*d, and of B-step
    (b-N*d)//l, coordinate (b-N*d)%l afterwards.  Coin 0 is +sqrt(dt).
    """

    grid: TimeGrid
    d: int
    l: int
    _signs_w: np.ndarray = field(repr=False, compare=False)
    _signs_b: np.ndarray = field(repr=False, compare=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def N(self) -> int:
        return self.grid.N

    @property
    def nbits(self) -> int:
        return (self.d + self.l) * self.N

    @property
    def n_atoms(self) -> int:
        return 1 << self.nbits

    # alias so lattice and noise bundles can be used interchangeably
    @property
    def M(self) -> int:
        return self.n_atoms

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_atoms, 1.0 / self.n_atoms)

    def dW_at(self, k: int) -> np.ndarray:
        key = ("W", k)
        if key not in self._cache:
            self._cache[key] = self._signs_w[:, k, :] * np.sqrt(self.grid.dt)
        return self._cache[key]

    def dB_at(self, k: int) -> np.ndarray:
        key = ("B", k)
        if key not in self._cache:
            self._cache[key] = self._signs_b[:, k, :] * np.sqrt(self.grid.dt)
        return self._cache[key]

    @property
    def dW(self) -> np.ndarray:
        return self._signs_w * np.sqrt(self.grid.dt)

    @property
    def dB(self) -> np.ndarray:
        return self._signs_b * np.sqrt(self.grid.dt)

    @property
    def W(self) -> np.ndarray:
        return _cumulate(self.dW)

    @property
    def B(self) -> np.ndarray:
        return _cumulate(self.dB)

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Exact expectation over atoms (axis 0)."""
        return np.asarray(values).mean(axis=0)

    def _block(self, k: int) -> tuple[int, int, int]:
        before = k * self.d
        hidden = (self.N - k) * self.d + k * self.l
        after = (self.N - k) * self.l
        return 1 << before, 1 << hidden, 1 << after

    def cond_expect(self, values: np.ndarray, at: int | FiltrationIndex) -> np.ndarray:
        """E[values | F_{t_k}], returned per atom (same shape as input)."""
        k = at.k if isinstance(at, FiltrationIndex) else int(at)
        if not 0 <= k <= self.N:
            raise ValueError(f"filtration index {k} outside [0, {self.N}]")
        v = np.asarray(values, dtype=float)
        if v.shape[0] != self.n_atoms:
            raise ValueError(
                f"expected {self.n_atoms} atom values, got leading dim {v.shape[0]}")
        return np.array(self.cond_view(v, k))

    def cond_update(self, values: np.ndarray, k: int, out: np.ndarray,
                    relax: float = 1.0) -> float:
        """Write E[values | F_{t_k}] into the contiguous array ``out`` (blended
        with its old content when relax < 1); return the sup-norm change."""
        pre, hid, post = self._block(k)
        shape = (pre, hid, post) + values.shape[1:]
        m = _halving_mean(values.reshape(shape))
        o = out.reshape(shape)
        if relax < 1:
            m = relax * m + (1 - relax) * o
        change = float(np.max(np.abs(o - m))) if o.size else 0.0
        o[...] = m
        return change

    def cond_view(self, v: np.ndarray, k: int) -> np.ndarray:
        """Unchecked conditional expectation as a (possibly read-only)
        broadcast view shaped like ``v``; callers copy it out."""
        pre, hid, post = self._block(k)
        if hid == 1:
            return v
        rest = v.shape[1:]
        blocks = v.reshape((pre, hid, post) + rest)
        m = _halving_mean(blocks)
        return np.broadcast_to(m, blocks.shape).reshape(v.shape)

    # -- class-level representation ---------------------------------------
    # An F_{t_k}-measurable field is determined by its value on each class;
    # class c at node k collects the atoms whose observed bits
    # (W-steps 0..k-1, then B-steps k..N-1) spell c.

    def n_classes(self, k: int) -> int:
        pre, _, post = self._block(k)
        return pre * post

    def representatives(self, k: int) -> np.ndarray:
        """One atom per class at node k (the one with all hidden coins +)."""
        pre, hid, post = self._block(k)
        c = np.arange(pre * post)
        return (c // post) * (hid * post) + c % post

    def compress(self, values: np.ndarray, k: int) -> np.ndarray:
        """Per-atom F_{t_k}-measurable field -> per-class values."""
        pre, hid, post = self._block(k)
        v = np.asarray(values)
        return v.reshape((pre, hid, post) + v.shape[1:])[:, 0].reshape((pre * post,) + v.shape[1:])

    def expand(self, values: np.ndarray, k: int) -> np.ndarray:
        """Per-class values at node k -> per-atom field (a fresh array)."""
        pre, hid, post = self._block(k)
        v = np.asarray(values)
        rest = v.shape[1:]
        b = np.broadcast_to(v.reshape((pre, 1, post) + rest), (pre, hid, post) + rest)
        return b.reshape((self.n_atoms,) + rest)

    def is_measurable(self, values: np.ndarray, k: int, tol: float = 0.0) -> bool:
        v = np.asarray(values)
        return bool(np.max(np.abs(self.expand(self.compress(v, k), k) - v), initial=0.0) <= tol)

    def step_dims(self, k: int) -> tuple[int, int, int, int]:
        """Axes of the step-k joint space (W bits 0..k-1, dW_k, dB_k, B bits k+1..N-1)."""
        return 1 << (k * self.d), 1 << self.d, 1 << self.l, 1 << ((self.N - k - 1) * self.l)

    def coin_values(self, dim: int) -> np.ndarray:
        """(2**dim, dim) increments of one step block, most significant coordinate first."""
        idx = np.arange(1 << dim)
        bits = (idx[:, None] >> np.arange(dim - 1, -1, -1)) & 1
        return (1 - 2 * bits) * np.sqrt(self.grid.dt)

    def expand_step(self, values: np.ndarray, k: int) -> np.ndarray:
        """Field on the step-k joint space (W bits 0..k, B bits k..N-1) -> atoms."""
        lead = 1 << ((k + 1) * self.d)
        hid = 1 << ((self.N - k - 1) * self.d + k * self.l)
        post = 1 << ((self.N - k) * self.l)
        v = np.asarray(values)
        rest = v.shape[1:]
        b = np.broadcast_to(v.reshape((lead, 1, post) + rest), (lead, hid, post) + rest)
        return b.reshape((self.n_atoms,) + rest)

    def class_ids(self, k: int) -> np.ndarray:
        """Integer label of the F_{t_k}-class of every atom."""
        pre, hid, post = self._block(k)
        idx = np.arange(self.n_atoms)
        return (idx // (hid * post)) * post + idx % post

    def atom_index(self, bundle: NoiseBundle) -> np.ndarray:
        """Map +/- sqrt(dt) sampled paths onto lattice atom indices."""
        if bundle.grid != self.grid or bundle.d != self.d or bundle.l != self.l:
            raise ValueError("bundle and lattice disagree on grid or dimensions")
        bits = np.concatenate([
            (bundle.dW < 0).reshape(bundle.M, -1),
            (bundle.dB < 0).reshape(bundle.M, -1),
        ], axis=1).astype(np.int64)
        weights = 1 << np.arange(self.nbits - 1, -1, -1, dtype=np.int64)
        return bits @ weights


def build_lattice(grid: TimeGrid, d: int = 1, l: int = 1) -> Lattice:
    nbits = (d + l) * grid.N
    if nbits > LATTICE_BUDGET:
        raise ValueError(
            f"lattice needs 2**{nbits} atoms, budget is 2**{LATTICE_BUDGET}")
    n = 1 << nbits
    idx = np.arange(n, dtype=np.int64)
    signs = np.empty((n, nbits), dtype=np.int8)
    for b in range(nbits):
        signs[:, b] = 1 - 2 * ((idx >> (nbits - 1 - b)) & 1)
    sw = signs[:, : grid.N * d].reshape(n, grid.N, d)
    sb = signs[:, grid.N * d:].reshape(n, grid.N, l)
    return Lattice(grid, d, l, np.ascontiguousarray(sw), np.ascontiguousarray(sb))
