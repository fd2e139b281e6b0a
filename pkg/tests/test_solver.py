import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbdsde.cli import monotone_system
from fbdsde.game import example11_build
from fbdsde.model import ControlPath, StateQuadruple, linear_quadratic, zero_system
from fbdsde.noise import build_lattice, make_grid, sample_noise
from fbdsde.smp import spike_test_system
from fbdsde.solver import (ConvergenceError, PartiallyCoupledSystem, SolverConfig, StateSystem,
                           fields_from_state, krylov, picard, polynomial_basis, residual_verify,
                           solve_lattice, solve_partial_lattice, solve_partially_coupled_mc,
                           state_from_classes, walsh_basis, write_node_table)
from oracles import state_oracle

TIGHT = SolverConfig(picard_tol=1e-13, picard_max_iters=500)


def mixed_system():
    return linear_quadratic(
        f={"state": [0.3, -0.4, 0.2, 0.1], "const": 0.1, "state_v": [0.2, 0, 0, 0]},
        F={"state": [0.2, 0.3, -0.1, 0.2], "v": 0.5},
        g={"state": [[0.1, 0.2, 0, 0.1]], "v": [0.3]},
        G={"state": [[0.1, -0.1, 0.2, 0]], "const": [0.2]},
        h=(0.7, 0.2), x=0.5, name="mixed")


def linear_bdsde():
    # dY = -(Y/2 + 1/2) dt - (Y/2) dB^ + Z dW, Y_T = 1
    return linear_quadratic(F={"state": [0, 0.5, 0, 0], "const": 0.5},
                            G={"state": [[0, 0.5, 0, 0]]}, h=(0.0, 1.0), name="bdsde")


def _max_err(sol, ref):
    return max(np.abs(sol.y - ref.y[..., 0]).max(), np.abs(sol.Y - ref.Y[..., 0]).max(),
               np.abs(sol.z - ref.z).max(), np.abs(sol.Z - ref.Z).max())


@pytest.mark.parametrize("make,v", [(spike_test_system, 0.3), (example11_build, 0.5),
                                    (mixed_system, -0.4), (linear_bdsde, 0.0)])
@pytest.mark.parametrize("N", [1, 2, 3])
def test_lattice_matches_dense_oracle(make, v, N):
    coeffs = make()
    lat = build_lattice(make_grid(1.0, N))
    sol = solve_lattice(coeffs, ControlPath.constant(lat.grid, v, coeffs.domain), lat, TIGHT).solution
    assert _max_err(sol, state_oracle(coeffs, lat, v)) < 1e-10


def test_zero_system_one_sweep():
    lat = build_lattice(make_grid(1.0, 3))
    rep = solve_lattice(zero_system(), ControlPath.constant(lat.grid, 0.0), lat)
    assert rep.iterations == 1
    assert not np.any(rep.solution.y) and not np.any(rep.solution.Z)


def test_example11_zero_solution():
    lat = build_lattice(make_grid(1.0, 3))
    coeffs = example11_build()
    u = ControlPath.constant(lat.grid, 0.0, coeffs.domain)
    rep = solve_lattice(coeffs, u, lat)
    assert max(np.abs(a).max() for a in (rep.solution.y, rep.solution.Y, rep.solution.z, rep.solution.Z)) == 0
    assert max(rep.residuals.values()) < 1e-12


def test_residual_verify_detects_shift():
    lat = build_lattice(make_grid(1.0, 3))
    coeffs = example11_build()
    u = ControlPath.constant(lat.grid, 0.0, coeffs.domain)
    zero = StateQuadruple.zeros(lat.grid, lat.n_atoms)
    assert max(residual_verify(coeffs, u, zero, lat).values()) == 0.0
    shifted = StateQuadruple(lat.grid, zero.y, zero.Y + 0.1, zero.z, zero.Z)
    r = residual_verify(coeffs, u, shifted, lat)
    assert np.isclose(r["backward_sup"], 0.1) and r["forward_sup"] == 0.0


def test_measurability_after_solve():
    lat = build_lattice(make_grid(1.0, 3))
    coeffs = spike_test_system()
    sol = solve_lattice(coeffs, ControlPath.constant(lat.grid, 0.2), lat).solution
    for k in range(lat.N + 1):
        assert lat.is_measurable(sol.y[k], k) and lat.is_measurable(sol.Y[k], k)


def test_picard_divergence_raises_and_krylov_recovers():
    lat = build_lattice(make_grid(1.0, 2))
    coeffs = monotone_system()
    system = StateSystem(coeffs, ControlPath.constant(lat.grid, 0.0), lat.grid)
    with pytest.raises(ConvergenceError) as info:
        picard(lat, system, SolverConfig(picard_max_iters=400))
    assert info.value.history
    res = krylov(lat, system, TIGHT)
    sol = state_from_classes(lat, res.fields)
    assert _max_err(sol, state_oracle(coeffs, lat, 0.0)) < 1e-10


@pytest.mark.parametrize("bad", [dict(picard_max_iters=0), dict(picard_tol=0.0), dict(relaxation=1.5),
                                 dict(noise_features=("zz",)), dict(mc_batches=1)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def test_node_table_full_precision(tmp_path):
    lat = build_lattice(make_grid(1.0, 2))
    sol = solve_lattice(spike_test_system(), ControlPath.constant(lat.grid, 0.0), lat).solution
    path = tmp_path / "nodes.csv"
    write_node_table(path, sol, lat.weights)
    rows = list(csv.reader(open(path)))
    assert len(rows) == lat.N + 2
    numbers = [float(c) for c in rows[1][1:]]
    assert all(np.isfinite(numbers))


def _partial(terminal, g=None, x=0.3):
    zero = lambda t, x, *a: np.zeros_like(x)
    return PartiallyCoupledSystem(b=zero, sigma=lambda t, x, v: np.ones_like(x), f=zero,
                                  g=g or zero, terminal=terminal, x=x, T=1.0)


def test_mc_martingale_and_second_moment():
    grid = make_grid(1.0, 4)
    noise = sample_noise(grid, 1, 1, 20_000, 3)
    cfg = SolverConfig(mc_paths=20_000)
    u = ControlPath.constant(grid, 0.0)
    for terminal, exact in ((lambda x: x, 0.3), (lambda x: x ** 2, 0.09 + 1.0)):
        rep = solve_partially_coupled_mc(_partial(terminal), u, noise, cfg)
        assert abs(rep.estimates["Y0_mean"] - exact) < 3 * rep.stderr["Y0_mean"] + 1e-12


def test_mc_matches_lattice_with_backward_noise():
    grid = make_grid(1.0, 3)
    system = _partial(lambda x: x, g=lambda t, x, y, Z, v: 0.5 * y)
    u = ControlPath.constant(grid, 0.0)
    lat_Y0 = solve_partial_lattice(system, u, build_lattice(grid)).estimates["Y0_mean"]
    noise = sample_noise(grid, 1, 1, 100_000, 0, kind="rademacher")
    rep = solve_partially_coupled_mc(system, u, noise, SolverConfig(), basis=walsh_basis())
    assert abs(rep.estimates["Y0_mean"] - lat_Y0) < 3 * rep.stderr["Y0_mean"]


@settings(max_examples=20, deadline=None)
@given(vals=st.lists(st.sampled_from([-1.0, 0.0, 2.0]), min_size=8, max_size=8), deg=st.integers(0, 5))
def test_polynomial_basis_never_singular(vals, deg):
    X = np.array(vals)
    dB = np.zeros(8)
    Phi = polynomial_basis(deg, features=("one",))(0, X, dB, dB)
    assert Phi.shape[1] == min(deg, len(set(vals)) - 1) + 1
    assert np.linalg.matrix_rank(Phi) == Phi.shape[1]


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000), relax=st.sampled_from([0.5, 1.0]))
def test_fixed_point_independent_of_warm_start(seed, relax):
    lat = build_lattice(make_grid(1.0, 2))
    coeffs = spike_test_system()
    u = ControlPath.constant(lat.grid, 0.1)
    rng = np.random.default_rng(seed)
    n = lat.n_atoms
    warm = StateQuadruple(lat.grid, *(rng.standard_normal(s) for s in [(3, n), (3, n), (3, n, 1), (3, n, 1)]))
    cfg = SolverConfig(picard_tol=1e-13, picard_max_iters=2000, relaxation=relax)
    a = solve_lattice(coeffs, u, lat, cfg).solution
    b = solve_lattice(coeffs, u, lat, cfg, warm=warm).solution
    assert np.abs(a.Y - b.Y).max() < 1e-10
