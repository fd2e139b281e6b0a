import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbdsde.game import example11_build
from fbdsde.model import (ControlDomain, ControlPath, StateQuadruple, check_lipschitz_bounds,
                          check_monotone, cost, hamiltonian, linear_quadratic, zero_system)
from fbdsde.noise import build_lattice, make_grid
from fbdsde.solver import solve_lattice

NEG_ID = dict(f={"state": [0, -1, 0, 0]}, F={"state": [1, 0, 0, 0]},
              g={"state": [[0, 0, 0, -1]]}, G={"state": [[0, 0, 1, 0]]})


def test_monotone_negative_identity():
    rep = check_monotone(linear_quadratic(**NEG_ID, h=(1.0, 0.0), mu=1.0), 2000, 0)
    assert rep.passed and rep.status == "pass" and rep.worst_margin <= 1e-12


def test_monotone_example11_degenerate():
    rep = check_monotone(example11_build(), 2000, 0)
    assert rep.status == "degenerate" and rep.passed


def test_monotone_decreasing_h_fails():
    rep = check_monotone(linear_quadratic(**NEG_ID, h=(-1.0, 0.0)), 2000, 0)
    assert rep.status == "fail" and rep.h_margin > 0


def test_monotone_rejects_unknown_variant():
    with pytest.raises(ValueError):
        check_monotone(example11_build(), 10, 0, variant="H5")


def test_lipschitz_reports():
    two = dict(f={"state": [0, 2, 0, 0]})
    ok = check_lipschitz_bounds(linear_quadratic(**two, lipschitz=2.0), 2000, 0)
    assert ok.lipschitz_emp <= 2 + 1e-12 and ok.lipschitz_ratio <= 1 + 1e-12
    bad = check_lipschitz_bounds(linear_quadratic(**two, lipschitz=1.0), 2000, 0)
    assert 1.9 < bad.lipschitz_ratio <= 2 + 1e-12
    z = check_lipschitz_bounds(zero_system(), 500, 0)
    assert z.lipschitz_emp == 0 and z.bound_emp == 0


@pytest.mark.parametrize("v", [1.0, -1.0])
def test_example11_hamiltonian(v):
    zero = (0.0, 0.0, [[0.0]], [[0.0]])
    H = hamiltonian(example11_build(), 0.0, zero, v, (0.0, 0.0, [[0.0]], [[0.0]]))
    assert np.allclose(H, 0.5)


def test_hamiltonian_zero_system():
    z = (0.0, 0.0, [[0.0]], [[0.0]])
    assert np.allclose(hamiltonian(zero_system(), 0.3, z, 0.0, z), 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=12, max_size=12))
def test_hamiltonian_affine_in_adjoint(c):
    coeffs = example11_build()
    state = (c[0], c[1], [[c[2]]], [[c[3]]])
    a1 = (c[4], c[5], [[c[6]]], [[c[7]]])
    a2 = (c[8], c[9], [[c[10]]], [[c[11]]])
    mid = tuple(np.asarray(p) * 0.3 + np.asarray(q) * 0.7 for p, q in zip(a1, a2))
    H = lambda a: hamiltonian(coeffs, 0.1, state, 0.4, a)
    assert np.allclose(H(mid), 0.3 * H(a1) + 0.7 * H(a2), atol=1e-12)


def test_cost_examples():
    grid = make_grid(1.0, 4)
    zero = StateQuadruple.zeros(grid, 3)
    coeffs = example11_build()
    assert cost(coeffs, zero, ControlPath.constant(grid, 0.0)).mean == 0.0
    unit = linear_quadratic(s_v=1.0)
    assert np.isclose(cost(unit, zero, ControlPath.constant(grid, 1.0)).mean, 1.0)


@pytest.mark.parametrize("c", [-0.8, 0.3, 1.0])
def test_example11_cost_lower_bound(c):
    lat = build_lattice(make_grid(1.0, 3))
    coeffs = example11_build()
    u = ControlPath.constant(lat.grid, c, coeffs.domain)
    sol = solve_lattice(coeffs, u, lat).solution
    assert cost(coeffs, sol, u, lat.weights).mean >= 0.5 * c * c - 1e-12


def test_control_domain_membership():
    dom = ControlDomain(-1.0, 1.0)
    assert dom.contains([-1.0, 0.2, 1.0]) and not dom.contains([1.5])
