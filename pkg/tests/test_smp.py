import numpy as np
import pytest

from fbdsde.game import example11_build
from fbdsde.model import ControlPath, StateQuadruple, zero_system
from fbdsde.noise import build_lattice, make_grid
from fbdsde.smp import (CONVENTIONS, SpikeSpec, check_smp, duality, order_experiment,
                        select_convention, solve_adjoint, solve_variational, spike_control,
                        spike_test_system, variational_inequality)
from fbdsde.solver import SolverConfig, solve_lattice

TIGHT = SolverConfig(picard_tol=1e-13, picard_max_iters=500)


@pytest.fixture(scope="module")
def lat3():
    return build_lattice(make_grid(1.0, 3))


def _setup(coeffs, lat, c=0.0):
    u = ControlPath.constant(lat.grid, c, coeffs.domain)
    return u, solve_lattice(coeffs, u, lat, TIGHT).solution


def test_spike_rounding_and_idempotence():
    grid = make_grid(1.0, 4)
    spec = SpikeSpec(0.0, 0.1, 1.0)
    assert spec.effective_eps(grid) == grid.dt
    u = ControlPath.constant(grid, 0.7)
    assert np.array_equal(spike_control(u, SpikeSpec(0.25, 0.5, 0.7)).values, u.values)
    full = spike_control(ControlPath.constant(grid, 0.0), SpikeSpec(0.0, 1.0, 1.0))
    assert np.array_equal(full.values, np.ones(5))
    with pytest.raises(ValueError):
        SpikeSpec(0.75, 0.5, 1.0).window(grid)


def test_variational_zero_without_spike(lat3):
    coeffs = spike_test_system()
    u, opt = _setup(coeffs, lat3, 0.4)
    var = solve_variational(coeffs, opt, u, SpikeSpec(0.0, 1 / 3, 0.4), lat3, TIGHT)
    assert max(np.abs(a).max() for a in (var.y, var.Y, var.z, var.Z)) == 0.0


def test_variational_linear_in_inhomogeneity(lat3):
    coeffs = spike_test_system()
    u, opt = _setup(coeffs, lat3)
    spec = SpikeSpec(1 / 3, 1 / 3, 1.0)
    one = solve_variational(coeffs, opt, u, spec, lat3, TIGHT)
    two = solve_variational(coeffs, opt, u, spec, lat3, TIGHT, scale=2.0)
    assert np.allclose(two.Y, 2 * one.Y, atol=1e-11) and np.allclose(two.z, 2 * one.z, atol=1e-11)


def test_example11_variational_is_exact_difference(lat3):
    # the system is linear with additive control, so y1 = y(u^eps) - y(u)
    coeffs = example11_build()
    u, opt = _setup(coeffs, lat3)
    spec = SpikeSpec(2 / 3, 1 / 3, 1.0)
    var = solve_variational(coeffs, opt, u, spec, lat3, TIGHT)
    pert = solve_lattice(coeffs, spike_control(u, spec), lat3, TIGHT).solution
    for a, b in ((var.y, pert.y), (var.Y, pert.Y), (var.z, pert.z), (var.Z, pert.Z)):
        assert np.abs(a - b).max() < 1e-11


def test_order_experiment_zero_system():
    lat = build_lattice(make_grid(1.0, 4))
    rep = order_experiment(zero_system(), ControlPath.constant(lat.grid, 0.0), 0.0, 1.0,
                           [0.25, 0.5, 0.75, 1.0], lat)
    assert all(np.all(v == 0) for v in rep.values.values())
    assert all(np.isnan(s) for s in rep.slopes.values())
    with pytest.raises(ValueError):
        order_experiment(zero_system(), ControlPath.constant(lat.grid, 0.0), 0.0, 1.0, [0.25, 0.5], lat)


def test_remainder_shrinks_with_eps():
    lat = build_lattice(make_grid(1.0, 8))
    coeffs = spike_test_system()
    eps = [m / 8 for m in (1, 2, 4, 8)]
    rep = order_experiment(coeffs, ControlPath.constant(lat.grid, 0.0), 0.0, 1.0, eps, lat)
    assert np.all(np.diff(rep.values["rem_y"]) > 0)
    assert rep.slopes["int_y1"] >= 1.35


def test_adjoint_vanishes_for_example11(lat3):
    coeffs = example11_build()
    u, opt = _setup(coeffs, lat3)
    adj = solve_adjoint(coeffs, opt, lat3, TIGHT, u)
    assert max(np.abs(a).max() for a in (adj.p, adj.q, adj.k, adj.h)) == 0.0


def test_adjoint_vanishes_without_cost(lat3):
    coeffs = zero_system()
    u, opt = _setup(coeffs, lat3, 0.3)
    adj = solve_adjoint(coeffs, opt, lat3, TIGHT, u)
    assert max(np.abs(a).max() for a in (adj.p, adj.q, adj.k, adj.h)) == 0.0


@pytest.mark.parametrize("spec", [SpikeSpec(0.0, 1 / 3, 1.0), SpikeSpec(1 / 3, 2 / 3, -0.7)])
def test_duality_selects_derived_convention(lat3, spec):
    coeffs = spike_test_system()
    u, opt = _setup(coeffs, lat3)
    var = solve_variational(coeffs, opt, u, spec, lat3, TIGHT)
    res = {}
    for conv in CONVENTIONS:
        adj = solve_adjoint(coeffs, opt, lat3, TIGHT, u, convention=conv)
        res[conv] = duality(coeffs, opt, u, spec, var, adj, lat3, conv).residual
    assert res["derived"] < 10 * TIGHT.picard_tol
    assert all(res[c] > 1e-4 for c in CONVENTIONS if c != "derived")
    chosen, reports = select_convention(coeffs, opt, u, spec, lat3, TIGHT)
    assert chosen == "derived" and set(reports) == set(CONVENTIONS)


def test_example11_smp_gaps(lat3):
    coeffs = example11_build()
    u, opt = _setup(coeffs, lat3)
    adj = solve_adjoint(coeffs, opt, lat3, TIGHT, u)
    rep = check_smp(coeffs, opt, u, adj, [-1.0, -0.5, 0.0, 0.5, 1.0], lattice=lat3)
    assert rep.passed and rep.min_gap == 0.0 and rep.argmin[2] == 0.0
    for v in (-1.0, -0.5, 0.5, 1.0):
        assert abs(rep.gaps[v] - 0.5 * v * v) < 1e-10 and abs(rep.gaps_max[v] - 0.5 * v * v) < 1e-10
    same = check_smp(coeffs, opt, u, adj, [0.0], lattice=lat3)
    assert same.min_gap == 0.0 and same.gaps_max[0.0] == 0.0


def test_smp_flags_suboptimal_control(lat3):
    coeffs = spike_test_system()
    u, opt = _setup(coeffs, lat3)
    adj = solve_adjoint(coeffs, opt, lat3, TIGHT, u)
    rep = check_smp(coeffs, opt, u, adj, np.linspace(-1, 1, 9), lattice=lat3)
    assert not rep.passed and rep.min_gap < -1e-3


def test_variational_inequality_example11():
    lat = build_lattice(make_grid(1.0, 10))
    coeffs = example11_build()
    u, opt = _setup(coeffs, lat)
    none = SpikeSpec(0.0, 0.2, 0.0)
    assert variational_inequality(coeffs, opt, u, none, solve_variational(coeffs, opt, u, none, lat), lat) == 0.0
    for m in (1, 2, 5, 10):
        spec = SpikeSpec(0.0, m / 10, 1.0)
        val = variational_inequality(coeffs, opt, u, spec, solve_variational(coeffs, opt, u, spec, lat), lat)
        assert np.isclose(val, 0.5 * spec.effective_eps(lat.grid), atol=1e-12)
