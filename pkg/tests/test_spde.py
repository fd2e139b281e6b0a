import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbdsde.model import ControlDomain, ControlPath
from fbdsde.noise import build_lattice, make_grid
from fbdsde.solver import SolverConfig
from fbdsde.spde import (check_a2, check_smp_spde, derived_cases, evaluate_u, fd_comparator, lq_spde,
                         mc_vs_lattice, polynomial_spde, spde_to_fbdsde)

CFG = SolverConfig(mc_paths=20_000, seed=4)


def test_a2_contraction_enforced():
    with pytest.raises(ValueError):
        polynomial_spde(g={"z": 1.2})
    with pytest.raises(ValueError):
        polynomial_spde(g={"z": 0.1}, alpha=1.0)
    m = polynomial_spde(g={"z": 0.6, "y": 2.0})
    rep = check_a2(m)
    assert rep.passed and rep.alpha_needed <= m.alpha < 1 and rep.c_needed > 0


def test_bridge_structure():
    m = polynomial_spde(g={"y": 0.3}, T=2.0)
    s = spde_to_fbdsde(m, 0.5, 1.25)
    assert s.t0 == 0.5 and s.T == 2.0 and s.x == 1.25
    x = np.array([0.0, 1.0])
    assert np.allclose(s.sigma(0.5, x, np.zeros(2)), 1.0)
    assert polynomial_spde().g_zero and not m.g_zero


@pytest.mark.parametrize("t,x", [(0.0, 0.0), (0.4, -0.7)])
def test_evaluate_u_heat_examples(t, x):
    lin = evaluate_u(polynomial_spde(h=(0.0, 1.0, 0.0)), 0.0, t, x, CFG)
    assert abs(lin.mean - x) < 3 * lin.stderr + 1e-12
    sq = evaluate_u(polynomial_spde(h=(0.0, 0.0, 1.0)), 0.0, t, x, CFG)
    assert abs(sq.mean - (x * x + 1.0 - t)) < 3 * sq.stderr


def test_evaluate_u_rejects_terminal_time():
    with pytest.raises(ValueError):
        evaluate_u(polynomial_spde(), 0.0, 1.0, 0.0, CFG)


def test_fd_heat_second_moment():
    fd = fd_comparator(polynomial_spde(h=(0.0, 0.0, 1.0)), 0.0, [0.0, 0.5], [0.0, 0.5], level=3)
    assert abs(fd.at(0.0, 0.0) - 1.0) < 1e-3


@settings(max_examples=10, deadline=None)
@given(h0=st.floats(-1, 1), h1=st.floats(-2, 2), b=st.floats(-1, 1))
def test_fd_exact_for_linear_data(h0, h1, b):
    m = polynomial_spde(b=(b, 0.0, 0.0), sigma=(0.0, 0.0), h=(h0, h1, 0.0))
    ts, xs = [0.0, 0.5], [-0.5, 0.0, 0.5]
    fd = fd_comparator(m, 0.0, xs, ts, level=1)
    for t in ts:
        for x in xs:
            assert abs(fd.at(t, x) - (h0 + h1 * (x + b * (1 - t)))) < 1e-12


def test_fd_pure_source(tmp_path):
    fd = fd_comparator(polynomial_spde(f={"const": 1.0}), 0.0, [0.0, 1.0], [0.0, 0.3], level=1)
    assert np.allclose(fd.u, [[1.0, 1.0], [0.7, 0.7]], atol=1e-12)
    fd.to_csv(tmp_path / "fd.csv")
    assert (tmp_path / "fd.csv").read_text().count("\n") >= 3


def test_fd_requires_deterministic_pde():
    with pytest.raises(ValueError):
        fd_comparator(polynomial_spde(g={"y": 0.2}), 0.0, [0.0], [0.0])


def test_small_backward_noise_matches_lattice():
    model, control, x = derived_cases()["kappa_y"]
    row = mc_vs_lattice(model, control, x, N=3, M=50_000, seed=2)
    assert row.passed


def test_lq_smp_gap():
    model = lq_spde()
    lat = build_lattice(make_grid(model.T, 3))
    u = ControlPath.constant(lat.grid, 0.0)
    rep = check_smp_spde(model, u, lat, [-1.0, 0.0, 0.5, 1.0])
    assert rep.passed and rep.min_gap == 0.0
    for v in (-1.0, 0.5, 1.0):
        assert abs(rep.gaps[v] - 0.5 * v * v) < 1e-10


def test_control_free_model_has_no_gap():
    model = polynomial_spde(f={"y": -0.3}, h=(0.0, 1.0, 0.0), g={"y": 0.2})
    lat = build_lattice(make_grid(model.T, 2))
    u = ControlPath.constant(lat.grid, 0.0, ControlDomain(-1.0, 1.0))
    rep = check_smp_spde(model, u, lat, [-1.0, 0.3, 1.0])
    assert max(abs(g) for g in rep.gaps.values()) < 1e-12
