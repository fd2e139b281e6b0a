import numpy as np
import pytest

from fbdsde.game import (GameSpec, OpenLoop, build_aggregate, check_commutation, derived_game,
                         nash_controls, scalar_game, solve_game, verify_nash)
from fbdsde.noise import build_lattice, make_grid, sample_noise
from fbdsde.solver import SolverConfig
from oracles import game_oracle

TIGHT = SolverConfig(picard_tol=1e-13, picard_max_iters=500)
STOCH = dict(A=-0.2, C=0.3, D=0.4, E=0.5, beta=0.5, R1=1.0, Q1=1.0, P1=0.5,
             R2=0.5, Q2=0.3, P2=0.2, N2=2.0)
BASE = dict(A=0.0, C=0.0, D=0.0, E=0.5, B1=1.0, B2=1.0, R1=0.0, R2=0.0, P1=0.0, P2=0.0,
            Q1=0.0, Q2=0.0, N1=1.0, N2=1.0, a=1.0)


def _two_by_two(**over):
    I = np.eye(2)
    base = dict(A=-0.1 * I, C=0.1 * I, D=0.1 * I, E=0.5 * I, B1=I, B2=I, R1=I, R2=I, P1=0 * I,
                P2=0 * I, Q1=I, Q2=I, N1=I, N2=I, a=[1.0, 0.0])
    base.update(over)
    return GameSpec(**base)


def test_commutation_scalar_and_diagonal():
    assert check_commutation(derived_game()).passed
    assert check_commutation(_two_by_two(A=np.diag([0.1, -0.3]), B1=np.diag([1.0, 2.0]))).passed


def test_commutation_rotation_fails():
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    spec = _two_by_two(A=rot, B1=np.diag([1.0, 2.0]))
    rep = check_commutation(spec)
    assert not rep.passed and rep.worst > 1e-10
    with pytest.raises(ValueError):
        build_aggregate(spec)


def test_aggregate_scalar_formulas():
    spec = scalar_game(B1=2.0, N1=4.0, B2=1.0, N2=0.5, P1=0.3, P2=0.7, R1=1.0, Q2=2.0)
    agg = build_aggregate(spec)
    assert np.isclose(agg.P[0, 0], 0.3 * 4 / 4 + 0.7 * 1 / 0.5)
    assert np.isclose(agg.S[0, 0], 1.0 + 2.0)
    zero = build_aggregate(scalar_game())
    assert not np.any(zero.R) and not np.any(zero.Q)


@pytest.mark.parametrize("bad", [dict(E=1.0), dict(E=0.0), dict(N1=0.0), dict(R1=-1.0), dict(variant="other")])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        scalar_game(**bad)


def test_from_dict_rejects_unknown():
    with pytest.raises(ValueError):
        GameSpec.from_dict({**BASE, "Z": 1.0})


@pytest.mark.parametrize("over", [{}, {"R1": 1.0, "Q1": 1.0}, STOCH])
def test_game_matches_coupled_oracle(over):
    lat = build_lattice(make_grid(1.0, 2))
    c = solve_game(scalar_game(**over), lat, TIGHT)
    o = game_oracle({**BASE, **over}, lat)
    assert np.abs(c.x - o.y).max() < 1e-10 and np.abs(c.kx - o.z).max() < 1e-10
    assert np.abs(c.y1[..., 0] - o.Y[..., 0]).max() < 1e-10
    assert np.abs(c.y2[..., 0] - o.Y[..., 1]).max() < 1e-10
    assert np.abs(c.h1[..., 0] - o.Z[..., 0]).max() < 1e-10
    assert max(c.aggregation_defect()) < 1e-10


def test_zero_cost_game():
    lat = build_lattice(make_grid(1.0, 3))
    spec = scalar_game()
    c = solve_game(spec, lat)
    assert not np.any(c.u1) and not np.any(c.u2)
    noise = sample_noise(lat.grid, 1, 1, 1000, 0, kind="rademacher")
    dev = OpenLoop(lambda t: np.full(1, 0.5), 1, "half")
    rep = verify_nash(spec, c, {1: [dev], 2: [dev]}, noise)
    for r in rep.rows:
        assert np.isclose(r.exact, 0.5 * 0.25 * spec.T)


def test_symmetric_players_and_nash_formula():
    lat = build_lattice(make_grid(1.0, 3))
    spec = scalar_game(R1=1.0, R2=1.0, Q1=0.5, Q2=0.5, P1=0.2, P2=0.2, D=0.3)
    c = solve_game(spec, lat)
    assert np.abs(c.u1 - c.u2).max() < 1e-9
    u1, u2 = nash_controls(spec, c.y1, c.y2)
    assert np.array_equal(u1, c.u1) and np.array_equal(u2, c.u2)
    assert np.allclose(c.u1, -c.y1)


def test_own_control_is_not_a_deviation():
    lat = build_lattice(make_grid(1.0, 3))
    spec = derived_game()
    c = solve_game(spec, lat)
    noise = sample_noise(lat.grid, 1, 1, 2000, 1, kind="rademacher")
    rep = verify_nash(spec, c, {1: [c.control(1)], 2: [c.control(2)]}, noise)
    assert all(abs(r.diff) < 1e-12 and abs(r.exact) < 1e-12 for r in rep.rows)


def test_consistent_variant_passes_literal_fails():
    lat = build_lattice(make_grid(1.0, 4))
    noise = sample_noise(lat.grid, 1, 1, 20_000, 3, kind="rademacher")
    good = verify_nash(scalar_game(**STOCH), solve_game(scalar_game(**STOCH), lat), None, noise)
    assert good.passed and max(abs(r.first_order_exact) for r in good.rows) < 1e-12
    lit = scalar_game(**STOCH, variant="literal")
    bad = verify_nash(lit, solve_game(lit, lat), None, noise)
    assert not bad.passed and max(abs(r.first_order_exact) for r in bad.rows) > 1e-2
