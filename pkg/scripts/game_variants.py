"""Nash battery for the two readings of the game dynamics on a stochastic scalar game."""
from fbdsde import build_lattice, make_grid, sample_noise
from fbdsde.game import scalar_game, solve_game, verify_nash

PARAMS = dict(A=-0.2, C=0.3, D=0.4, E=0.5, beta=0.5, R1=1.0, Q1=1.0, P1=0.5,
              R2=0.5, Q2=0.3, P2=0.2, N2=2.0)


def main(N: int = 4, paths: int = 100_000) -> None:
    lat = build_lattice(make_grid(1.0, N))
    noise = sample_noise(lat.grid, 1, 1, paths, 3, kind="rademacher")
    for variant in ("consistent", "literal"):
        spec = scalar_game(**PARAMS, variant=variant)
        rep = verify_nash(spec, solve_game(spec, lat), None, noise)
        print(f"{variant}: passed={rep.passed}")
        for r in rep.rows:
            print(f"  player {r.player} {r.name:16s} diff={r.exact: .4e} first_order={r.first_order_exact: .3e}")


if __name__ == "__main__":
    main()
