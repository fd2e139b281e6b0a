"""u(t, x) for terminal x^2 under unit diffusion against x^2 + T - t and the FD table."""
from fbdsde.solver import SolverConfig
from fbdsde.spde import fd_comparator, polynomial_spde, u_grid


def main() -> None:
    ts, xs = [0.0, 0.2, 0.4, 0.6, 0.8], [-1.0, -0.5, 0.0, 0.5, 1.0]
    model = polynomial_spde(h=(0.0, 0.0, 1.0), name="x2")
    fd = fd_comparator(model, 0.0, xs, ts)
    for r in u_grid(model, 0.0, ts, xs, SolverConfig(mc_paths=20_000, seed=11)):
        exact = r.x ** 2 + model.T - r.t
        print(f"t={r.t:.1f} x={r.x:+.1f} mc={r.mean:.5f}±{r.stderr:.1e} fd={fd.at(r.t, r.x):.5f} exact={exact:.5f}")


if __name__ == "__main__":
    main()
