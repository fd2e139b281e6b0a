"""Duality residual of each candidate adjoint sign convention on two systems."""
import numpy as np

from fbdsde import ControlPath, build_lattice, make_grid, solve_lattice
from fbdsde.game import example11_build
from fbdsde.smp import CONVENTIONS, SpikeSpec, duality, solve_adjoint, solve_variational, spike_test_system


def main(N: int = 4) -> None:
    lat = build_lattice(make_grid(1.0, N))
    for coeffs in (example11_build(), spike_test_system()):
        u = ControlPath.constant(lat.grid, 0.0, coeffs.domain)
        opt = solve_lattice(coeffs, u, lat).solution
        spec = SpikeSpec(1.0 / N, 2.0 / N, -0.7)
        var = solve_variational(coeffs, opt, u, spec, lat)
        for conv in CONVENTIONS:
            adj = solve_adjoint(coeffs, opt, lat, control=u, convention=conv)
            r = duality(coeffs, opt, u, spec, var, adj, lat, conv)
            print(f"{coeffs.name:12s} {conv:22s} lhs={r.lhs: .6e} rhs={r.rhs: .6e} residual={r.residual:.2e}")


if __name__ == "__main__":
    np.set_printoptions(precision=4)
    main()
