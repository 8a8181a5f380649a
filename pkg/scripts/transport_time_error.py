"""Why the stochastic-transport error stalls near 0.02 at tau = 1e-4.

The explicit noise term reproduces psi(x + w_T) only up to the quadratic
variation mismatch: the leading time error at the maximiser of |psi''| is
about 0.5 * |sum xi^2 - T| * max|psi''| (max|psi''| = 2 for 1/(1+x^2)).
This prints the predicted and observed errors for a few seeds and steps.

    python scripts/transport_time_error.py
"""
import numpy as np

from spdefd.cutoff import CutoffFn
from spdefd.noise import generate, path_values
from spdefd.problem import get_problem
from spdefd.solver import run, solver_grid


def main():
    p = get_problem("stochastic-transport")
    z = CutoffFn(10.0)
    g = solver_grid(p.stencil, 0.05, z)
    m = g.ball_mask(9.0)
    for tau in (1e-3, 1e-4, 1e-5):
        n = int(round(p.T / tau))
        for seed in range(3):
            noise = generate(seed, 0, n, tau, 1)
            v = run(p, z, g, noise, store=False).values[-1]
            err = np.max(np.abs(v[m] - p.exact(p.T, g.points[m], path_values(noise)[-1])))
            qv = float(np.sum(noise.w[:, 0] ** 2))
            print(f"tau={tau:g} seed={seed}: error {err:.4f}, predicted {abs(qv - p.T):.4f}")


if __name__ == "__main__":
    main()
