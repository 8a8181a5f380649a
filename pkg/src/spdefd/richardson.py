"""Richardson extrapolation across the mesh ladder h, h/2, ..., h/2^r."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .grid import restriction_indices
from .solver import Trajectory

MAX_DEPTH = 8


@dataclass(frozen=True)
class ExtrapolationWeights:
    r: int
    exact: tuple  # Fractions c_0 .. c_r

    @property
    def c(self):
        return np.array([float(q) for q in self.exact])

    def moments(self):
        """sum_i c_i 4^{-ij} for j = 0 .. r, in exact arithmetic."""
        return [sum(c * Fraction(1, 4 ** (i * j)) for i, c in enumerate(self.exact)) for j in range(self.r + 1)]


def _solve_rational(V, rhs):
    """Gaussian elimination over the rationals; V is square, rhs a vector."""
    n = len(V)
    M = [list(row) + [rhs[i]] for i, row in enumerate(V)]
    for col in range(n):
        piv = next(r for r in range(col, n) if M[r][col] != 0)
        M[col], M[piv] = M[piv], M[col]
        for r in range(n):
            if r != col and M[r][col] != 0:
                q = M[r][col] / M[col][col]
                M[r] = [a - q * b for a, b in zip(M[r], M[col])]
    return [M[i][n] / M[i][i] for i in range(n)]


def weights(r):
    """Row vector c with c V = (1, 0, ..., 0), V^{ij} = 4^{-ij} (0-based)."""
    if not 0 <= r <= MAX_DEPTH:
        raise DomainError(f"extrapolation depth must be in [0, {MAX_DEPTH}], got {r}")
    V = [[Fraction(1, 4 ** (i * j)) for j in range(r + 1)] for i in range(r + 1)]
    # c V = e_1  <=>  V^T c^T = e_1
    Vt = [list(col) for col in zip(*V)]
    e1 = [Fraction(int(j == 0)) for j in range(r + 1)]
    return ExtrapolationWeights(r, tuple(_solve_rational(Vt, e1)))


def combine(fields, w):
    """sum_j c_j fields[j] for fields already on a common grid (leading axis = level)."""
    if len(fields) != w.r + 1:
        raise DomainError(f"need {w.r + 1} levels, got {len(fields)}")
    c = w.c
    out = c[0] * np.asarray(fields[0], dtype=float)
    for cj, fj in zip(c[1:], fields[1:]):
        out = out + cj * np.asarray(fj, dtype=float)
    return out


def extrapolate(trajectories, w):
    """Combine trajectories from the h/2^j ladder on the coarsest grid.

    ``trajectories[0]`` is the coarsest level.  All must share the time step.
    """
    if len(trajectories) != w.r + 1:
        raise DomainError(f"need {w.r + 1} levels, got {len(trajectories)}")
    coarse = trajectories[0].grid
    n = trajectories[0].values.shape[0]
    taus = {tr.tau for tr in trajectories}
    if len(taus) != 1 or any(tr.values.shape[0] != n for tr in trajectories):
        raise DomainError("trajectories differ in time step or length")
    fields = [trajectories[0].values]
    for tr in trajectories[1:]:
        fields.append(tr.values[:, restriction_indices(tr.grid, coarse)])
    return Trajectory(coarse, trajectories[0].tau, combine(fields, w))
