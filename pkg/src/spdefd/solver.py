"""Finite-difference operators and the semi-implicit Euler scheme.

The drift operator is implicit at the new time level, the noise operator
and the free terms are explicit at the old one:

    (I - tau L(t_i)) v_i = v_{i-1} + tau f(t_{i-1}) + sum_k (M^k(t_{i-1}) v_{i-1} + g^k(t_{i-1})) xi_i^k

Grid values outside the stored box are read as exactly zero.  This is exact
when the box exceeds the cutoff support by the stencil halo, which
:func:`solver_grid` guarantees.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .cutoff import truncate_problem
from .errors import DomainError, NonConvergenceError, StepFailure
from .grid import OUTSIDE, build_grid

DEFAULT_TOL = 1e-11


def delta_matrix(grid, lam):
    """Sparse matrix of the central first difference along ``lam`` (identity for lam = 0)."""
    n = grid.size
    lam = np.asarray(lam, dtype=np.int64)
    if not lam.any():
        return sp.identity(n, format="csr")
    inv = 1.0 / (2.0 * grid.h)
    rows, cols, vals = [], [], []
    for sgn in (1, -1):
        nb = grid.shift(sgn * lam)
        ok = nb != OUTSIDE
        rows.append(np.flatnonzero(ok))
        cols.append(nb[ok])
        vals.append(np.full(ok.sum(), sgn * inv))
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


def apply_delta(values, grid, lam, variant="central"):
    """delta_lam applied to a grid field, zero outside the grid.

    ``variant="displayed"`` evaluates (phi(x+h l) - 2 phi(x) + phi(x-h l)) / (2h)
    instead; it is a diagnostic only and is not used by the scheme.
    """
    values = np.asarray(values, dtype=float)
    lam = np.asarray(lam, dtype=np.int64)
    if not lam.any():
        return values.copy()
    ext = np.append(values, 0.0)  # OUTSIDE == -1 reads the trailing zero
    fwd = ext[grid.shift(lam)]
    bwd = ext[grid.shift(-lam)]
    inv = 1.0 / (2.0 * grid.h)
    if variant == "central":
        return fwd * inv + bwd * -inv
    if variant == "displayed":
        return (fwd - 2.0 * values + bwd) * inv
    raise ValueError(f"unknown variant {variant!r}")


@dataclass
class OperatorMatrices:
    L: sp.csr_matrix
    M: list

    @property
    def bandwidth(self):
        coo = self.L.tocoo()
        return int(np.max(np.abs(coo.row - coo.col), initial=0))


class DifferenceOperators:
    """Per-grid cache of delta_l and delta_l delta_k matrices."""

    def __init__(self, grid):
        self.grid = grid
        self.deltas = [delta_matrix(grid, lam) for lam in grid.stencil.vectors]

    @cached_property
    def products(self):
        S = len(self.deltas)
        return [[(self.deltas[l] @ self.deltas[m]).tocsr() for m in range(S)] for l in range(S)]

    def assemble(self, dc, t):
        x = self.grid.points
        A, B = dc.eval(t, x)
        S = dc.stencil.size
        L = sp.csr_matrix((self.grid.size, self.grid.size))
        for l in range(S):
            for m in range(S):
                coef = A[:, l, m]
                if np.any(coef):
                    L = L + sp.diags(coef) @ self.products[l][m]
        Ms = []
        for k in range(dc.noise_channels):
            Mk = sp.csr_matrix((self.grid.size, self.grid.size))
            for l in range(S):
                coef = B[:, l, k]
                if np.any(coef):
                    Mk = Mk + sp.diags(coef) @ self.deltas[l]
            Ms.append(Mk.tocsr())
        return OperatorMatrices(L.tocsr(), Ms)


def assemble(dc_cut, grid, t):
    """L row x = sum fra^{lk}(t, x) (delta_l delta_k), M^k row x = sum frb^{l,k}(t, x) delta_l."""
    return DifferenceOperators(grid).assemble(dc_cut, t)


class BandedLU:
    """LAPACK banded LU of a sparse matrix whose nonzeros sit near the diagonal."""

    def __init__(self, A):
        A = sp.coo_matrix(A)
        n = A.shape[0]
        off = A.row.astype(np.int64) - A.col
        self.kl = int(max(off.max(initial=0), 0))
        self.ku = int(max((-off).max(initial=0), 0))
        kl, ku = self.kl, self.ku
        ab = np.zeros((2 * kl + ku + 1, n))
        np.add.at(ab, (kl + ku + A.row - A.col, A.col), A.data)
        lu, piv, info = lapack.dgbtrf(ab, kl, ku)
        if info > 0:
            raise NonConvergenceError(f"singular banded matrix (zero pivot {info})", residual=np.inf)
        self.lu, self.piv = lu, piv

    def solve(self, rhs):
        x, info = lapack.dgbtrs(self.lu, self.kl, self.ku, rhs, self.piv)
        if info != 0:
            raise NonConvergenceError("banded back-substitution failed", residual=np.inf)
        return x


class LinearSolver:
    """Solves A x = rhs with a residual check.

    Banded direct elimination when the matrix is narrow-banded (1D grids),
    restarted GMRES otherwise.
    """

    def __init__(self, A, tol=DEFAULT_TOL, max_iter=None, banded=None):
        self.A = sp.csr_matrix(A)
        self.tol = tol
        n = self.A.shape[0]
        self.max_iter = max_iter or 10 * n
        if banded is None:
            coo = self.A.tocoo()
            width = int(np.max(np.abs(coo.row - coo.col), initial=0))
            banded = width <= 16
        self._lu = BandedLU(self.A) if banded else None

    def residual(self, x, rhs):
        return float(np.linalg.norm(self.A @ x - rhs))

    def solve(self, rhs, x0=None):
        rhs = np.asarray(rhs, dtype=float)
        bound = self.tol * (1.0 + np.linalg.norm(rhs))
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            x, info = spla.gmres(self.A, rhs, x0=x0, rtol=0.0, atol=0.1 * bound, restart=50,
                                 maxiter=max(1, self.max_iter // 50))
        res = self.residual(x, rhs) if np.all(np.isfinite(x)) else np.inf
        if not res <= bound:
            raise NonConvergenceError(f"linear solve residual {res:.3e} exceeds {bound:.3e}", residual=res)
        return x


def solve_linear(A, rhs, tol=DEFAULT_TOL, max_iter=None):
    return LinearSolver(A, tol, max_iter).solve(rhs)


def solver_grid(stencil, h, zeta, h_coarse=None):
    """Grid whose box covers supp zeta plus the delta_l delta_k halo.

    Pass the coarsest mesh of a ladder as ``h_coarse`` so all levels share one box.
    """
    if not np.isfinite(zeta.support_radius):
        raise DomainError("the solver needs a compactly supported cutoff")
    hc = h if h_coarse is None else h_coarse
    return build_grid(stencil, h, zeta.support_radius + 2.0 * hc * stencil.max_norm())


@dataclass
class Trajectory:
    grid: object
    tau: float
    values: np.ndarray  # (n + 1, grid.size)

    @property
    def n(self):
        return len(self.values) - 1

    @property
    def times(self):
        return self.tau * np.arange(len(self.values))


class Scheme:
    """Semi-implicit Euler for an already-truncated problem on a fixed grid and step."""

    def __init__(self, problem_cut, grid, tau, zeta=None, tol=DEFAULT_TOL):
        if zeta is not None:
            need = zeta.support_radius + 2.0 * grid.h * grid.stencil.max_norm()
            if grid.box_radius < need * (1 - 1e-12):
                raise DomainError(f"grid box {grid.box_radius} does not cover the cutoff support plus halo {need}")
        self.problem = problem_cut
        self.grid = grid
        self.tau = float(tau)
        self.tol = tol
        self.ops = DifferenceOperators(grid)
        self.x = grid.points
        self.autonomous = problem_cut.discrete.autonomous
        self._cache = {}

    def initial(self):
        return np.array(self.problem.data.initial(self.x), dtype=float)

    def _explicit(self, t):
        if self.autonomous and "explicit" in self._cache:
            return self._cache["explicit"]
        ops = self.ops.assemble(self.problem.discrete, t)
        f, g = self.problem.data.data(t, self.x)
        out = (ops.M, np.array(f), np.array(g))
        if self.autonomous:
            self._cache["explicit"] = out
        return out

    def _implicit(self, t):
        if self.autonomous and "implicit" in self._cache:
            return self._cache["implicit"]
        L = self.ops.assemble(self.problem.discrete, t).L
        A = sp.identity(self.grid.size, format="csr") - self.tau * L
        solver = LinearSolver(A, self.tol)
        if self.autonomous:
            self._cache["implicit"] = solver
        return solver

    def step(self, i, v_prev, xi):
        """v_i from v_{i-1}; ``xi`` holds the increments of step i, one per channel."""
        t_old, t_new = self.tau * (i - 1), self.tau * i
        M, f, g = self._explicit(t_old)
        rhs = v_prev + self.tau * f
        if not self.problem.deterministic:
            for k, Mk in enumerate(M):
                if xi[k] != 0.0:
                    rhs = rhs + (Mk @ v_prev + g[:, k]) * xi[k]
        try:
            solver = self._implicit(t_new)
            v = solver.solve(rhs, x0=v_prev)
        except NonConvergenceError as exc:
            raise StepFailure(i, exc.residual) from exc
        if not np.all(np.isfinite(v)):
            raise StepFailure(i, np.inf)
        return v


def run_scheme(scheme, noise, observer=None, store=True):
    """March the scheme over the whole noise path.

    ``observer(i, v)`` is called for every time index including 0.
    """
    if abs(noise.tau - scheme.tau) > 1e-12 * scheme.tau:
        raise DomainError("noise path step differs from scheme step")
    v = scheme.initial()
    out = [v] if store else None
    if observer is not None:
        observer(0, v)
    w = noise.w
    for i in range(1, noise.n + 1):
        v = scheme.step(i, v, w[i - 1])
        if store:
            out.append(v)
        if observer is not None:
            observer(i, v)
    values = np.array(out) if store else v[None, :]
    return Trajectory(scheme.grid, scheme.tau, values)


def run(problem, zeta, grid, noise, observer=None, store=True, tol=DEFAULT_TOL):
    """Localise ``problem`` with ``zeta`` and solve on ``grid`` along ``noise``."""
    if abs(noise.T - problem.T) > 1e-12 * problem.T:
        raise DomainError(f"noise horizon {noise.T} differs from T = {problem.T}")
    scheme = Scheme(truncate_problem(problem, zeta), grid, noise.tau, zeta=zeta, tol=tol)
    return run_scheme(scheme, noise, observer=observer, store=store)
