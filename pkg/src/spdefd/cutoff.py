"""Cutoff functions and the truncation of data and coefficients."""
from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np

from .problem import ContinuousData, DiscreteCoeffs, Problem

FLAVORS = ("arctan-bump", "smoothstep", "none")


def _bump_step(x):
    """(2/pi) arctan exp(x / (1 - x^2)) on (-1, 1); 0 below, 1 above."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 1.0, 1.0, 0.0)
    mid = np.abs(x) < 1.0
    xm = x[mid]
    with np.errstate(over="ignore", divide="ignore"):
        out[mid] = (2 / np.pi) * np.arctan(np.exp(xm / (1.0 - xm * xm)))
    return out


def _bump_step_deriv(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    mid = np.abs(x) < 1.0
    xm = x[mid]
    u = xm / (1.0 - xm * xm)
    du = (1.0 + xm * xm) / (1.0 - xm * xm) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        # e^u / (1 + e^{2u}) = 1 / (2 cosh u)
        val = (2 / np.pi) * du / (2.0 * np.cosh(u))
    out[mid] = np.nan_to_num(val, nan=0.0, posinf=0.0)
    return out


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _smoothstep_deriv(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30.0 * s * s * (1.0 - s) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffFn:
    """Radial cutoff equal to 1 on |x| <= R and 0 on |x| >= support_radius.

    ``arctan-bump`` is the 1D profile f(x + 2 + R) - f(x - 2 - R); in higher
    dimension it falls back to ``smoothstep`` on |x|.  ``none`` is the
    identity cutoff (R = inf).
    """

    R: float
    flavor: str = "arctan-bump"
    width: float = 3.0

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValueError(f"unknown cutoff flavor {self.flavor!r}")
        if self.flavor != "none" and not (self.R > 0 and np.isfinite(self.R)):
            raise ValueError("cutoff radius must be positive and finite")

    @classmethod
    def identity(cls):
        return cls(np.inf, "none")

    @property
    def support_radius(self):
        return self.R + self.width

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.flavor == "none":
            return np.ones(len(x))
        if self.flavor == "arctan-bump" and x.shape[1] == 1:
            s = x[:, 0]
            return _bump_step(s + 2 + self.R) - _bump_step(s - 2 - self.R)
        r = np.linalg.norm(x, axis=1)
        out = 1.0 - _smoothstep((r - self.R) / self.width)
        # constant branch on the plateau, bit for bit
        return np.where(r <= self.R, 1.0, out)

    def grad(self, x):
        """Gradient, shape (n, d)."""
        x = np.asarray(x, dtype=float)
        if self.flavor == "none":
            return np.zeros_like(x)
        if self.flavor == "arctan-bump" and x.shape[1] == 1:
            s = x[:, 0]
            return (_bump_step_deriv(s + 2 + self.R) - _bump_step_deriv(s - 2 - self.R))[:, None]
        r = np.linalg.norm(x, axis=1)
        dr = -_smoothstep_deriv((r - self.R) / self.width) / self.width
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[:, None] > 0, x / r[:, None], 0.0)
        return dr[:, None] * unit


def eval_arctan_bump(R, x):
    """The 1D arctan-bump cutoff at scalar or array ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1, 1)
    val = CutoffFn(R, "arctan-bump")(x)
    return val if val.size > 1 else float(val[0])


def apply_to_data(zeta, psi, f, g):
    """(zeta psi, zeta f, zeta g^k)."""

    def psi_R(x):
        return zeta(x) * psi(x)

    def f_R(t, x):
        return zeta(x) * f(t, x)

    def g_R(t, x):
        return zeta(x)[:, None] * g(t, x)

    return psi_R, f_R, g_R


def coeff_multipliers(zeta_vals, size):
    """Per-point multipliers for fra: zeta^2 on nonzero x nonzero slots, zeta elsewhere."""
    n = len(zeta_vals)
    m = np.empty((n, size, size))
    m[:] = zeta_vals[:, None, None]
    m[:, 1:, 1:] = (zeta_vals**2)[:, None, None]
    return m


def apply_to_coeffs(zeta, dc):
    """Cut off discrete coefficients.

    fra^{lk} gets zeta^2 for l, k both nonzero and zeta otherwise (this
    includes fra^{00}, the zero-order slot); frb gets zeta.
    """
    S = dc.stencil.size

    def fra(t, x):
        A = np.asarray(dc.fra(t, x), dtype=float)
        return A * coeff_multipliers(zeta(x), S)

    def frb(t, x):
        return np.asarray(dc.frb(t, x), dtype=float) * zeta(x)[:, None, None]

    return replace(dc, fra=fra, frb=frb)


class _Memo:
    """Caches the cutoff values for the most recent evaluation array (per thread)."""

    def __init__(self, zeta):
        self.zeta = zeta
        self.local = threading.local()

    def __call__(self, x):
        loc = self.local
        if getattr(loc, "x", None) is x:
            return loc.val
        val = self.zeta(x)
        loc.x, loc.val = x, val
        return val

    def grad(self, x):
        return self.zeta.grad(x)


def truncated_reference_data(zeta, cd):
    """(zeta psi, zeta^2 a, zeta b, zeta c, zeta sigma, zeta mu, zeta f, zeta g)."""
    z = _Memo(zeta)

    def a(t, x):
        return (z(x) ** 2)[:, None, None] * cd.a(t, x)

    def scale(fn, extra_axes):
        def out(t, x):
            return z(x).reshape((-1,) + (1,) * extra_axes) * np.asarray(fn(t, x), dtype=float)

        return out

    psi = lambda x: z(x) * cd.initial(x)
    rho = None if cd.rho is None else scale(cd.rho, 2)

    derivs = {}
    for key, dfn in cd.derivatives.items():
        base = {"sigma": cd.sigma, "rho": cd.rho, "mu": cd.mu, "g": cd.g}[key]
        if base is None:
            continue
        derivs[key] = _product_rule(z, base, dfn)

    return ContinuousData(
        cd.dim, cd.noise_channels, cd.T, psi=psi, a=a,
        b=scale(cd.b, 1), c=scale(cd.c, 0), sigma=scale(cd.sigma, 2), mu=scale(cd.mu, 1),
        f=scale(cd.f, 0), g=scale(cd.g, 1), rho=rho, derivatives=derivs,
    )


def _product_rule(z, base, dbase):
    """D_i (z F) = (D_i z) F + z D_i F, derivative axis right after the point axis."""

    def out(t, x):
        F = np.asarray(base(t, x), dtype=float)
        dF = np.asarray(dbase(t, x), dtype=float)
        gz = z.grad(x)
        zv = z(x)
        gz = gz.reshape(gz.shape + (1,) * (F.ndim - 1))
        return gz * F[:, None] + zv.reshape((-1,) + (1,) * (dF.ndim - 1)) * dF

    return out


def truncate_problem(problem, zeta):
    """Localised problem: cutoff discrete coefficients, data and the matching continuous data."""
    dc = apply_to_coeffs(zeta, problem.discrete)
    cd = truncated_reference_data(zeta, problem.data)
    return Problem(problem.name, dc, cd, exact=problem.exact, deterministic=problem.deterministic)
