"""Monte Carlo values of u_t(x) from stochastic characteristics.

The flow

    dY = beta(Y) dt - sigma^k(Y) dw^k - rho^r(Y) dw_hat^r,   Y_0 = y

carries the zero-order process

    dU = (gamma(Y) U + phi(Y)) dt + (mu^k(Y) U + g^k(Y)) dw^k,   U_0 = psi(y),

and u_t(x) = E[U_t(Y_t^{-1}(x)) | w], the expectation taken over the
auxiliary noise w_hat.  Both are integrated with Euler-Maruyama; the
inverse flow is found by bisection, which restricts this module to d = 1.
The oracle is independent of the grid solver: it shares only the driving
path w.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import BlowUpError, DomainError, InversionError
from .noise import AUX_BLOCK, normal_increments
from .problem import degenerate_structure


@dataclass(frozen=True)
class FlowConfig:
    substeps: int = 1  # characteristic steps per grid step (used by the oracle check)
    mode: str = "fd"  # "analytic" uses ContinuousData.derivatives where present
    eps_fd: Optional[float] = None  # default 1e-5 (1 + |x|)
    m_inner: int = 10_000
    inv_tol: float = 1e-9
    chunk: int = 2_000
    max_expand: int = 40

    def __post_init__(self):
        if self.substeps < 1:
            raise DomainError("substeps must be >= 1")
        if self.eps_fd is not None and not self.eps_fd > 0:
            raise DomainError("eps_fd must be positive")
        if self.mode not in ("fd", "analytic"):
            raise DomainError(f"unknown derivative mode {self.mode!r}")


@dataclass(frozen=True)
class ReducedCoeffs:
    gamma: Callable
    phi: Callable
    beta: Callable


def fd_gradient(fn, eps_fd=None):
    """Central-difference D_i of a field fn(t, x) -> (n, ...); result (n, d, ...)."""

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        eps = eps_fd if eps_fd is not None else 1e-5 * (1.0 + np.linalg.norm(x, axis=1))
        eps = np.broadcast_to(eps, (n,))
        parts = []
        for i in range(d):
            e = np.zeros((n, d))
            e[:, i] = eps
            df = (np.asarray(fn(t, x + e), dtype=float) - np.asarray(fn(t, x - e), dtype=float))
            parts.append(df / (2 * eps).reshape((-1,) + (1,) * (df.ndim - 1)))
        return np.stack(parts, axis=1)

    return grad


def _fields(cd, ds):
    """(sigma, rho, mu, g) at (t, x) from a single coefficient evaluation."""

    def fields(t, x):
        n, d = x.shape
        s, mu = cd.coeffs(t, x)[3:]
        rho = np.broadcast_to(np.asarray(ds.rho(t, x), dtype=float), (n, d, d))
        return s, rho, mu, cd.data(t, x)[1]

    return fields


def _fused_fd(fields, eps_fd=None):
    """Central differences of all four fields from one pair of evaluations per axis."""
    memo = {}

    def grads(t, x):
        key = memo.get("key")
        if key is not None and key[0] is x and key[1] == t:
            return memo["val"]
        n, d = x.shape
        eps = eps_fd if eps_fd is not None else 1e-5 * (1.0 + np.linalg.norm(x, axis=1))
        eps = np.broadcast_to(eps, (n,))
        per_axis = []
        for i in range(d):
            e = np.zeros((n, d))
            e[:, i] = eps
            up = [np.array(a, dtype=float) for a in fields(t, x + e)]
            dn = fields(t, x - e)
            per_axis.append([(u - v) / (2 * eps).reshape((-1,) + (1,) * (u.ndim - 1)) for u, v in zip(up, dn)])
        val = tuple(np.stack([p[j] for p in per_axis], axis=1) for j in range(4))
        memo["key"], memo["val"] = (x, t), val
        return val

    return grads


def reduced_coeffs(cd, ds=None, mode="fd", eps_fd=None):
    """beta = -b + sigma^{ik} D_i sigma^k + rho^{ri} D_i rho^r + sigma^k mu^k,
    gamma = c - sigma^{ik} D_i mu^k,  phi = f - sigma^{ik} D_i g^k.
    """
    ds = ds or degenerate_structure(cd)
    K = cd.noise_channels
    fused = _fused_fd(_fields(cd, ds), eps_fd)
    names = ("sigma", "rho", "mu", "g")

    def deriv(j):
        name = names[j]
        if mode == "analytic" and name in cd.derivatives:
            return cd.derivatives[name]
        return lambda t, x: fused(t, x)[j]

    d_sigma, d_rho, d_mu, d_g = (deriv(j) for j in range(4))

    def beta(t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        _, b, _, s, mu = cd.coeffs(t, x)
        rho = np.broadcast_to(np.asarray(ds.rho(t, x), dtype=float), (n, d, d))
        out = -b + np.einsum("nik,nijk->nj", s, np.reshape(d_sigma(t, x), (n, d, d, K)))
        out = out + np.einsum("nir,nijr->nj", rho, np.reshape(d_rho(t, x), (n, d, d, d)))
        return out + np.einsum("njk,nk->nj", s, mu)

    def gamma(t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        _, _, c, s, _ = cd.coeffs(t, x)
        return c - np.einsum("nik,nik->n", s, np.reshape(d_mu(t, x), (n, d, K)))

    def phi(t, x):
        x = np.asarray(x, dtype=float)
        n, d = x.shape
        s = cd.coeffs(t, x)[3]
        f, _ = cd.data(t, x)
        return f - np.einsum("nik,nik->n", s, np.reshape(d_g(t, x), (n, d, K)))

    return ReducedCoeffs(gamma, phi, beta)


class Characteristics:
    """Vectorised Euler-Maruyama for (Y, U) over a batch of start points."""

    def __init__(self, cd, config=FlowConfig()):
        self.cd = cd
        self.config = config
        self.ds = degenerate_structure(cd)
        self.rc = reduced_coeffs(cd, self.ds, config.mode, config.eps_fd)

    def flow(self, y, dt, dw, dw_hat, with_u=False):
        """Integrate from start points ``y`` (m, d).

        ``dw`` has shape (steps, K) and is shared by all start points;
        ``dw_hat`` has shape (steps, m, d) or is None (no auxiliary noise).
        """
        cd, rc = self.cd, self.rc
        Y = np.array(y, dtype=float, copy=True)
        U = cd.initial(Y).astype(float).copy() if with_u else None
        for j in range(dw.shape[0]):
            t = j * dt
            _, _, _, s, mu = cd.coeffs(t, Y)
            drift = rc.beta(t, Y)
            Ynew = Y + drift * dt - s @ dw[j]
            if dw_hat is not None:
                rho = np.asarray(self.ds.rho(t, Y), dtype=float).reshape(len(Y), cd.dim, cd.dim)
                Ynew = Ynew - np.einsum("nir,nr->ni", rho, dw_hat[j])
            if with_u:
                _, g = cd.data(t, Y)
                U = U + (rc.gamma(t, Y) * U + rc.phi(t, Y)) * dt + (mu * U[:, None] + g) @ dw[j]
            Y = Ynew
            if not np.all(np.isfinite(Y)) or (with_u and not np.all(np.isfinite(U))):
                raise BlowUpError(f"non-finite characteristic at substep {j}")
        return (Y, U) if with_u else Y


def simulate_characteristic(cd, y, dw, dw_hat=None, dt=None, config=FlowConfig()):
    """Terminal (Y_T, U_T) for start points ``y``; see :class:`Characteristics`."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if dt is None:
        dt = cd.T / dw.shape[0]
    return Characteristics(cd, config).flow(y, dt, dw, dw_hat, with_u=True)


def invert_flow(ch, x, dt, dw, dw_hat=None, m=1):
    """Start points y (m,) with Y_T(y) = x, by bisection on the realised flows (d = 1)."""
    cfg = ch.config
    if ch.cd.dim != 1:
        raise DomainError("flow inversion is implemented for d = 1 only")

    def Y(y):
        return ch.flow(y.reshape(-1, 1), dt, dw, dw_hat)[:, 0]

    lo = np.full(m, x - 1.0)
    hi = np.full(m, x + 1.0)
    width = 1.0
    for _ in range(cfg.max_expand):
        ylo, yhi = Y(lo), Y(hi)
        bad_lo, bad_hi = ylo > x, yhi < x
        if not (bad_lo.any() or bad_hi.any()):
            break
        width *= 2.0
        lo = np.where(bad_lo, x - width, lo)
        hi = np.where(bad_hi, x + width, hi)
    else:
        raise InversionError(f"no bracket found for x = {x}")

    # monotonicity of the realised flow on (a subset of) the brackets
    k = min(m, 64)
    probes = np.linspace(0.0, 1.0, 7)
    yy = lo[:k, None] + probes[None, :] * (hi - lo)[:k, None]
    sub_hat = None if dw_hat is None else np.repeat(dw_hat[:, :k], len(probes), axis=1)
    vals = ch.flow(yy.reshape(-1, 1), dt, dw, sub_hat)[:, 0].reshape(k, len(probes))
    if np.any(np.diff(vals, axis=1) < 0):
        raise InversionError(f"realised flow is not monotone near x = {x}")

    mid = 0.5 * (lo + hi)
    for _ in range(200):
        err = Y(mid) - x
        done = np.abs(err) <= cfg.inv_tol
        if done.all():
            return mid
        hi = np.where(~done & (err > 0), mid, hi)
        lo = np.where(~done & (err < 0), mid, lo)
        new = 0.5 * (lo + hi)
        if np.all(done | (new == mid)):
            raise InversionError(f"bisection stalled at residual {np.max(np.abs(err)):.3e}")
        mid = np.where(done, mid, new)
    raise InversionError("bisection did not converge")


def _is_fully_degenerate(ch, t, x):
    xs = np.linspace(-abs(x) - 10.0, abs(x) + 10.0, 201).reshape(-1, 1)
    return bool(np.all(np.asarray(ch.ds.rho(t, xs)) == 0.0))


def estimate_u(cd, t, x, w_path, config=FlowConfig(), seed=None):
    """Mean and standard error of U_t(Y_t^{-1}(x)) over the auxiliary noise.

    ``w_path`` is the (fine) driving path; its step is the Euler-Maruyama
    step and ``t`` must be a multiple of it.  Auxiliary increments are drawn
    from the reserved channel block of the same counter generator, keyed by
    ``seed`` (default: the path's seed) and the path's sample id.
    """
    if cd.dim != 1:
        raise DomainError("the characteristics oracle supports d = 1 only")
    dt = w_path.tau
    steps = int(round(t / dt))
    if abs(steps * dt - t) > 1e-9 * max(t, dt) or steps > w_path.n:
        raise DomainError(f"t = {t} is not on the path's time grid")
    dw = w_path.w[:steps]
    ch = Characteristics(cd, config)
    seed = w_path.seed if seed is None else seed
    if _is_fully_degenerate(ch, t, x):
        y = invert_flow(ch, x, dt, dw, None, m=1)
        _, U = ch.flow(y.reshape(-1, 1), dt, dw, None, with_u=True)
        return {"mean": float(U[0]), "stderr": 0.0, "samples": 1, "start": float(y[0])}
    total = config.m_inner
    vals = []
    for start in range(0, total, config.chunk):
        m = min(config.chunk, total - start)
        cols = AUX_BLOCK + np.arange(start, start + m, dtype=np.int64)
        dwh = normal_increments(seed, w_path.sample_id, np.arange(1, steps + 1), cols, dt).reshape(steps, m, 1)
        y = invert_flow(ch, x, dt, dw, dwh, m=m)
        _, U = ch.flow(y.reshape(-1, 1), dt, dw, dwh, with_u=True)
        vals.append(U)
    vals = np.concatenate(vals)
    return {
        "mean": float(np.mean(vals)),
        "stderr": float(np.std(vals, ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0,
        "samples": int(len(vals)),
    }
