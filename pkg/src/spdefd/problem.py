"""Continuous SPDE data, stencil-indexed discrete coefficients and the maps between them.

All coefficient callables are vectorised: they take a time ``t`` (float) and
points ``x`` of shape (n, d) and return one value per point:

=========  ==================
psi(x)     (n,)
a(t, x)    (n, d, d)
b(t, x)    (n, d)
c(t, x)    (n,)
sigma      (n, d, K)
mu         (n, K)
f          (n,)
g          (n, K)
fra(t, x)  (n, S, S)   S = stencil size, index 0 is the zero vector
frb(t, x)  (n, S, K)
=========  ==================

The smoothness requirements of the underlying theory (bounded derivatives
of the coefficients) cannot be checked mechanically and stay the caller's
responsibility; only the bound ``K`` is spot-checked.
"""
from __future__ import annotations

import configparser
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, NotParabolicError
from .grid import StencilSet


def _npts(x):
    return np.asarray(x).shape[0]


def _shaped(val, shape):
    val = np.asarray(val, dtype=float)
    return val if val.shape == shape else np.broadcast_to(val, shape)


def zeros_scalar(t, x):
    return np.zeros(_npts(x))


def psd_tol(mat):
    return 1e-12 * (1.0 + float(np.max(np.abs(mat), initial=0.0)))


@dataclass(frozen=True)
class DiscreteCoeffs:
    stencil: StencilSet
    noise_channels: int
    fra: Callable
    frb: Callable
    bound: float = np.inf
    autonomous: bool = False

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        n, S, K = len(x), self.stencil.size, self.noise_channels
        return _shaped(self.fra(t, x), (n, S, S)), _shaped(self.frb(t, x), (n, S, K))

    def check_bound(self, t, x):
        """True if |fra| <= K and sum_k frb^2 <= K^2 at the given points."""
        A, B = self.eval(t, x)
        return bool(np.all(np.abs(A) <= self.bound) and np.all(np.sum(B**2, axis=-1) <= self.bound**2))


@dataclass(frozen=True)
class ContinuousData:
    dim: int
    noise_channels: int
    T: float
    psi: Callable = None
    a: Callable = None
    b: Callable = None
    c: Callable = None
    sigma: Callable = None
    mu: Callable = None
    f: Callable = None
    g: Callable = None
    # optional analytic square root of alpha and analytic derivatives
    # ("sigma", "rho", "mu", "g" -> callables returning D_i of the field
    # on a leading derivative axis after the point axis)
    rho: Optional[Callable] = None
    derivatives: dict = field(default_factory=dict)

    def __post_init__(self):
        d, K = self.dim, self.noise_channels
        defaults = {
            "psi": lambda x: np.zeros(_npts(x)),
            "a": lambda t, x: np.zeros((_npts(x), d, d)),
            "b": lambda t, x: np.zeros((_npts(x), d)),
            "c": zeros_scalar,
            "sigma": lambda t, x: np.zeros((_npts(x), d, K)),
            "mu": lambda t, x: np.zeros((_npts(x), K)),
            "f": zeros_scalar,
            "g": lambda t, x: np.zeros((_npts(x), K)),
        }
        for name, fn in defaults.items():
            if getattr(self, name) is None:
                object.__setattr__(self, name, fn)

    def coeffs(self, t, x):
        """Evaluate (a, b, c, sigma, mu) with a symmetrised."""
        x = np.asarray(x, dtype=float)
        n, d, K = len(x), self.dim, self.noise_channels
        a = _shaped(self.a(t, x), (n, d, d))
        if d > 1:
            a = 0.5 * (a + np.swapaxes(a, 1, 2))
        b = _shaped(self.b(t, x), (n, d))
        c = _shaped(self.c(t, x), (n,))
        s = _shaped(self.sigma(t, x), (n, d, K))
        mu = _shaped(self.mu(t, x), (n, K))
        return a, b, c, s, mu

    def data(self, t, x):
        """Evaluate the free terms (f, g)."""
        x = np.asarray(x, dtype=float)
        n, K = len(x), self.noise_channels
        f = _shaped(self.f(t, x), (n,))
        g = _shaped(self.g(t, x), (n, K))
        return f, g

    def initial(self, x):
        x = np.asarray(x, dtype=float)
        return _shaped(self.psi(x), (len(x),))


def derive_continuous(dc, T, psi=None, f=None, g=None):
    """Continuous coefficients implied by the compatibility identities.

    a = sum fra^{lk} l (x) k,  b = sum (fra^{0l} + fra^{l0}) l,  c = fra^{00},
    sigma^{.k} = sum frb^{l,k} l,  mu^k = frb^{0,k}   (sums over nonzero l, k).
    """
    lam = dc.stencil.array()[1:].astype(float)  # (S-1, d)
    memo = threading.local()

    def evaluate(t, x):
        # a, b, c, sigma and mu share one discrete evaluation per (t, x)
        if getattr(memo, "x", None) is x and memo.t == t:
            return memo.out
        A, B = dc.eval(t, x)
        a = np.einsum("nlk,li,kj->nij", A[:, 1:, 1:], lam, lam)
        out = (
            0.5 * (a + np.swapaxes(a, 1, 2)),
            (A[:, 0, 1:] + A[:, 1:, 0]) @ lam,
            A[:, 0, 0].copy(),
            np.einsum("nlk,li->nik", B[:, 1:, :], lam),
            B[:, 0, :].copy(),
        )
        memo.x, memo.t, memo.out = x, t, out
        return out

    def a(t, x):
        return evaluate(t, x)[0]

    def b(t, x):
        return evaluate(t, x)[1]

    def c(t, x):
        return evaluate(t, x)[2]

    def sigma(t, x):
        return evaluate(t, x)[3]

    def mu(t, x):
        return evaluate(t, x)[4]

    return ContinuousData(dc.stencil.dim, dc.noise_channels, T, psi=psi, a=a, b=b, c=c,
                          sigma=sigma, mu=mu, f=f, g=g)


@dataclass
class ParabolicityReport:
    passed: bool
    worst_eigenvalue: float
    witness: tuple


def _group_by_time(sample):
    groups = {}
    for t, x in sample:
        groups.setdefault(float(t), []).append(np.atleast_1d(np.asarray(x, dtype=float)))
    return {t: np.stack(xs) for t, xs in groups.items()}


def check_discrete_parabolicity(dc, sample):
    """Minimum eigenvalue of 2 fra^{lk} - sum_k frb^{l,k} frb^{k,k} over l, k in the nonzero stencil."""
    if not sample:
        raise ValueError("empty sample")
    worst, witness, ok = np.inf, None, True
    for t, xs in _group_by_time(sample).items():
        A, B = dc.eval(t, xs)
        Bn = B[:, 1:, :]
        S = 2 * A[:, 1:, 1:] - np.einsum("nlk,nmk->nlm", Bn, Bn)
        S = 0.5 * (S + np.swapaxes(S, 1, 2))
        eig = np.linalg.eigvalsh(S)[:, 0]
        for i, e in enumerate(eig):
            if e < -psd_tol(S[i]):
                ok = False
            if e < worst:
                worst, witness = float(e), (t, tuple(xs[i]))
    return ParabolicityReport(ok, worst, witness)


@dataclass(frozen=True)
class DegenerateStructure:
    alpha: Callable
    rho: Callable


def _psd_sqrt(alpha, where=None):
    w, V = np.linalg.eigh(alpha)
    tol = np.array([psd_tol(m) for m in alpha])
    bad = w[:, 0] < -tol
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        pt = None if where is None else where(i)
        raise NotParabolicError(
            f"2a - sigma sigma^T has eigenvalue {w[i, 0]:.3e} < 0 at {pt}", witness=pt, eigenvalue=float(w[i, 0])
        )
    w = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("nij,nj,nkj->nik", V, w, V)


def degenerate_structure(cd):
    """alpha = 2a - sigma sigma^T and its symmetric nonnegative square root rho."""

    def alpha(t, x):
        a, _, _, s, _ = cd.coeffs(t, x)
        out = 2 * a - np.einsum("nik,njk->nij", s, s)
        return 0.5 * (out + np.swapaxes(out, 1, 2))

    if cd.rho is not None:
        rho = cd.rho
    else:

        def rho(t, x):
            x = np.asarray(x, dtype=float)
            return _psd_sqrt(alpha(t, x), where=lambda i: (t, tuple(x[i])))

    return DegenerateStructure(alpha, rho)


@dataclass(frozen=True)
class Problem:
    """A named SPDE instance: discrete coefficients plus the induced continuous data.

    ``exact(t, x, w_t)`` returns the true solution when one is known; ``w_t``
    is the value of the driving Wiener path(s) at time t, shape (K,).
    """

    name: str
    discrete: DiscreteCoeffs
    data: ContinuousData
    exact: Optional[Callable] = None
    deterministic: bool = False

    @property
    def T(self):
        return self.data.T

    @property
    def stencil(self):
        return self.discrete.stencil

    def with_T(self, T):
        return replace(self, data=replace(self.data, T=float(T)))


def _const(value, shape_tail):
    def fn(t, x):
        return np.full((_npts(x), *shape_tail), value, dtype=float)

    return fn


def _paper_example(T=1.0):
    stencil = StencilSet.unit(1)

    def fra(t, x):
        out = np.zeros((len(x), 2, 2))
        out[:, 1, 1] = np.sin(x[:, 0]) ** 2
        return out

    def frb(t, x):
        out = np.zeros((len(x), 2, 1))
        out[:, 1, 0] = np.sin(x[:, 0])
        return out

    dc = DiscreteCoeffs(stencil, 1, fra, frb, bound=1.0, autonomous=True)
    cd = derive_continuous(dc, T, psi=lambda x: 1.0 / (1.0 + x[:, 0] ** 2))
    # rho = |sin x|; it has a kink at the zeros of sin, used as is
    derivs = {
        "sigma": lambda t, x: np.cos(x[:, 0]).reshape(-1, 1, 1, 1),
        "rho": lambda t, x: (np.sign(np.sin(x[:, 0])) * np.cos(x[:, 0])).reshape(-1, 1, 1, 1),
    }
    cd = replace(cd, rho=lambda t, x: np.abs(np.sin(x[:, 0])).reshape(-1, 1, 1), derivatives=derivs)
    return Problem("paper-example", dc, cd)


def _stochastic_transport(T=1.0):
    stencil = StencilSet.unit(1)

    def fra(t, x):
        out = np.zeros((len(x), 2, 2))
        out[:, 1, 1] = 0.5
        return out

    def frb(t, x):
        out = np.zeros((len(x), 2, 1))
        out[:, 1, 0] = 1.0
        return out

    dc = DiscreteCoeffs(stencil, 1, fra, frb, bound=1.0, autonomous=True)
    psi = lambda x: 1.0 / (1.0 + x[:, 0] ** 2)
    cd = derive_continuous(dc, T, psi=psi)
    cd = replace(cd, rho=_const(0.0, (1, 1)))

    def exact(t, x, w_t):
        x = np.asarray(x, dtype=float)
        return 1.0 / (1.0 + (x[:, 0] + w_t[0]) ** 2)

    return Problem("stochastic-transport", dc, cd, exact=exact)


HEAT_WIDTH2 = 0.5  # initial Gaussian exp(-x^2 / (2 s^2)) with s^2 = 1/2


def _heat(T=1.0):
    stencil = StencilSet.unit(1)

    def fra(t, x):
        out = np.zeros((len(x), 2, 2))
        out[:, 1, 1] = 0.5
        return out

    dc = DiscreteCoeffs(stencil, 1, fra, lambda t, x: np.zeros((len(x), 2, 1)), bound=1.0, autonomous=True)
    s2 = HEAT_WIDTH2
    cd = derive_continuous(dc, T, psi=lambda x: np.exp(-x[:, 0] ** 2 / (2 * s2)))
    cd = replace(cd, rho=_const(1.0, (1, 1)))

    def exact(t, x, w_t=None):
        x = np.asarray(x, dtype=float)
        v = s2 + t
        return np.sqrt(s2 / v) * np.exp(-x[:, 0] ** 2 / (2 * v))

    return Problem("heat", dc, cd, exact=exact, deterministic=True)


REGISTRY = {
    "paper-example": _paper_example,
    "stochastic-transport": _stochastic_transport,
    "heat": _heat,
}


def get_problem(name, T=None):
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}") from None
    return factory() if T is None else factory(float(T))


# ---------------------------------------------------------------------------
# text problem definitions

_NAMESPACE = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "arctan", "tanh", "cosh", "sinh", "sign", "pi",
                 "minimum", "maximum", "where")
}


def _compile(expr, dim):
    code = compile(expr, "<problem>", "eval")

    def fn(t, x):
        x = np.asarray(x, dtype=float)
        ns = dict(_NAMESPACE, t=t, r=np.linalg.norm(x, axis=1))
        for j in range(dim):
            ns[f"x{j + 1}"] = x[:, j]
        if dim == 1:
            ns["x"] = x[:, 0]
        val = eval(code, {"__builtins__": {}}, ns)
        return np.broadcast_to(np.asarray(val, dtype=float), (len(x),))

    return fn


def _parse_index(key, prefix):
    body = key[len(prefix):].strip()
    if not (body.startswith("[") and body.endswith("]")):
        raise ConfigError(f"bad key {key!r}")
    try:
        return tuple(int(p) for p in body[1:-1].split(","))
    except ValueError:
        raise ConfigError(f"bad index in {key!r}") from None


def problem_from_text(text, name="inline"):
    """Build a Problem from a ``[problem]`` section of key = value lines.

    Recognised keys: ``dim``, ``stencil`` (nonzero vectors, ``;``-separated,
    coordinates ``,``-separated), ``noise_channels``, ``T``, ``autonomous``,
    ``psi``, ``f``, ``g[k]``, ``fra[l,m]`` and ``frb[l,k]``.  Stencil index 0
    is the zero vector, nonzero vectors follow in the listed order; noise
    channels ``k`` count from 1.  Expressions use numpy names and the
    variables ``t``, ``x`` (d = 1), ``x1..xd`` and ``r = |x|``.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    if "problem" not in cp:
        raise ConfigError("missing [problem] section")
    sec = dict(cp["problem"])
    try:
        dim = int(sec.pop("dim", "1"))
        K = int(sec.pop("noise_channels", "1"))
        T = float(sec.pop("T", "1"))
        autonomous = sec.pop("autonomous", "false").lower() in ("1", "true", "yes")
        vecs = [tuple(int(c) for c in v.split(",")) for v in sec.pop("stencil", "1").split(";") if v.strip()]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    stencil = StencilSet.from_nonzero(dim, vecs)
    S = stencil.size
    fra_terms, frb_terms, g_terms = {}, {}, {}
    psi = f = None
    for key, expr in sec.items():
        if key.startswith("fra"):
            l, m = _parse_index(key, "fra")
            fra_terms[(l, m)] = _compile(expr, dim)
        elif key.startswith("frb"):
            l, k = _parse_index(key, "frb")
            frb_terms[(l, k - 1)] = _compile(expr, dim)
        elif key.startswith("g"):
            (k,) = _parse_index(key, "g")
            g_terms[k - 1] = _compile(expr, dim)
        elif key == "psi":
            p = _compile(expr, dim)
            psi = lambda x, p=p: p(0.0, x)
        elif key == "f":
            f = _compile(expr, dim)
        else:
            raise ConfigError(f"unknown problem key {key!r}")
    for (l, m) in fra_terms:
        if not (0 <= l < S and 0 <= m < S):
            raise ConfigError(f"stencil index out of range in fra[{l},{m}]")
    for (l, k) in frb_terms:
        if not (0 <= l < S and 0 <= k < K):
            raise ConfigError(f"index out of range in frb[{l},{k + 1}]")

    def fra(t, x):
        out = np.zeros((len(x), S, S))
        for (l, m), fn in fra_terms.items():
            out[:, l, m] = fn(t, x)
        return out

    def frb(t, x):
        out = np.zeros((len(x), S, K))
        for (l, k), fn in frb_terms.items():
            out[:, l, k] = fn(t, x)
        return out

    def g(t, x):
        out = np.zeros((len(x), K))
        for k, fn in g_terms.items():
            out[:, k] = fn(t, x)
        return out

    dc = DiscreteCoeffs(stencil, K, fra, frb, autonomous=autonomous)
    cd = derive_continuous(dc, T, psi=psi, f=f, g=g if g_terms else None)
    deterministic = not frb_terms and not g_terms
    return Problem(name, dc, cd, deterministic=deterministic)
