"""Wiener increments from a counter-based generator.

Each increment is a pure function of (seed, sample_id, step, channel):
a splitmix64-style hash gives a uniform, Acklam's rational approximation of
the inverse normal CDF turns it into a standard normal.  Increments are then
rounded to a multiple of 2**-40, so every partial sum of a path is exact in
float64 and coarsening / prefix sums do not depend on summation order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

QUANTUM = 2.0**-40
AUX_BLOCK = 1 << 32  # channel offset of the auxiliary (w-hat) block

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)

# Acklam's inverse normal CDF, |relative error| < 1.15e-9
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniforms(seed, sample_id, step, channel):
    """Uniforms in (0, 1) keyed by broadcastable integer arrays."""
    with np.errstate(over="ignore"):
        z = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        z = _mix(z ^ np.asarray(sample_id, dtype=np.uint64) * _GOLDEN)
        z = _mix(z ^ (np.asarray(step, dtype=np.uint64) + _GOLDEN))
        z = _mix(z ^ (np.asarray(channel, dtype=np.uint64) * _M1 + _GOLDEN))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def inverse_normal_cdf(p):
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1 - _P_LOW
    mid = ~(lo | hi)
    q = p[mid] - 0.5
    r = q * q
    a, b = _A, _B
    out[mid] = ((((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
                / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0))
    c, d = _C, _D
    for mask, sgn, pp in ((lo, 1.0, p[lo]), (hi, -1.0, 1.0 - p[hi])):
        q = np.sqrt(-2.0 * np.log(pp))
        out[mask] = sgn * ((((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
                           / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0))
    return out


def quantize(x):
    return np.rint(np.asarray(x) / QUANTUM) * QUANTUM


def normal_increments(seed, sample_id, steps, channels, tau):
    """N(0, tau) increments, shape (len(steps), len(channels)) or broadcast of the keys."""
    steps = np.asarray(steps, dtype=np.uint64)
    channels = np.asarray(channels, dtype=np.uint64)
    u = counter_uniforms(seed, sample_id, steps[:, None], channels[None, :])
    return quantize(np.sqrt(tau) * inverse_normal_cdf(u))


@dataclass(frozen=True, eq=False)
class NoisePath:
    """Increments xi[i, k] = w^k(i tau) - w^k((i - 1) tau), plus optional auxiliary channels.

    Columns ``0 .. channels-1`` drive the equation; the last ``aux`` columns
    are the independent w-hat block used by the characteristics oracle.
    """

    n: int
    tau: float
    channels: int
    increments: np.ndarray
    seed: int = 0
    sample_id: int = 0
    aux: int = 0

    @property
    def T(self):
        return self.n * self.tau

    @property
    def w(self):
        return self.increments[:, : self.channels]

    @property
    def w_hat(self):
        return self.increments[:, self.channels:]

    def checksum(self):
        return hash(self.w.tobytes())


def generate(seed, sample_id, n, tau, channels, aux=0):
    if n < 1 or not tau > 0:
        raise DomainError("need n >= 1 and tau > 0")
    cols = np.concatenate([np.arange(channels), AUX_BLOCK + np.arange(aux)]).astype(np.uint64)
    inc = normal_increments(seed, sample_id, np.arange(1, n + 1), cols, tau)
    return NoisePath(int(n), float(tau), int(channels), inc, int(seed), int(sample_id), int(aux))


def coarsen(path, factor):
    """Sum consecutive blocks of ``factor`` increments."""
    factor = int(factor)
    if factor < 1 or path.n % factor:
        raise DomainError(f"factor {factor} does not divide n = {path.n}")
    if factor == 1:
        return path
    inc = path.increments.reshape(path.n // factor, factor, -1)
    # exact for quantised increments, so any summation order gives the same bits
    out = inc[:, 0, :].copy()
    for j in range(1, factor):
        out += inc[:, j, :]
    return NoisePath(path.n // factor, path.tau * factor, path.channels, out, path.seed, path.sample_id, path.aux)


def path_values(path):
    """w at 0, tau, ..., n tau (rows), w_0 = 0."""
    vals = np.zeros((path.n + 1, path.increments.shape[1]))
    np.cumsum(path.increments, axis=0, out=vals[1:])
    return vals


_HEADER = struct.Struct("<8sqdqqQqq")
_MAGIC = b"SPDENOIS"


def dump(path, fp):
    """Little-endian header (n, tau, channels, aux, seed, sample_id, columns) + float64 increments."""
    with open(fp, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, path.n, path.tau, path.channels, path.aux,
                              path.seed & 0xFFFFFFFFFFFFFFFF, path.sample_id, path.increments.shape[1]))
        fh.write(np.ascontiguousarray(path.increments, dtype="<f8").tobytes())


def load(fp):
    with open(fp, "rb") as fh:
        raw = fh.read()
    magic, n, tau, channels, aux, seed, sample_id, cols = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError("not a noise dump")
    inc = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, cols).astype(float)
    return NoisePath(n, tau, channels, inc, seed, sample_id, aux)
