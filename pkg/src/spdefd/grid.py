"""Integer stencils and the lattices they generate.

Lattice points are stored as integer coordinate arrays; the physical point
is ``h * p``.  Membership, nesting and restriction are therefore exact
integer operations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gcd

import numpy as np

from .errors import DomainError, InvalidStencilError, NestingError

OUTSIDE = -1

# slack for the ball test |h p| <= R; scaling by powers of two keeps it exact
_BALL_SLACK = 1e-12


@dataclass(frozen=True)
class StencilSet:
    """Finite set of integer vectors containing zero.

    The zero vector is always stored first, so index 0 addresses the
    zero-order slot of the discrete coefficients.
    """

    dim: int
    vectors: tuple

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidStencilError("dimension must be positive")
        vecs = []
        for v in self.vectors:
            v = np.atleast_1d(np.asarray(v))
            if v.shape != (self.dim,):
                raise InvalidStencilError(f"vector {v!r} has wrong shape for d={self.dim}")
            if not np.all(np.equal(np.mod(v, 1), 0)):
                raise InvalidStencilError(f"vector {v!r} is not integer")
            vecs.append(tuple(int(c) for c in v))
        zero = (0,) * self.dim
        if len(set(vecs)) != len(vecs):
            raise InvalidStencilError("stencil vectors must be distinct")
        nonzero = [v for v in vecs if v != zero]
        if not nonzero:
            raise InvalidStencilError("stencil needs at least one nonzero vector")
        object.__setattr__(self, "vectors", (zero, *nonzero))

    @classmethod
    def from_nonzero(cls, dim, nonzero):
        return cls(dim, ((0,) * dim, *[tuple(np.atleast_1d(v)) for v in nonzero]))

    @classmethod
    def unit(cls, dim):
        """Zero plus the coordinate unit vectors."""
        return cls.from_nonzero(dim, [tuple(int(i == j) for j in range(dim)) for i in range(dim)])

    @property
    def size(self):
        return len(self.vectors)

    @property
    def nonzero(self):
        return self.vectors[1:]

    def array(self):
        return np.array(self.vectors, dtype=np.int64)

    def max_norm(self):
        return float(np.max(np.linalg.norm(self.array().astype(float), axis=1)))

    def max_abs(self):
        """Largest coordinate magnitude; bounds the halo needed by delta_l delta_k."""
        return int(np.max(np.abs(self.array())))


def _echelon_basis(vectors):
    """Integer row-echelon basis of the lattice spanned by ``vectors``."""
    rows = [list(v) for v in vectors if any(v)]
    basis = []
    d = len(vectors[0])
    col = 0
    while rows and col < d:
        live = [r for r in rows if r[col] != 0]
        rest = [r for r in rows if r[col] == 0]
        if not live:
            col += 1
            continue
        # Euclid on the column: reduce until one row holds the gcd
        while len(live) > 1:
            live.sort(key=lambda r: abs(r[col]))
            piv = live[0]
            new = [piv]
            for r in live[1:]:
                q = r[col] // piv[col]
                r = [a - q * b for a, b in zip(r, piv)]
                if r[col] != 0:
                    new.append(r)
                elif any(r):
                    rest.append(r)
            live = new
        piv = live[0]
        if piv[col] < 0:
            piv = [-a for a in piv]
        basis.append(piv)
        rows = [r for r in rest if any(r)]
        col += 1
    return np.array(basis, dtype=np.int64).reshape(-1, d)


def lattice_membership(points, basis):
    """Boolean mask of integer ``points`` (n, d) lying in the lattice of ``basis``."""
    rem = np.array(points, dtype=np.int64, copy=True)
    ok = np.ones(len(rem), dtype=bool)
    for row in basis:
        c = int(np.flatnonzero(row)[0])
        coef, r = np.divmod(rem[:, c], row[c])
        ok &= r == 0
        rem -= np.outer(coef, row)
    ok &= np.all(rem == 0, axis=1)
    return ok


@dataclass(frozen=True, eq=False)
class Grid:
    stencil: StencilSet
    h: float
    box_radius: float
    int_points: np.ndarray = field(repr=False)
    _keys: np.ndarray = field(repr=False)
    _span: int = field(repr=False)

    @property
    def dim(self):
        return self.stencil.dim

    @property
    def size(self):
        return len(self.int_points)

    @property
    def points(self):
        """Physical coordinates, shape (n, d)."""
        return self.h * self.int_points.astype(float)

    def _encode(self, ip):
        ip = np.asarray(ip, dtype=np.int64)
        key = np.zeros(ip.shape[:-1], dtype=np.int64)
        inside = np.all(np.abs(ip) <= self._span, axis=-1)
        for j in range(self.dim):
            key = key * (2 * self._span + 1) + (ip[..., j] + self._span)
        return np.where(inside, key, -1)

    def lookup(self, ip):
        """Ordinals of integer points ``ip`` (..., d); OUTSIDE where absent."""
        key = self._encode(ip)
        pos = np.searchsorted(self._keys, key)
        pos = np.minimum(pos, len(self._keys) - 1)
        found = (self._keys[pos] == key) & (key >= 0)
        return np.where(found, pos, OUTSIDE)

    def index(self, point):
        """Ordinal of a physical point, or OUTSIDE."""
        ip = np.rint(np.asarray(point, dtype=float) / self.h).astype(np.int64)
        if not np.allclose(ip * self.h, point, rtol=0, atol=1e-9 * self.h):
            return OUTSIDE
        return int(self.lookup(ip.reshape(1, -1))[0])

    def shift(self, offset):
        """Ordinals of x + h*offset for every grid point (vectorised neighbour_index)."""
        return self.lookup(self.int_points + np.asarray(offset, dtype=np.int64))

    def ball_mask(self, radius):
        """Points with |x| <= radius."""
        r = np.linalg.norm(self.points, axis=1)
        return r <= radius * (1 + _BALL_SLACK)


def build_grid(stencil, h, box_radius):
    """All points of the lattice generated by ``h * stencil`` inside the closed ball."""
    if not h > 0 or not np.isfinite(h):
        raise DomainError(f"mesh size must be positive, got {h}")
    if box_radius < h * stencil.max_norm():
        raise DomainError("box radius smaller than one stencil step")
    basis = _echelon_basis(stencil.nonzero)
    rad = box_radius / h
    span = int(np.floor(rad * (1 + _BALL_SLACK)))
    axes = [np.arange(-span, span + 1, dtype=np.int64)] * stencil.dim
    cand = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, stencil.dim)
    sq = np.sum(cand.astype(float) ** 2, axis=1)
    cand = cand[sq <= rad * rad * (1 + 2 * _BALL_SLACK)]
    cand = cand[lattice_membership(cand, basis)]
    # meshgrid 'ij' + reshape already gives lexicographic order
    g = Grid(stencil, float(h), float(box_radius), cand, np.empty(0, dtype=np.int64), span)
    keys = g._encode(cand)
    object.__setattr__(g, "_keys", keys)
    assert np.all(np.diff(keys) > 0)
    return g


def neighbor_index(grid, point_index, offset, sign=1):
    """Ordinal of x +/- h*offset, or OUTSIDE."""
    ip = grid.int_points[point_index] + sign * np.asarray(offset, dtype=np.int64)
    return int(grid.lookup(ip.reshape(1, -1))[0])


def _level_factor(fine, coarse):
    if fine.stencil != coarse.stencil or fine.box_radius != coarse.box_radius:
        raise NestingError("grids differ in stencil or box")
    ratio = coarse.h / fine.h
    factor = int(round(ratio))
    if factor < 1 or factor & (factor - 1) or coarse.h != fine.h * factor:
        raise NestingError(f"coarse/fine mesh ratio {ratio} is not a power of two")
    return factor


def restriction_indices(fine, coarse):
    """Fine-grid ordinals of every coarse point."""
    factor = _level_factor(fine, coarse)
    idx = fine.lookup(coarse.int_points * factor)
    if np.any(idx == OUTSIDE):
        raise NestingError("coarse point absent from fine grid")
    return idx


def restrict(values, fine, coarse):
    """Sample a fine-grid field at the coarse points (exact, no interpolation)."""
    values = np.asarray(values)
    if values.shape[-1] != fine.size:
        raise DomainError("field length does not match fine grid")
    return values[..., restriction_indices(fine, coarse)]


def inject(values, coarse, fine):
    """Place a coarse field on the fine grid, zero elsewhere."""
    out = np.zeros(np.shape(values)[:-1] + (fine.size,))
    out[..., restriction_indices(fine, coarse)] = values
    return out
