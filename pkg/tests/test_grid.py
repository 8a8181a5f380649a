import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spdefd.errors import DomainError, InvalidStencilError, NestingError
from spdefd.grid import (
    OUTSIDE,
    StencilSet,
    build_grid,
    inject,
    neighbor_index,
    restrict,
    restriction_indices,
)


def test_stencil_puts_zero_first():
    s = StencilSet(1, ((1,), (0,), (2,)))
    assert s.vectors == ((0,), (1,), (2,))
    assert s.nonzero == ((1,), (2,))


@pytest.mark.parametrize(
    "vectors",
    [((0,),), ((1,), (1,)), ((0.5,),), ((1, 0),)],
)
def test_stencil_rejects_bad_sets(vectors):
    with pytest.raises(InvalidStencilError):
        StencilSet(1, vectors)


def test_1d_half_mesh():
    g = build_grid(StencilSet.unit(1), 0.5, 1.0)
    assert np.allclose(g.points[:, 0], [-1, -0.5, 0, 0.5, 1])


def test_2d_unit_ball():
    g = build_grid(StencilSet.unit(2), 1.0, 1.0)
    got = {tuple(p) for p in g.points.astype(int)}
    assert got == {(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)}


def test_example_point_count():
    # 2 * floor(13 / 0.1) + 1
    g = build_grid(StencilSet.unit(1), 0.1, 13.0)
    assert g.size == 261


def test_sparse_stencil_generates_subgroup():
    # {2} alone generates 2hZ
    g = build_grid(StencilSet.from_nonzero(1, [(2,)]), 0.5, 3.0)
    assert np.allclose(g.points[:, 0], [-3, -2, -1, 0, 1, 2, 3])


def test_skew_stencil_2d_lattice():
    # (1,1) and (1,-1) generate the checkerboard x1 + x2 even
    g = build_grid(StencilSet.from_nonzero(2, [(1, 1), (1, -1)]), 1.0, 2.0)
    ip = g.int_points
    assert np.all((ip.sum(axis=1) % 2) == 0)
    assert (1, 1) in {tuple(p) for p in ip}
    assert (1, 0) not in {tuple(p) for p in ip}


def test_points_sorted_lexicographically():
    g = build_grid(StencilSet.unit(2), 0.5, 2.0)
    keys = [tuple(p) for p in g.int_points]
    assert keys == sorted(keys)


def test_build_grid_errors():
    with pytest.raises(DomainError):
        build_grid(StencilSet.unit(1), 0.0, 1.0)
    with pytest.raises(DomainError):
        build_grid(StencilSet.unit(1), 1.0, 0.5)


@given(
    st.sampled_from([1, 2]),
    st.sampled_from([0.5, 0.25, 0.2, 0.1]),
    st.floats(1.0, 3.0),
)
def test_grids_nest(dim, h, box):
    s = StencilSet.unit(dim)
    coarse, fine = build_grid(s, h, box), build_grid(s, h / 2, box)
    idx = fine.lookup(coarse.int_points * 2)
    assert np.all(idx != OUTSIDE)
    assert np.array_equal(fine.points[idx], coarse.points)


def test_restrict_examples():
    s = StencilSet.unit(1)
    coarse, fine = build_grid(s, 0.2, 2.0), build_grid(s, 0.1, 2.0)
    assert np.array_equal(restrict(np.ones(fine.size), fine, coarse), np.ones(coarse.size))
    x2f = fine.points[:, 0] ** 2
    assert np.array_equal(restrict(x2f, fine, coarse), fine.points[restriction_indices(fine, coarse), 0] ** 2)
    assert np.allclose(restrict(x2f, fine, coarse), coarse.points[:, 0] ** 2, rtol=0, atol=1e-15)
    v = np.arange(coarse.size, dtype=float)
    assert np.array_equal(restrict(v, coarse, coarse), v)


@given(st.lists(st.floats(-1e6, 1e6), min_size=21, max_size=21), st.sampled_from([1, 2, 3]))
def test_restrict_after_inject_is_identity(vals, levels):
    s = StencilSet.unit(1)
    coarse = build_grid(s, 0.1, 1.0)
    fine = build_grid(s, 0.1 / 2**levels, 1.0)
    v = np.array(vals)
    assert np.array_equal(restrict(inject(v, coarse, fine), fine, coarse), v)


def test_restrict_rejects_non_nested():
    s = StencilSet.unit(1)
    with pytest.raises(NestingError):
        restriction_indices(build_grid(s, 0.3, 2.0), build_grid(s, 0.2, 2.0))
    with pytest.raises(NestingError):
        restriction_indices(build_grid(s, 0.1, 2.0), build_grid(s, 0.2, 3.0))


def test_neighbor_index():
    g = build_grid(StencilSet.unit(1), 0.5, 1.0)
    mid = g.index([0.0])
    assert neighbor_index(g, mid, (1,)) == g.index([0.5])
    assert neighbor_index(g, mid, (1,), sign=-1) == g.index([-0.5])
    assert neighbor_index(g, g.index([1.0]), (1,)) == OUTSIDE
    assert neighbor_index(g, mid, (0,)) == mid


def test_index_off_grid():
    g = build_grid(StencilSet.unit(1), 0.5, 1.0)
    assert g.index([0.25]) == OUTSIDE
    assert g.index([5.0]) == OUTSIDE
