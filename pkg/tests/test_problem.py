import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import pts
from spdefd.errors import ConfigError, NotParabolicError
from spdefd.grid import StencilSet
from spdefd.problem import (
    ContinuousData,
    DiscreteCoeffs,
    check_discrete_parabolicity,
    degenerate_structure,
    derive_continuous,
    get_problem,
    problem_from_text,
)

XS = pts(*np.linspace(-5, 5, 41))


def const_dc(stencil, K, fra_entries=(), frb_entries=()):
    S = stencil.size

    def fra(t, x):
        out = np.zeros((len(x), S, S))
        for (l, m), v in fra_entries:
            out[:, l, m] = v(x) if callable(v) else v
        return out

    def frb(t, x):
        out = np.zeros((len(x), S, K))
        for (l, k), v in frb_entries:
            out[:, l, k] = v(x) if callable(v) else v
        return out

    return DiscreteCoeffs(stencil, K, fra, frb)


def test_example_round_trip():
    cd = get_problem("paper-example").data
    a, b, c, s, mu = cd.coeffs(0.3, XS)
    x = XS[:, 0]
    assert np.allclose(a[:, 0, 0], np.sin(x) ** 2, rtol=0, atol=1e-12)
    assert np.allclose(s[:, 0, 0], np.sin(x), rtol=0, atol=1e-12)
    assert not b.any() and not c.any() and not mu.any()


def test_zero_coefficients():
    cd = derive_continuous(const_dc(StencilSet.unit(2), 2), 1.0)
    for arr in cd.coeffs(0.0, np.zeros((3, 2))):
        assert not np.any(arr)


def test_zero_order_only():
    cd = derive_continuous(const_dc(StencilSet.unit(1), 1, [((0, 0), 5.0)]), 1.0)
    a, b, c, s, mu = cd.coeffs(0.0, XS)
    assert np.all(c == 5.0)
    assert not a.any() and not b.any() and not s.any() and not mu.any()


vals = st.floats(-3, 3, allow_nan=False)


@given(st.lists(vals, min_size=9, max_size=9), st.lists(vals, min_size=6, max_size=6))
def test_compatibility_identities_2d(A, B):
    # fra and frb constants on {0, e1, e2}; a = sum fra^{lk} l k^T etc.
    s = StencilSet.unit(2)
    A = np.array(A).reshape(3, 3)
    B = np.array(B).reshape(3, 2)
    dc = const_dc(s, 2, [((l, m), A[l, m]) for l in range(3) for m in range(3)],
                  [((l, k), B[l, k]) for l in range(3) for k in range(2)])
    a, b, c, sg, mu = derive_continuous(dc, 1.0).coeffs(0.0, np.zeros((1, 2)))
    lam = s.array()[1:].astype(float)
    a_ref = lam.T @ A[1:, 1:] @ lam
    a_ref = 0.5 * (a_ref + a_ref.T)
    assert np.allclose(a[0], a_ref, atol=1e-12)
    assert np.allclose(b[0], (A[0, 1:] + A[1:, 0]) @ lam, atol=1e-12)
    assert abs(c[0] - A[0, 0]) <= 1e-12
    assert np.allclose(sg[0], lam.T @ B[1:], atol=1e-12)
    assert np.allclose(mu[0], B[0], atol=1e-12)


def test_parabolicity_example_passes():
    dc = get_problem("paper-example").discrete
    rep = check_discrete_parabolicity(dc, [(0.0, x) for x in np.linspace(-4, 4, 33)])
    assert rep.passed
    assert rep.worst_eigenvalue >= -1e-12


def test_parabolicity_rejects_pure_noise():
    dc = const_dc(StencilSet.unit(1), 1, frb_entries=[((1, 0), 1.0)])
    rep = check_discrete_parabolicity(dc, [(0.0, 0.5), (0.1, 1.0)])
    assert not rep.passed
    assert rep.worst_eigenvalue == pytest.approx(-1.0)
    assert rep.witness is not None


def test_parabolicity_identity_passes():
    s = StencilSet.unit(2)
    dc = const_dc(s, 1, [((1, 1), 1.0), ((2, 2), 1.0)])
    rep = check_discrete_parabolicity(dc, [(0.0, (0.0, 0.0))])
    assert rep.passed and rep.worst_eigenvalue == pytest.approx(2.0)


def test_degenerate_structure_example():
    ds = degenerate_structure(get_problem("paper-example").data)
    x = XS[:, 0]
    assert np.allclose(ds.alpha(0.0, XS)[:, 0, 0], np.sin(x) ** 2, atol=1e-12)
    assert np.allclose(ds.rho(0.0, XS)[:, 0, 0], np.abs(np.sin(x)), atol=1e-12)


def test_degenerate_structure_generic_sqrt():
    # example coefficients without the rho override: eigen square root gives |sin|
    cd = get_problem("paper-example").data
    from dataclasses import replace

    ds = degenerate_structure(replace(cd, rho=None))
    assert np.allclose(ds.rho(0.0, XS)[:, 0, 0], np.abs(np.sin(XS[:, 0])), atol=1e-7)


def test_fully_degenerate_transport():
    ds = degenerate_structure(ContinuousData(1, 1, 1.0, a=lambda t, x: np.full((len(x), 1, 1), 0.5),
                                             sigma=lambda t, x: np.ones((len(x), 1, 1))))
    assert np.allclose(ds.rho(0.0, XS), 0.0)


def test_four_identity():
    ds = degenerate_structure(ContinuousData(2, 1, 1.0, a=lambda t, x: np.tile(2 * np.eye(2), (len(x), 1, 1))))
    assert np.allclose(ds.rho(0.0, np.zeros((2, 2))), 2 * np.eye(2))


@given(st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_rho_squares_to_alpha(entries):
    m = np.array(entries).reshape(2, 2)
    a0 = m @ m.T  # 2a = alpha when sigma = 0
    cd = ContinuousData(2, 1, 1.0, a=lambda t, x: np.tile(0.5 * a0, (len(x), 1, 1)))
    ds = degenerate_structure(cd)
    rho = ds.rho(0.0, np.zeros((1, 2)))[0]
    assert np.allclose(rho, rho.T)
    assert np.allclose(rho @ rho, a0, atol=1e-8 * (1 + np.abs(a0).max()))


def test_non_parabolic_raises():
    cd = ContinuousData(1, 1, 1.0, sigma=lambda t, x: np.ones((len(x), 1, 1)))
    with pytest.raises(NotParabolicError) as info:
        degenerate_structure(cd).rho(0.0, XS)
    assert info.value.eigenvalue < 0


def test_bound_check():
    dc = get_problem("paper-example").discrete
    assert dc.check_bound(0.0, XS)


def test_registry():
    assert get_problem("heat", T=0.5).T == 0.5
    with pytest.raises(ConfigError):
        get_problem("nope")


TEXT = """
[problem]
dim = 1
stencil = 1
T = 0.5
autonomous = true
psi = 1 / (1 + x**2)
fra[1,1] = sin(x)**2
frb[1,1] = sin(x)
"""


def test_text_problem_matches_registry():
    p = problem_from_text(TEXT)
    ref = get_problem("paper-example")
    assert p.T == 0.5 and p.discrete.autonomous
    for u, v in zip(p.discrete.eval(0.0, XS), ref.discrete.eval(0.0, XS)):
        assert np.array_equal(u, v)
    assert np.array_equal(p.data.initial(XS), ref.data.initial(XS))


@pytest.mark.parametrize("bad", ["[other]\nx=1", "[problem]\nfra[3,1] = 1", "[problem]\nbogus = 1",
                                 "[problem]\nfrb[1,2] = 1", "[problem]\ndim = one"])
def test_text_problem_errors(bad):
    with pytest.raises(ConfigError):
        problem_from_text(bad)
