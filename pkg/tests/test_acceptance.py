"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also collected in the
terminal summary).  Seeds are fixed up front and never tuned.
"""
import numpy as np
import pytest

from spdefd.characteristics import FlowConfig
from spdefd.cutoff import CutoffFn, truncate_problem
from spdefd.experiments import (
    ExperimentConfig,
    admitted,
    run_convergence_space,
    run_convergence_time,
    run_localization,
    run_oracle_check,
)
from spdefd.grid import StencilSet, build_grid, inject, restrict
from spdefd.noise import generate, path_values
from spdefd.problem import check_discrete_parabolicity, DiscreteCoeffs, get_problem
from spdefd.report import to_csv, to_json
from spdefd.richardson import MAX_DEPTH, weights
from spdefd.solver import run, solver_grid
from fractions import Fraction

SEED = 0


def test_c1_richardson_weights(record):
    w1 = weights(1).exact == (Fraction(-1, 3), Fraction(4, 3))
    moments = all(
        (m := weights(r).moments())[0] == 1 and all(v == 0 for v in m[1:]) for r in range(MAX_DEPTH + 1)
    )
    ok = record(1, w1 and moments, f"weights(1)=(-1/3, 4/3): {w1}; exact moments for r<=8: {moments}")
    assert ok


def test_c2_stochastic_transport(record):
    p = get_problem("stochastic-transport")
    z = CutoffFn(10.0)
    tau = 1e-4
    n = int(round(p.T / tau))
    noise = generate(SEED, 0, n, tau, 1)
    w_T = path_values(noise)[-1]
    errs = []
    for h in (0.2, 0.1, 0.05):
        g = solver_grid(p.stencil, h, z)
        v = run(p, z, g, noise, store=False).values[-1]
        m = g.ball_mask(0.9 * 10.0)
        errs.append(float(np.max(np.abs(v[m] - p.exact(p.T, g.points[m], w_T)))))
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    ok = record(2, mono and errs[-1] < 1e-2,
                f"max errors h=0.2,0.1,0.05: {', '.join(f'{e:.4g}' for e in errs)} (monotone {mono}, finest < 1e-2)")
    assert ok


def test_c3_spatial_order_heat(record):
    base = dict(problem="heat", T=0.05, R=6.0, h=0.2, levels=4, tau=1e-3, tau_rule="h4", seed=SEED)
    s0 = run_convergence_space(ExperimentConfig(r=0, **base)).slope
    s1 = run_convergence_space(ExperimentConfig(r=1, **base)).slope
    ok0 = s0 is not None and abs(s0 - 2.0) <= 0.3
    ok1 = s1 is not None and s1 >= 3.7
    ok = record(3, ok0 and ok1, f"RMS slope r=0: {s0:.4f} (2.0 +/- 0.3), r=1: {s1:.4f} (>= 3.7)")
    assert ok


def test_c4_temporal_order(record):
    cfg = ExperimentConfig(problem="paper-example", T=1.0, R=10.0, h=0.1, tau=2.0**-6, tau_levels=5,
                           ref_extra=2, samples=50, seed=SEED)
    rep = run_convergence_time(cfg)
    s = rep.slope
    n_adm = len(admitted(rep.rows))
    ok = s is not None and abs(s - 1.0) <= 0.3 and n_adm == len(rep.rows) and rep.valid
    record(4, ok, f"MSE slope in tau over 2^-6..2^-10: {s:.4f} (1.0 +/- 0.3), admitted levels {n_adm}/5, "
                  f"mse {', '.join(f'{r.mse:.3g}' for r in rep.rows)}")
    assert ok


def test_c5_localization(record):
    cfg = ExperimentConfig(problem="paper-example", T=1.0, h=0.05, tau=1e-3, radii=(4.0, 6.0, 8.0),
                           R_ref=16.0, samples=20, seed=SEED)
    rep = run_localization(cfg)
    errs = [r.mse for r in rep.rows]
    mono = all(b < a for a, b in zip(errs, errs[1:]))
    coef = rep.slope
    neg = coef is not None and coef < 0
    record(5, mono and neg, f"mse R=4,6,8: {', '.join(f'{e:.3g}' for e in errs)} (strictly decreasing {mono}); "
                            f"log-mse vs R^2 coefficient {coef} (negative {neg})")
    assert mono and neg


def test_c6_oracle_cross_validation(record):
    cfg = ExperimentConfig(problem="paper-example", T=1.0, R=10.0, h=0.05, tau=1e-3, seed=SEED)
    (res,) = run_oracle_check(cfg, [(1.0, 0.0)], FlowConfig(m_inner=10_000), slack=0.02, k_sigma=3.0)
    gap = abs(res.grid_value - res.mean)
    ok = gap <= 3 * res.stderr + 0.02
    record(6, ok, f"grid {res.grid_value:.6g}, oracle {res.mean:.6g} +/- {res.stderr:.3g}, gap {gap:.3g}")
    assert ok


def _invariants():
    out = {}
    # compatibility round-trip
    p = get_problem("paper-example")
    x = np.linspace(-6, 6, 121).reshape(-1, 1)
    a, b, c, s, mu = p.data.coeffs(0.0, x)
    out["compatibility"] = bool(
        np.max(np.abs(a[:, 0, 0] - np.sin(x[:, 0]) ** 2)) <= 1e-12
        and np.max(np.abs(s[:, 0, 0] - np.sin(x[:, 0]))) <= 1e-12
        and not b.any() and not c.any() and not mu.any()
    )
    # a = 0, b = 1 is rejected
    dc = DiscreteCoeffs(StencilSet.unit(1), 1, lambda t, x: np.zeros((len(x), 2, 2)),
                        lambda t, x: np.tile(np.array([[0.0], [1.0]]), (len(x), 1, 1)))
    rep = check_discrete_parabolicity(dc, [(0.0, 0.3)])
    out["parabolicity"] = (not rep.passed) and rep.worst_eigenvalue == pytest.approx(-1.0)
    # plateau
    z = CutoffFn(10.0)
    xp = np.linspace(-10, 10, 4001).reshape(-1, 1)
    out["plateau"] = bool(np.all(z(xp) == 1.0))
    # support confinement
    g = solver_grid(p.stencil, 0.1, CutoffFn(4.0))
    tr = run(p, CutoffFn(4.0), g, generate(SEED, 0, 100, 0.01, 1))
    outside = np.abs(g.points[:, 0]) >= CutoffFn(4.0).support_radius
    out["support"] = bool(outside.any() and np.all(tr.values[:, outside] == 0.0))
    # nesting and restriction
    s1 = StencilSet.unit(1)
    gc, gf = build_grid(s1, 0.1, 13.0), build_grid(s1, 0.025, 13.0)
    v = np.cos(gc.points[:, 0])
    out["nesting"] = bool(np.array_equal(restrict(inject(v, gc, gf), gf, gc), v)
                          and np.array_equal(restrict(np.cos(gf.points[:, 0]), gf, gc), v))
    # deterministic seed independence
    heat = get_problem("heat", T=0.1)
    gh = solver_grid(heat.stencil, 0.1, CutoffFn(4.0))
    r1 = run(heat, CutoffFn(4.0), gh, generate(1, 0, 20, 0.005, 1)).values
    r2 = run(heat, CutoffFn(4.0), gh, generate(2, 7, 20, 0.005, 1)).values
    out["seed-independence"] = bool(np.array_equal(r1, r2))
    # reports across worker counts
    base = dict(problem="paper-example", T=0.25, R=4.0, h=0.2, tau=0.25 / 4, tau_levels=2, ref_extra=1,
                samples=4, seed=SEED)
    texts = []
    for workers in (1, 3):
        rep = run_convergence_time(ExperimentConfig(workers=workers, **base))
        rep.metadata["config"].pop("workers")
        texts.append((to_csv(rep), to_json(rep)))
    out["workers"] = texts[0] == texts[1]
    return out


def test_c7_structural_invariants(record):
    res = _invariants()
    ok = all(res.values())
    record(7, ok, "; ".join(f"{k} {'ok' if v else 'BROKEN'}" for k, v in res.items()))
    assert ok
