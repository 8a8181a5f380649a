"""Convergence studies in h, tau and R, with Monte Carlo error estimation.

Every study reports, per level, the sample mean over M driving paths of

    max_i max_{x in G_h, |x| <= nu R} |v_i(x) - reference_i(x)|^2

and fits a log-log (or log-vs-R^2) slope over the levels that clear the
noise floor.  All levels of one sample are marched in lockstep so nothing
larger than a grid field is ever stored.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .characteristics import FlowConfig, estimate_u
from .cutoff import CutoffFn, truncate_problem
from .errors import ConfigError, DomainError, SpdeError
from .grid import OUTSIDE
from .noise import coarsen, generate
from .problem import get_problem, problem_from_text
from .richardson import weights
from .solver import DEFAULT_TOL, Scheme, solver_grid

log = logging.getLogger(__name__)

NOISE_FLOOR_FACTOR = 10.0
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "paper-example"
    problem_text: Optional[str] = None
    T: Optional[float] = None
    R: float = 10.0
    nu: float = 0.9
    cutoff: str = "arctan-bump"
    # spatial ladder: base meshes h, h/2, ..., h/2^(levels-1); each extrapolated with depth r
    h: float = 0.1
    levels: int = 3
    r: int = 0
    # time step; "h4" picks tau <= h^4 per spatial level (analytic references only)
    tau: float = 1e-3
    tau_rule: str = "fixed"
    # time ladder: tau, tau/2, ..., plus ref_extra further halvings for the reference
    tau_levels: int = 5
    ref_extra: int = 2
    # localisation
    radii: tuple = (4.0, 6.0, 8.0)
    R_ref: float = 16.0
    samples: int = 1
    seed: int = 0
    workers: int = 1
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        if not 0 < self.nu < 1:
            raise ConfigError("nu must lie in (0, 1)")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.levels < 1 or self.tau_levels < 1 or not self.radii:
            raise ConfigError("ladders must be nonempty")
        if self.tau_rule not in ("fixed", "h4"):
            raise ConfigError(f"unknown tau rule {self.tau_rule!r}")
        if not (self.h > 0 and self.tau > 0 and self.R > 0):
            raise ConfigError("h, tau and R must be positive")
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))

    def build_problem(self):
        if self.problem_text is not None:
            p = problem_from_text(self.problem_text, name=self.problem)
            return p if self.T is None else p.with_T(self.T)
        return get_problem(self.problem, self.T)

    def echo(self):
        out = asdict(self)
        out["radii"] = list(self.radii)
        return out


@dataclass
class Row:
    level: int
    h: float
    tau: float
    R: float
    mse: float
    rmse: float
    stderr: float
    samples: int


@dataclass
class ConvergenceReport:
    kind: str
    rows: list = field(default_factory=list)
    fit: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def slope(self):
        return self.fit.get("slope")

    @property
    def valid(self):
        return self.metadata.get("valid", True)


def error_metric(a, b, grid, nu, R):
    """max over time indices and grid points with |x| <= nu R of |a - b|^2."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape[-1] != grid.size:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape} on a grid of {grid.size} points")
    mask = grid.ball_mask(nu * R)
    if not mask.any():
        return 0.0
    return float(np.max((a[..., mask] - b[..., mask]) ** 2))


def fit_slope(xs, ys):
    """Least-squares line through (xs, ys); residual is the RMS deviation."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if len(xs) < 2 or np.ptp(xs) == 0:
        return {"slope": None, "intercept": None, "residual": None}
    slope, intercept = np.polyfit(xs, ys, 1)
    res = ys - (slope * xs + intercept)
    return {"slope": float(slope), "intercept": float(intercept), "residual": float(np.sqrt(np.mean(res**2)))}


def admitted(rows):
    """Levels whose RMS error exceeds 10 standard errors of the RMS estimate.

    The RMS standard error is the delta-method value stderr / (2 rmse), so the
    test reads mse > 5 stderr; zero-error levels are always rejected.
    """
    return [row for row in rows if row.mse > 0 and row.rmse > NOISE_FLOOR_FACTOR * row.stderr / (2 * row.rmse)]


def _rows_from_samples(params, per_sample):
    """per_sample: list (over samples) of per-level metric lists, None for failed samples."""
    good = [s for s in per_sample if s is not None]
    rows = []
    for j, (h, tau, R) in enumerate(params):
        vals = np.array([s[j] for s in good], dtype=float)
        M = len(vals)
        mse = float(np.mean(vals)) if M else math.nan
        se = float(np.std(vals, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
        rows.append(Row(j, float(h), float(tau), float(R), mse, math.sqrt(mse) if M else math.nan, se, M))
    return rows


def _failure_meta(per_sample, samples):
    failed = sum(s is None for s in per_sample)
    return {"failed_samples": failed, "valid": failed <= MAX_FAILURE_RATE * samples}


def _map_samples(fn, config):
    ids = range(config.samples)
    if config.workers > 1 and config.samples > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(fn, [config] * config.samples, ids))
    return [fn(config, i) for i in ids]


def _steps(T, tau):
    n = int(round(T / tau))
    if n < 1 or abs(n * tau - T) > 1e-9 * T:
        raise ConfigError(f"T = {T} is not a multiple of tau = {tau}")
    return n


class Ladder:
    """Solvers at h, h/2, ..., h/2^r on one box, combined on the coarsest grid."""

    def __init__(self, problem_cut, zeta, h, r, tau, h_box, tol=DEFAULT_TOL):
        self.w = weights(r)
        self.grids = [solver_grid(problem_cut.stencil, h / 2**j, zeta, h_coarse=h_box) for j in range(r + 1)]
        self.schemes = [Scheme(problem_cut, g, tau, zeta=zeta, tol=tol) for g in self.grids]
        coarse = self.grids[0]
        self.index = [np.arange(coarse.size)] + [
            g.lookup(coarse.int_points * 2**j) for j, g in enumerate(self.grids) if j > 0
        ]
        self.values = [s.initial() for s in self.schemes]
        self.consumed = np.zeros(problem_cut.discrete.noise_channels)

    @property
    def grid(self):
        return self.grids[0]

    def step(self, i, xi):
        self.values = [s.step(i, v, xi) for s, v in zip(self.schemes, self.values)]
        self.consumed = self.consumed + xi

    def field(self):
        c = self.w.c
        out = c[0] * self.values[0]
        for cj, v, idx in zip(c[1:], self.values[1:], self.index[1:]):
            out = out + cj * v[idx]
        return out


class _Tracker:
    """Running max of the squared error on a ball."""

    def __init__(self, grid, radius, ref_index=None):
        self.mask = grid.ball_mask(radius)
        self.ref_index = ref_index if ref_index is None else ref_index[self.mask]
        self.value = 0.0

    def update(self, field, ref):
        a = field[self.mask]
        b = ref if self.ref_index is None else ref[self.ref_index]
        self.value = max(self.value, float(np.max((a - b) ** 2, initial=0.0)))


def _space_levels(config, problem):
    hs = [config.h / 2**j for j in range(config.levels)]
    taus = []
    for h in hs:
        if config.tau_rule == "h4":
            n = max(1, math.ceil(problem.T / min(config.tau, h**4) - 1e-9))
            taus.append(problem.T / n)
        else:
            taus.append(config.tau)
    return hs, taus


def _space_sample(config, sample_id):
    problem = config.build_problem()
    zeta = CutoffFn(config.R, config.cutoff)
    cut = truncate_problem(problem, zeta)
    hs, taus = _space_levels(config, problem)
    K = problem.discrete.noise_channels
    radius = config.nu * config.R
    h_box = hs[0]
    try:
        if problem.exact is not None:
            out = []
            for h, tau in zip(hs, taus):
                n = _steps(problem.T, tau)
                path = generate(config.seed, sample_id, n, tau, K)
                ladder = Ladder(cut, zeta, h, config.r, tau, h_box, config.tol)
                tr = _Tracker(ladder.grid, radius)
                x = ladder.grid.points[tr.mask]
                w = np.zeros(K)
                tr.update(ladder.field(), problem.exact(0.0, x, w))
                for i in range(1, n + 1):
                    xi = path.w[i - 1]
                    ladder.step(i, xi)
                    w = w + xi
                    tr.update(ladder.field(), problem.exact(i * tau, x, w))
                out.append(tr.value)
            return out
        # self-reference: one extrapolated level finer, shared tau and path
        tau = config.tau
        n = _steps(problem.T, tau)
        path = generate(config.seed, sample_id, n, tau, K)
        ladders = [Ladder(cut, zeta, h, config.r, tau, h_box, config.tol) for h in hs]
        ref = Ladder(cut, zeta, hs[-1] / 2, config.r, tau, h_box, config.tol)
        trackers = []
        for lad in ladders:
            factor = int(round(lad.grid.h / ref.grid.h))
            trackers.append(_Tracker(lad.grid, radius, ref.grid.lookup(lad.grid.int_points * factor)))
        for i in range(n + 1):
            if i:
                for lad in ladders + [ref]:
                    lad.step(i, path.w[i - 1])
            rf = ref.field()
            for lad, tr in zip(ladders, trackers):
                tr.update(lad.field(), rf)
        return [tr.value for tr in trackers]
    except SpdeError as exc:
        log.warning("sample %d failed: %s", sample_id, exc)
        return None


def run_convergence_space(config):
    """Error of the (extrapolated) solution along the h ladder; slope of log RMS vs log h."""
    problem = config.build_problem()
    hs, taus = _space_levels(config, problem)
    if problem.exact is None and config.tau_rule != "fixed":
        raise ConfigError("self-referenced space studies need a fixed tau")
    per_sample = _map_samples(_space_sample, config)
    rows = _rows_from_samples([(h, t, config.R) for h, t in zip(hs, taus)], per_sample)
    use = admitted(rows)
    fit = fit_slope([math.log(r.h) for r in use], [math.log(r.rmse) for r in use])
    fit.update(x="log h", y="log rmse", levels=[r.level for r in use])
    meta = {
        "config": config.echo(),
        "reference": "analytic" if problem.exact is not None else f"extrapolated (r={config.r}) at h={hs[-1] / 2}",
        **_failure_meta(per_sample, config.samples),
    }
    return ConvergenceReport("space", rows, fit, meta)


def _time_sample(config, sample_id):
    problem = config.build_problem()
    zeta = CutoffFn(config.R, config.cutoff)
    cut = truncate_problem(problem, zeta)
    K = problem.discrete.noise_channels
    tau_ref = config.tau / 2 ** (config.tau_levels - 1 + config.ref_extra)
    n_ref = _steps(problem.T, tau_ref)
    fine = generate(config.seed, sample_id, n_ref, tau_ref, K)
    factors = [2 ** (config.tau_levels - 1 + config.ref_extra - j) for j in range(config.tau_levels)]
    try:
        ref = Ladder(cut, zeta, config.h, config.r, tau_ref, config.h, config.tol)
        ladders, paths = [], []
        for m in factors:
            paths.append(coarsen(fine, m))
            ladders.append(Ladder(cut, zeta, config.h, config.r, tau_ref * m, config.h, config.tol))
        mask = ref.grid.ball_mask(config.nu * config.R)
        errs = [0.0] * len(factors)
        for i in range(n_ref + 1):
            if i:
                ref.step(i, fine.w[i - 1])
            rf = None
            for j, (m, lad, p) in enumerate(zip(factors, ladders, paths)):
                if i % m:
                    continue
                k = i // m
                if k:
                    lad.step(k, p.w[k - 1])
                if rf is None:
                    rf = ref.field()[mask]
                errs[j] = max(errs[j], float(np.max((lad.field()[mask] - rf) ** 2, initial=0.0)))
        # coupling: every level consumed exactly the fine path's total increment
        total = ref.consumed
        if any(not np.array_equal(lad.consumed, total) for lad in ladders):
            raise AssertionError("time levels consumed different Brownian increments")
        return errs
    except SpdeError as exc:
        log.warning("sample %d failed: %s", sample_id, exc)
        return None


def run_convergence_time(config):
    """Strong error along the tau ladder against a finer coupled reference; slope of log MSE vs log tau."""
    config.build_problem()  # fail early on a bad problem definition
    taus = [config.tau / 2**j for j in range(config.tau_levels)]
    tau_ref = config.tau / 2 ** (config.tau_levels - 1 + config.ref_extra)
    per_sample = _map_samples(_time_sample, config)
    rows = _rows_from_samples([(config.h, t, config.R) for t in taus], per_sample)
    use = admitted(rows)
    fit = fit_slope([math.log(r.tau) for r in use], [math.log(r.mse) for r in use])
    fit.update(x="log tau", y="log mse", levels=[r.level for r in use])
    meta = {
        "config": config.echo(),
        "reference": f"coupled self-reference at tau={tau_ref!r}",
        "coupling": "coarsened from one fine path per sample",
        **_failure_meta(per_sample, config.samples),
    }
    return ConvergenceReport("time", rows, fit, meta)


def _loc_sample(config, sample_id):
    problem = config.build_problem()
    K = problem.discrete.noise_channels
    tau = config.tau
    n = _steps(problem.T, tau)
    path = generate(config.seed, sample_id, n, tau, K)
    h = config.h
    try:
        def ladder(R):
            zeta = CutoffFn(R, config.cutoff)
            return Ladder(truncate_problem(problem, zeta), zeta, h, config.r, tau, h, config.tol)

        ref = ladder(config.R_ref)
        ladders = [ladder(R) for R in config.radii]
        trackers = []
        for R, lad in zip(config.radii, ladders):
            idx = ref.grid.lookup(lad.grid.int_points)
            if np.any(idx[lad.grid.ball_mask(config.nu * R)] == OUTSIDE):
                raise DomainError("reference grid does not cover the evaluation ball")
            trackers.append(_Tracker(lad.grid, config.nu * R, idx))
        for i in range(n + 1):
            if i:
                for lad in ladders + [ref]:
                    lad.step(i, path.w[i - 1])
            rf = ref.field()
            for lad, tr in zip(ladders, trackers):
                tr.update(lad.field(), rf)
        return [tr.value for tr in trackers]
    except SpdeError as exc:
        log.warning("sample %d failed: %s", sample_id, exc)
        return None


def run_localization(config):
    """Error between radius-R and radius-R_ref truncations on B_{nu R}; fit of log MSE against R^2."""
    if config.R_ref < max(config.radii):
        raise ConfigError("R_ref must be at least the largest radius")
    if config.R_ref < 2 * max(config.radii):
        log.warning("R_ref = %g is below twice the largest radius", config.R_ref)
    per_sample = _map_samples(_loc_sample, config)
    rows = _rows_from_samples([(config.h, config.tau, R) for R in config.radii], per_sample)
    use = admitted(rows)
    fit = fit_slope([r.R**2 for r in use], [math.log(r.mse) for r in use])
    fit.update(x="R^2", y="log mse", levels=[r.level for r in use])
    meta = {
        "config": config.echo(),
        "reference": f"truncation at R_ref={config.R_ref!r}",
        **_failure_meta(per_sample, config.samples),
    }
    return ConvergenceReport("localization", rows, fit, meta)


def with_overrides(config, **kw):
    return replace(config, **{k: v for k, v in kw.items() if v is not None})


@dataclass(frozen=True)
class OracleResult:
    t: float
    x: tuple
    grid_value: float
    mean: float
    stderr: float
    samples: int
    passed: bool


def run_oracle_check(config, points, flow=None, slack=0.02, k_sigma=3.0):
    """Compare the grid solution with the characteristics estimate at (t, x) points.

    Both are driven by sample ``0`` of ``config.seed``.  The characteristics
    run with step tau / substeps on a path whose coarsening drives the grid.
    A point passes when |grid - mean| <= k_sigma * stderr + slack.
    """
    flow = flow or FlowConfig()
    problem = config.build_problem()
    zeta = CutoffFn(config.R, config.cutoff)
    cut = truncate_problem(problem, zeta)
    K = problem.discrete.noise_channels
    n = _steps(problem.T, config.tau)
    # the oracle integrates on a path `substeps` times finer; the grid sees its coarsening
    fine = generate(config.seed, 0, n * flow.substeps, config.tau / flow.substeps, K)
    path = coarsen(fine, flow.substeps)
    wanted = {}
    for t, x in points:
        i = _steps(t, config.tau) if t > 0 else 0
        if i > n:
            raise ConfigError(f"t = {t} lies beyond T = {problem.T}")
        wanted.setdefault(i, []).append((t, tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))))
    ladder = Ladder(cut, zeta, config.h, config.r, config.tau, config.h, config.tol)
    grid_vals = {}
    for i in range(n + 1):
        if i:
            ladder.step(i, path.w[i - 1])
        for t, x in wanted.get(i, []):
            j = ladder.grid.index(np.array(x))
            if j == OUTSIDE:
                raise ConfigError(f"x = {x} is not a point of the coarse grid")
            grid_vals[(t, x)] = float(ladder.field()[j])
    out = []
    for t, x in points:
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(x, dtype=float)))
        est = estimate_u(cut.data, t, x[0] if len(x) == 1 else x, fine, flow)
        g = grid_vals[(t, x)]
        ok = abs(g - est["mean"]) <= k_sigma * est["stderr"] + slack
        out.append(OracleResult(float(t), x, g, est["mean"], est["stderr"], est["samples"], bool(ok)))
    return out
