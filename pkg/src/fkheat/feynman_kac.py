"""Feynman-Kac estimators for the Stratonovich and Skorokhod solutions.

W is integrated out conditionally on the Brownian paths wherever the
law allows it; only the regularized solver simulates (W, B) jointly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, TruncationDomainError
from .kernels_quadrature import closure_constant, node_factor, noncentral_abs_moment, pair_cells, path_leg, singular_double_integral_S, sum_box_integral
from .log import handle_log
from .model import EstimatorResult, HurstSpec, InitialCondition, Regime, TestFunction, TimeGrid, require_admissible
from .montecarlo import DEFAULT_EXP_CAP, clip_exponent, run_replicates, summarize
from .paths_fields import (
    BrownianPath,
    SheetSample,
    SmoothedNoiseField,
    mollified_inner,
    potential_table,
    sample_bm,
    sample_sheet,
)
from .rng import RngStream

logger = logging.getLogger(__name__)


class MomentKind(str, Enum):
    STRATONOVICH = "stratonovich"
    SKOROKHOD = "skorokhod"


def _finish(samples: np.ndarray, stream: RngStream, meta: Dict[str, Any], operation: str) -> EstimatorResult:
    """Column 0 is the sample, column 1 the clip flag."""
    samples = samples.reshape(samples.shape[0], -1)
    clips = int(np.sum(samples[:, 1])) if samples.shape[1] > 1 else 0
    return summarize(samples[:, 0], stream, meta=meta, clip_count=clips, operation=operation)


# ---------------------------------------------------------
# [로직 1] 조건부 가우시안 범함수
# ---------------------------------------------------------
@dataclass
class FkFunctionalSample:
    path: BrownianPath
    s_self: float
    v_sample: Optional[float] = None
    stream: Optional[str] = None


def conditional_functional(path: BrownianPath, spec: HurstSpec, t: float, stream: Optional[RngStream] = None) -> FkFunctionalSample:
    """S(B;t) along ``path`` and, given a stream, one draw of V_{t,x} ~ N(0, alpha_H S)."""
    s_self = singular_double_integral_S(path, spec, t).value
    if stream is None:
        return FkFunctionalSample(path, s_self)
    draw = math.sqrt(spec.alpha_h * s_self) * float(stream.generator().standard_normal())
    return FkFunctionalSample(path, s_self, draw, stream.describe())


def _self_and_cross(paths: Sequence[BrownianPath], spec: HurstSpec, t: float) -> Tuple[np.ndarray, np.ndarray]:
    legs = [path_leg(p, t) for p in paths]
    p = len(paths)
    diag = np.array([math.fsum(pair_cells(leg, leg, spec, same_path=True).ravel()) for leg in legs])
    cross = np.zeros((p, p))
    for j in range(p):
        for k in range(j + 1, p):
            cross[j, k] = math.fsum(pair_cells(legs[j], legs[k], spec, same_path=False).ravel())
    return diag, cross


def moment_p(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    p: int,
    kind: MomentKind,
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
    noise: bool = True,
) -> EstimatorResult:
    """E[u(t,x)^p] from p independent paths per replicate.

    Stratonovich: exp((alpha_H/2) sum_{j,k} S_jk). Skorokhod: exp(alpha_H sum_{j<k} S_jk).
    """
    require_admissible(spec, Regime.REGULAR, operation="moment_p")
    if p < 1:
        raise DomainError("moment order must be a positive integer", operation="moment_p")
    kind = MomentKind(kind)
    grid = TimeGrid.uniform(t, grid_n)
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))
    base = stream.sub("moment")

    def one(rs: RngStream) -> np.ndarray:
        paths = [sample_bm(grid, spec.d, start, rs.child(j)) for j in range(p)]
        weight = math.prod(float(f(path.values[:, -1])) for path in paths)
        if not noise:
            return np.array([weight, 0.0])
        diag, cross = _self_and_cross(paths, spec, t)
        if kind is MomentKind.STRATONOVICH:
            exponent = 0.5 * spec.alpha_h * (math.fsum(diag) + 2.0 * math.fsum(cross.ravel()))
        else:
            exponent = spec.alpha_h * math.fsum(cross.ravel())
        capped, clipped = clip_exponent(exponent, exp_cap)
        return np.array([weight * math.exp(float(capped)), float(clipped)])

    samples = run_replicates(one, mc, base, workers=workers)
    meta = {"kind": kind.value, "p": p, "t": t, "grid_n": grid_n}
    return _finish(samples, base, meta, "moment_p")


def stratonovich_mean(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
    noise: bool = True,
) -> EstimatorResult:
    """E[u(t,x)] = E^B[f(B^x_t) exp(alpha_H S(B;t) / 2)]; the p = 1 Stratonovich moment."""
    return moment_p(spec, f, t, x, 1, MomentKind.STRATONOVICH, mc, stream=stream, grid_n=grid_n,
                    workers=workers, exp_cap=exp_cap, noise=noise)


# ---------------------------------------------------------
# [로직 2] 지수 모멘트와 스케일링
# ---------------------------------------------------------
def exp_moment_Y(
    spec: HurstSpec,
    lam: float,
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
) -> EstimatorResult:
    """E exp(lam Y) with Y = S(B;1)."""
    require_admissible(spec, Regime.REGULAR, operation="exp_moment_Y")
    grid = TimeGrid.uniform(1.0, grid_n)
    origin = np.zeros(spec.d)

    def one(rs: RngStream) -> np.ndarray:
        if lam == 0.0:
            return np.array([1.0, 0.0])
        y = singular_double_integral_S(sample_bm(grid, spec.d, origin, rs), spec, 1.0).value
        capped, clipped = clip_exponent(lam * y, exp_cap)
        return np.array([math.exp(float(capped)), float(clipped)])

    base = stream.sub("exp_moment_Y")
    samples = run_replicates(one, mc, base, workers=workers)
    return _finish(samples, base, {"lambda": lam, "grid_n": grid_n}, "exp_moment_Y")


def scaling_mu(spec: HurstSpec, lam: float, t: float) -> float:
    """mu = (lam^2 / 2) alpha_H t^(kappa+1); E exp(lam V_{t,x}) = E exp(mu Y)."""
    return 0.5 * lam ** 2 * spec.alpha_h * t ** (spec.kappa + 1.0)


def exp_moment_V(
    spec: HurstSpec,
    lam: float,
    t: float,
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
) -> EstimatorResult:
    """E exp(lam V_{t,x}) = E^B exp((lam^2/2) alpha_H S(B;t)), paths on [0, t]."""
    require_admissible(spec, Regime.REGULAR, operation="exp_moment_V")
    grid = TimeGrid.uniform(t, grid_n)
    origin = np.zeros(spec.d)
    scale = 0.5 * lam ** 2 * spec.alpha_h

    def one(rs: RngStream) -> np.ndarray:
        s_val = singular_double_integral_S(sample_bm(grid, spec.d, origin, rs), spec, t).value
        capped, clipped = clip_exponent(scale * s_val, exp_cap)
        return np.array([math.exp(float(capped)), float(clipped)])

    base = stream.sub("exp_moment_V")
    samples = run_replicates(one, mc, base, workers=workers)
    meta = {"lambda": lam, "t": t, "mu": scaling_mu(spec, lam, t), "grid_n": grid_n}
    return _finish(samples, base, meta, "exp_moment_V")


# ---------------------------------------------------------
# [로직 3] Le Gall 이진 블록 분해
# ---------------------------------------------------------
@dataclass
class LegallBlocks:
    """alpha[n-1][k-1] is the integral over A_{n,k}; ``residual_band`` covers the level-N diagonal squares."""

    level_max: int
    path_level: int
    alpha: List[np.ndarray]
    residual_band: float
    total: float

    def partial_sums(self) -> np.ndarray:
        """2 sum_{m <= n} sum_k alpha_{m,k} for n = 1..N."""
        return np.cumsum([2.0 * math.fsum(level) for level in self.alpha])

    def identity_gap(self) -> float:
        """|Y - (2 sum alpha + R_N)| / Y."""
        recon = math.fsum([self.partial_sums()[-1], self.residual_band])
        return abs(self.total - recon) / abs(self.total)

    def band_fraction(self) -> float:
        return float(self.partial_sums()[-1] / self.total)

    def band_share(self) -> float:
        """R_N / Y, the part of the self integral left on the level-N diagonal squares."""
        return self.residual_band / self.total


def legall_decompose(path: BrownianPath, spec: HurstSpec, level_max: int, *, integrand_one: bool = False) -> LegallBlocks:
    """Split the self integral S(B;1) over the dyadic blocks A_{n,k} = [(2k-2)/2^n,(2k-1)/2^n] x [(2k-1)/2^n,2k/2^n]."""
    require_admissible(spec, Regime.REGULAR, operation="legall_decompose")
    grid = path.grid
    if grid.level is None or grid.t_max != 1.0 or grid.level < level_max:
        raise DomainError("need a dyadic path on [0,1] at least as fine as level_max", operation="legall_decompose")
    leg = path_leg(path, 1.0)
    if integrand_one:
        cells = np.full((grid.n, grid.n), grid.spacing ** 2)
    else:
        cells = pair_cells(leg, leg, spec, same_path=True)
    alpha = []
    for n in range(1, level_max + 1):
        side = 2 ** (grid.level - n)
        vals = np.empty(2 ** (n - 1))
        for k in range(1, 2 ** (n - 1) + 1):
            rows = slice((2 * k - 2) * side, (2 * k - 1) * side)
            cols = slice((2 * k - 1) * side, 2 * k * side)
            vals[k - 1] = math.fsum(cells[rows, cols].ravel())
        alpha.append(vals)
    side = 2 ** (grid.level - level_max)
    band = math.fsum(
        math.fsum(cells[j * side:(j + 1) * side, j * side:(j + 1) * side].ravel()) for j in range(2 ** level_max)
    )
    return LegallBlocks(level_max, grid.level, alpha, band, math.fsum(cells.ravel()))


def legall_alpha0_cells(path_a: BrownianPath, path_b: BrownianPath, spec: HurstSpec) -> np.ndarray:
    """Cells of int_0^1 int_0^1 (s+r)^(2H0-2) prod |B_s - B~_r|^(2H_i-2) for independent paths from 0.

    The path factor is averaged over the anti-diagonal corners; the corner
    cell at (0,0) takes its conditional expectation.
    """
    ra, rb = path_leg(path_a, 1.0), path_leg(path_b, 1.0)
    nodes_a, nodes_b = ra.nodes, rb.nodes
    weights = sum_box_integral(nodes_a[:-1, None], nodes_a[1:, None], nodes_b[None, :-1], nodes_b[None, 1:], spec.gamma0)
    factor = node_factor(ra, rb, spec.space_exponents)
    avg = 0.5 * (factor[1:, :-1] + factor[:-1, 1:])
    cells = weights * avg
    cells[0, 0] = closure_constant(spec) * float(
        sum_box_integral(nodes_a[0], nodes_a[1], nodes_b[0], nodes_b[1], spec.kappa - 1.0)
    )
    bad = ~np.isfinite(cells)
    for a, b in zip(*np.nonzero(bad)):
        sd = math.sqrt(0.5 * (nodes_a[a] + nodes_a[a + 1] + nodes_b[b] + nodes_b[b + 1]))
        law = math.prod(float(noncentral_abs_moment(p, 0.0, sd)) for p in spec.space_exponents)
        cells[a, b] = weights[a, b] * law
    return cells


def legall_alpha0(
    spec: HurstSpec, mc: int, *, stream: RngStream, cells: int = 64, workers: Optional[int] = None
) -> EstimatorResult:
    """E alpha_0 with two independent paths and the kernel (s+r)^(2H0-2)."""
    require_admissible(spec, Regime.REGULAR, operation="legall_alpha0")
    grid = TimeGrid.uniform(1.0, cells)
    origin = np.zeros(spec.d)

    def one(rs: RngStream) -> float:
        a = sample_bm(grid, spec.d, origin, rs.child(0))
        b = sample_bm(grid, spec.d, origin, rs.child(1))
        return math.fsum(legall_alpha0_cells(a, b, spec).ravel())

    base = stream.sub("legall_alpha0")
    return summarize(run_replicates(one, mc, base, workers=workers), base, meta={"cells": cells}, operation="legall_alpha0")


def legall_block_mean(
    spec: HurstSpec, n: int, mc: int, *, stream: RngStream, cells: int = 64, workers: Optional[int] = None
) -> EstimatorResult:
    """E alpha_{n,1}: the self integral over [0,2^-n] x [2^-n, 2^(1-n)] with ``cells`` cells per block side."""
    require_admissible(spec, Regime.REGULAR, operation="legall_block_mean")
    span = 2.0 ** (1 - n)
    grid = TimeGrid.uniform(span, 2 * cells)
    origin = np.zeros(spec.d)

    def one(rs: RngStream) -> float:
        leg = path_leg(sample_bm(grid, spec.d, origin, rs), span)
        return math.fsum(pair_cells(leg, leg, spec, same_path=True)[:cells, cells:].ravel())

    base = stream.sub(f"legall_block:{n}")
    meta = {"n": n, "scaled_target_factor": 2.0 ** (-n * (spec.kappa + 1.0))}
    return summarize(run_replicates(one, mc, base, workers=workers), base, meta=meta, operation="legall_block_mean")


def legall_level_correlation(blocks: Sequence[LegallBlocks], n: int) -> float:
    """Largest |sample correlation| between the alpha_{n,k} across k."""
    data = np.array([b.alpha[n - 1] for b in blocks])
    if data.shape[1] < 2:
        return 0.0
    corr = np.corrcoef(data, rowvar=False)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    return float(np.max(np.abs(off)))


def legall_band_share(blocks: Sequence[LegallBlocks]) -> Tuple[float, float]:
    """Ratio of means sum R_N / sum Y over paths, with its delta-method standard error.

    In expectation the band keeps 2^(-N kappa) of the self integral.
    """
    band = np.array([b.residual_band for b in blocks])
    total = np.array([b.total for b in blocks])
    ratio = float(band.mean() / total.mean())
    if band.size < 2:
        return ratio, math.nan
    spread = np.std(band - ratio * total, ddof=1)
    return ratio, float(spread / (math.sqrt(band.size) * total.mean()))


# ---------------------------------------------------------
# [로직 4] 정칙화된 방정식
# ---------------------------------------------------------
def regularized_sheet_nodes(
    spec: HurstSpec, t: float, x: Sequence[float], eps: float, delta: float, *, reach: float = 4.0, max_space: int = 401
) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Sheet grid for the regularized solver: dt <= delta/4 on [0,t], dy <= sqrt(eps)/2 around x."""
    n_t = max(8, math.ceil(4.0 * t / delta))
    time_nodes = np.linspace(0.0, t, n_t + 1)
    half = reach * math.sqrt(t) + 5.0 * math.sqrt(eps) + 1e-9
    cap = max_space if spec.d == 1 else max(9, int(round(max_space ** (1.0 / spec.d))))
    space = []
    for xi in np.broadcast_to(np.asarray(x, dtype=float), (spec.d,)):
        n_s = min(cap, max(16, math.ceil(2.0 * half / (0.5 * math.sqrt(eps)))))
        space.append(np.linspace(xi - half, xi + half, n_s + 1))
    return time_nodes, space


def _table_grids(field: SmoothedNoiseField, max_points: int) -> List[np.ndarray]:
    lo, hi = field.valid_box()
    if np.any(hi <= lo):
        raise TruncationDomainError("sheet hull is narrower than the kernel padding", operation="solve_regularized")
    per_dim = max_points if len(lo) == 1 else max(9, int(round(max_points ** (1.0 / len(lo)))))
    grids = []
    for a, b in zip(lo, hi):
        n = min(per_dim, max(17, math.ceil((b - a) / (0.25 * math.sqrt(field.eps))) + 1))
        grids.append(np.linspace(a, b, n))
    return grids


@dataclass
class _PotentialInterpolator:
    grids: List[np.ndarray]
    interp: RegularGridInterpolator
    lo: np.ndarray = field(init=False)
    hi: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.lo = np.array([g[0] for g in self.grids])
        self.hi = np.array([g[-1] for g in self.grids])

    def __call__(self, pts: np.ndarray) -> Tuple[np.ndarray, bool]:
        """Values at pts (m, d) for every table time: shape (m, n_times); flag set when points were clipped."""
        clipped = np.clip(pts, self.lo, self.hi)
        return self.interp(clipped), bool(np.any(clipped != pts))


def _interpolator(field: SmoothedNoiseField, times: np.ndarray, max_points: int) -> _PotentialInterpolator:
    grids = _table_grids(field, max_points)
    table = potential_table(field, times, grids)
    return _PotentialInterpolator(grids, RegularGridInterpolator(tuple(grids), np.moveaxis(table, 0, -1), method="linear"))


def solve_regularized(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    eps: float,
    delta: float,
    sheet: SheetSample,
    mc: int,
    *,
    stream: RngStream,
    n_steps: int = 64,
    breach_budget: float = 0.05,
    max_points: int = 2049,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
) -> EstimatorResult:
    """u^{eps,delta}(t,x) = E^B[f(B^x_t) exp(int_0^t W^{eps,delta}(t-s, B^x_s) ds)] for one fixed sheet.

    The time integral uses the midpoint rule; the potential is tabulated
    at the half-integer times t - (k+1/2)h and interpolated linearly in space.
    """
    require_admissible(spec, operation="solve_regularized")
    field_ = SmoothedNoiseField(sheet, eps, delta)
    h = t / n_steps
    grid = TimeGrid.uniform(t, 2 * n_steps)
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))
    quiet = not np.any(sheet.values)
    potential = None if quiet else _interpolator(field_, t - (np.arange(n_steps) + 0.5) * h, max_points)

    def one(rs: RngStream) -> np.ndarray:
        path = sample_bm(grid, spec.d, start, rs)
        weight = float(f(path.values[:, -1]))
        if potential is None:
            return np.array([weight, 0.0, 0.0])
        mids = path.values[:, 1::2].T
        vals, breached = potential(mids)
        exponent = h * math.fsum(vals[np.arange(n_steps), np.arange(n_steps)])
        capped, clipped = clip_exponent(exponent, exp_cap)
        return np.array([weight * math.exp(float(capped)), float(clipped), float(breached)])

    base = stream.sub("regularized")
    samples = run_replicates(one, mc, base, workers=workers)
    breaches = int(np.sum(samples[:, 2]))
    if breaches:
        handle_log(logger, f"solve_regularized: {breaches} of {mc} paths left the sheet hull and were clipped", "WARNING")
    if breaches > breach_budget * mc:
        raise TruncationDomainError(f"{breaches} of {mc} paths breached the sheet hull", operation="solve_regularized")
    meta = {"eps": eps, "delta": delta, "n_steps": n_steps, "breach_count": breaches}
    return _finish(samples[:, :2], base, meta, "solve_regularized")


def regularized_second_moment(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    eps: float,
    delta: float,
    n_sheets: int,
    mc: int,
    *,
    stream: RngStream,
    n_steps: int = 64,
    workers: Optional[int] = None,
) -> EstimatorResult:
    """E_{W,B}[(u^{eps,delta})^2]: per sheet the product of two independent path batches."""
    time_nodes, space_nodes = regularized_sheet_nodes(spec, t, x, eps, delta)

    def one(rs: RngStream) -> np.ndarray:
        sheet = sample_sheet(spec, time_nodes, space_nodes, rs.sub("sheet"))
        halves = [
            solve_regularized(spec, f, t, x, eps, delta, sheet, mc, stream=rs.child(j), n_steps=n_steps, workers=1)
            for j in range(2)
        ]
        clips = halves[0].clip_count + halves[1].clip_count
        return np.array([halves[0].value * halves[1].value, float(clips > 0)])

    base = stream.sub("regularized_m2")
    samples = run_replicates(one, n_sheets, base, workers=workers)
    meta = {"eps": eps, "delta": delta, "paths_per_half": mc}
    return _finish(samples, base, meta, "regularized_second_moment")


def mollified_moment_p(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    p: int,
    eps: float,
    delta: float,
    mc: int,
    *,
    stream: RngStream,
    kind: MomentKind = MomentKind.STRATONOVICH,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
) -> EstimatorResult:
    """E_{W,B}[(u^{eps,delta})^p] with W integrated out: exp of half the conditional covariance sum."""
    require_admissible(spec, operation="mollified_moment_p")
    kind = MomentKind(kind)
    grid = TimeGrid.uniform(t, grid_n)
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))

    def one(rs: RngStream) -> np.ndarray:
        paths = [sample_bm(grid, spec.d, start, rs.child(j)) for j in range(p)]
        weight = math.prod(float(f(path.values[:, -1])) for path in paths)
        total = 0.0
        for j in range(p):
            if kind is MomentKind.STRATONOVICH:
                total += 0.5 * mollified_inner(paths[j], paths[j], spec, t, eps, delta)
            for k in range(j + 1, p):
                total += mollified_inner(paths[j], paths[k], spec, t, eps, delta)
        capped, clipped = clip_exponent(total, exp_cap)
        return np.array([weight * math.exp(float(capped)), float(clipped)])

    base = stream.sub("mollified_moment")
    samples = run_replicates(one, mc, base, workers=workers)
    return _finish(samples, base, {"eps": eps, "delta": delta, "p": p, "kind": kind.value}, "mollified_moment_p")


@dataclass
class LadderRung:
    delta: float
    eps: float
    estimate: EstimatorResult
    oracle: EstimatorResult


def convergence_ladder(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    deltas: Sequence[float],
    n_sheets: int,
    mc: int,
    *,
    stream: RngStream,
    oracle_mc: Optional[int] = None,
    workers: Optional[int] = None,
) -> List[LadderRung]:
    """E[(u^{eps,delta})^2] with eps = delta^2 over a geometric delta ladder, each rung with its sheet-free oracle."""
    rungs = []
    for i, delta in enumerate(deltas):
        eps = delta ** 2
        est = regularized_second_moment(spec, f, t, x, eps, delta, n_sheets, mc, stream=stream.child(i), workers=workers)
        oracle = mollified_moment_p(spec, f, t, x, 2, eps, delta, oracle_mc or 4 * n_sheets, stream=stream.child(i), workers=workers)
        rungs.append(LadderRung(delta, eps, est, oracle))
    return rungs


# ---------------------------------------------------------
# [로직 5] 약형식 잔차
# ---------------------------------------------------------
def weak_form_residual(
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    eps: float,
    delta: float,
    sheet: SheetSample,
    test_fn: TestFunction,
    mc: int,
    *,
    stream: RngStream,
    n_space: int = 64,
    n_time: int = 128,
    max_points: int = 2049,
    workers: Optional[int] = None,
) -> EstimatorResult:
    """int u(t)phi - int f phi - 1/2 int int u Lap(phi) - int int u phi W^{eps,delta}, one path per replicate.

    The path is shared by all (s, x) of the space-time grid, so the
    per-replicate residual is the residual of a single Feynman-Kac sample.
    """
    require_admissible(spec, operation="weak_form_residual")
    lo, hi = test_fn.support()
    hull_lo = np.array([n[0] for n in sheet.space_nodes])
    hull_hi = np.array([n[-1] for n in sheet.space_nodes])
    if np.any(lo < hull_lo) or np.any(hi > hull_hi):
        raise DomainError("test function support exceeds the sheet hull", operation="weak_form_residual")
    if t > sheet.time_nodes[-1]:
        raise DomainError("time beyond the sheet horizon", operation="weak_form_residual")

    axes = [np.linspace(a, b, n_space + 1) for a, b in zip(lo, hi)]
    mids = [0.5 * (ax[:-1] + ax[1:]) for ax in axes]
    cell = math.prod(float(ax[1] - ax[0]) for ax in axes)
    pts = np.stack([m.ravel() for m in np.meshgrid(*mids, indexing="ij")], axis=-1)
    phi = test_fn(pts) * cell
    lap = test_fn.laplacian(pts) * cell
    f_phi = math.fsum(f(pts) * phi)

    h = t / n_time
    s_nodes = np.linspace(0.0, t, n_time + 1)
    w_time = np.full(n_time + 1, h)
    w_time[[0, -1]] = 0.5 * h
    grid = TimeGrid.uniform(t, 2 * n_time)
    quiet = not np.any(sheet.values)
    if quiet:
        potential = None
        noise_on_grid = np.zeros((n_time + 1, pts.shape[0]))
    else:
        field_ = SmoothedNoiseField(sheet, eps, delta)
        potential = _interpolator(field_, (np.arange(n_time) + 0.5) * h, max_points)
        table = potential_table(field_, s_nodes, mids)
        noise_on_grid = table.reshape(n_time + 1, -1)

    def one(rs: RngStream) -> np.ndarray:
        path = sample_bm(grid, spec.d, np.zeros(spec.d), rs)
        at_nodes = path.values[:, 0::2].T
        exponent = np.zeros((n_time + 1, pts.shape[0]))
        breached = False
        if potential is not None:
            # E[j] holds W(tau_i, x_m + B_{r_j}) for every half-integer time tau_i
            mid_pos = path.values[:, 1::2].T
            for j in range(n_time):
                vals, hit = potential(pts + mid_pos[j])
                breached |= hit
                # contributes W((k-j-1/2)h, x + B_{r_j}) to every s_k with k > j
                exponent[j + 1:] += h * vals[:, : n_time - j].T
        u = np.empty((n_time + 1, pts.shape[0]))
        for k in range(n_time + 1):
            u[k] = f(pts + at_nodes[k]) * np.exp(exponent[k])
        term_t = math.fsum(u[-1] * phi)
        term_lap = 0.5 * math.fsum((w_time[:, None] * u * lap).ravel())
        term_noise = math.fsum((w_time[:, None] * u * noise_on_grid * phi).ravel())
        return np.array([term_t - f_phi - term_lap - term_noise, 0.0, float(breached)])

    base = stream.sub("weak_form")
    samples = run_replicates(one, mc, base, workers=workers)
    breaches = int(np.sum(samples[:, 2]))
    if breaches:
        handle_log(logger, f"weak_form_residual: {breaches} of {mc} paths clipped at the sheet hull", "WARNING")
    meta = {"n_space": n_space, "n_time": n_time, "breach_count": breaches, "eps": eps, "delta": delta}
    return _finish(samples[:, :2], base, meta, "weak_form_residual")
