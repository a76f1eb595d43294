"""The d = 1, H1 = 1/2, H0 > 3/4 case.

The spatial weight is a delta on the path's self-intersections; every
quantity here mollifies it with the heat kernel p_eps.
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from .errors import DomainError, LadderError
from .kernels_quadrature import Leg, _quad_pieces, path_leg, time_weights
from .log import handle_log
from .model import EstimatorResult, HurstSpec, Regime, TimeGrid, require_admissible
from .montecarlo import run_replicates, summarize
from .paths_fields import BrownianPath, sample_bm
from .rng import RngStream

logger = logging.getLogger(__name__)

SQRT_2PI = math.sqrt(2.0 * math.pi)
STABILITY_TOL = 0.10


def d1_spec(h0: float) -> HurstSpec:
    spec = HurstSpec(1, h0, (0.5,), Regime.SPECIAL_D1)
    require_admissible(spec, Regime.SPECIAL_D1, operation="special_d1")
    return spec


def check_ladder(eps_ladder: Sequence[float]) -> Tuple[float, ...]:
    ladder = tuple(float(e) for e in eps_ladder)
    if len(ladder) < 2 or any(e <= 0.0 for e in ladder) or any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise LadderError(f"eps ladder must be positive and strictly decreasing, got {list(ladder)}", field="params.eps_ladder")
    return ladder


# ---------------------------------------------------------
# [로직 1] 평활화된 자기교차 국소시간
# ---------------------------------------------------------
@functools.lru_cache(maxsize=1024)
def _silt_closure(lag: int, h: float, eps: float, gamma0: float) -> float:
    """E of int over one cell at lag i - j of |r-s|^g0 p_eps(B_r - B_s)."""
    centre = lag * h

    def integrand(u: float) -> float:
        ell = h - abs(u - centre)
        if ell <= 0.0:
            return 0.0
        return ell * abs(u) ** gamma0 / (SQRT_2PI * math.sqrt(eps + abs(u)))

    cuts = {centre - h, centre, centre + h}
    if centre - h < 0.0 < centre + h:
        cuts.add(0.0)
    points = sorted(cuts)
    return _quad_pieces(integrand, points, "mollified_silt")


def silt_cells(leg: Leg, eps: float, gamma0: float = 0.0) -> np.ndarray:
    """Cell contributions to int int |r-s|^g0 p_eps(B_r - B_s) on a uniform leg.

    Off-diagonal cells average p_eps over the two main-diagonal corners;
    cells with |i - j| <= 1 take their expectation given the geometry.
    """
    if leg.h is None:
        raise DomainError("mollified SILT needs a uniform grid", operation="mollified_silt")
    weights = time_weights(leg, leg, gamma0)
    diff = leg.values[0][:, None] - leg.values[0][None, :]
    kern = np.exp(-diff ** 2 / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps)
    cells = weights * 0.5 * (kern[:-1, :-1] + kern[1:, 1:])
    n = cells.shape[0]
    for lag in (-1, 0, 1):
        idx = np.arange(max(0, lag), min(n, n + lag))
        cells[idx, idx - lag] = _silt_closure(lag, leg.h, eps, gamma0)
    return cells


def mollified_silt(path: BrownianPath, eps: float, t: float, gamma0: float = 0.0) -> float:
    """int_0^t int_0^t |r-s|^g0 p_eps(B_r - B_s) dr ds for one path (g0 = 0: the plain SILT)."""
    if not eps > 0.0:
        raise DomainError("eps must be positive", operation="mollified_silt")
    return math.fsum(silt_cells(path_leg(path, t), eps, gamma0).ravel())


@dataclass(frozen=True)
class SiltExpectation:
    discrete: float
    continuum: float


def silt_discrete_expectation(t: float, eps: float, n: int, gamma0: float = 0.0) -> float:
    """Exact E^B of mollified_silt on the uniform n-cell grid."""
    h = t / n
    leg = Leg(np.linspace(0.0, t, n + 1), np.zeros((1, n + 1)), h)
    lag_w = time_weights(leg, leg, gamma0)[:, 0]
    terms = []
    for k in range(n):
        count = (n - k) * (1 if k == 0 else 2)
        if k <= 1:
            value = _silt_closure(k, h, eps, gamma0)
        else:
            value = lag_w[k] / (SQRT_2PI * math.sqrt(eps + k * h))
        terms.append(count * value)
    return math.fsum(terms)


def silt_continuum_expectation(t: float, eps: float, gamma0: float = 0.0) -> float:
    """2 int_0^t (t-u) u^g0 (2 pi (eps+u))^(-1/2) du."""
    val, _ = integrate.quad(lambda u: 1.0 / (SQRT_2PI * math.sqrt(eps + u)), 0.0, t, weight="alg", wvar=(gamma0, 1.0))
    return 2.0 * val


def silt_expectation(h0: float, t: float, eps: float, n: int) -> SiltExpectation:
    gamma0 = d1_spec(h0).gamma0
    return SiltExpectation(silt_discrete_expectation(t, eps, n, gamma0), silt_continuum_expectation(t, eps, gamma0))


def silt_limit(h0: float, t: float) -> float:
    """(2 pi)^(-1/2) 2 t^(2H0-1/2) / ((2H0-3/2)(2H0-1/2)), the eps -> 0 limit without alpha_H0."""
    return 2.0 * t ** (2.0 * h0 - 0.5) / (SQRT_2PI * (2.0 * h0 - 1.5) * (2.0 * h0 - 0.5))


def silt_limit_by_quadrature(h0: float, t: float) -> float:
    """The same limit from int int |s-r|^(2H0-5/2), reduced to the lag and integrated with an algebraic weight."""
    val, _ = integrate.quad(lambda u: 1.0, 0.0, t, weight="alg", wvar=(2.0 * h0 - 2.5, 1.0))
    return 2.0 * val / SQRT_2PI


# ---------------------------------------------------------
# [로직 2] 분산 추정
# ---------------------------------------------------------
@dataclass
class SiltResult:
    eps_ladder: Tuple[float, ...]
    rung_means: List[float]
    rung_stderr: List[float]
    rung_expectations: List[float]
    estimate: EstimatorResult
    meta: Dict[str, float] = field(default_factory=dict)


def _silt_samples(
    eps_ladder: Tuple[float, ...], t: float, gamma0: float, mc: int, stream: RngStream, grid_n: int, workers: Optional[int]
) -> np.ndarray:
    grid = TimeGrid.uniform(t, grid_n)

    def one(rs: RngStream) -> np.ndarray:
        leg = path_leg(sample_bm(grid, 1, 0.0, rs), t)
        return np.array([math.fsum(silt_cells(leg, eps, gamma0).ravel()) for eps in eps_ladder])

    return run_replicates(one, mc, stream, workers=workers)


def variance_v_d1(
    h0: float,
    t: float,
    mc: int,
    eps_ladder: Sequence[float],
    *,
    stream: RngStream,
    grid_n: int = 256,
    workers: Optional[int] = None,
) -> SiltResult:
    """E^B Var^W(V_{t,x}) = alpha_H0 E int int |r-s|^(2H0-2) delta(B_r - B_s) dr ds.

    The reported value is alpha_H0 (c_0 + mean(X_eps - E X_eps)) at the
    finest rung, X_eps the mollified integral and E X_eps its exact
    discrete expectation; a Richardson value is kept in meta.
    """
    spec = d1_spec(h0)
    ladder = check_ladder(eps_ladder)
    gamma0 = spec.gamma0
    alpha = spec.alpha_h0
    base = stream.sub("variance_v_d1")
    samples = _silt_samples(ladder, t, gamma0, mc, base, grid_n, workers)
    means = [float(np.mean(samples[:, j])) for j in range(len(ladder))]
    errs = [float(np.std(samples[:, j], ddof=1) / math.sqrt(mc)) if mc > 1 else 0.0 for j in range(len(ladder))]
    exact = [silt_discrete_expectation(t, eps, grid_n, gamma0) for eps in ladder]
    limit = silt_limit(h0, t)

    corrected = alpha * (limit + samples[:, -1] - exact[-1])
    order = 2.0 * h0 - 1.5
    cont = [silt_continuum_expectation(t, eps, gamma0) for eps in ladder[-2:]]
    ratio = (ladder[-1] / ladder[-2]) ** order
    richardson = alpha * (means[-1] - ratio * means[-2]) / (1.0 - ratio)
    measured = math.log((cont[0] - limit) / (cont[1] - limit)) / math.log(ladder[-2] / ladder[-1])
    meta = {
        "target": alpha * limit,
        "richardson": richardson,
        "assumed_order": order,
        "measured_order": measured,
        "eps_finest": ladder[-1],
        "grid_n": grid_n,
    }
    estimate = summarize(corrected, base, meta=meta, operation="variance_v_d1")
    handle_log(logger, f"variance_v_d1: {estimate.value:.6g} +- {estimate.std_error:.2g} (closed form {alpha * limit:.6g})", "INFO")
    return SiltResult(ladder, [alpha * m for m in means], [alpha * e for e in errs], [alpha * e for e in exact], estimate, meta)


# ---------------------------------------------------------
# [로직 3] 결정론적 교차분산
# ---------------------------------------------------------
def _t_integral(s: float, t: float, offset: float, z: float, gamma0: float) -> float:
    """int_0^s da int_0^t db |a - b + offset|^g0 p_{|a-b|}(z)."""
    lo, hi = -t, s

    def integrand(u: float) -> float:
        ell = max(0.0, min(s, t + u) - max(0.0, u))
        if ell == 0.0 or u == 0.0:
            return 0.0
        au = abs(u)
        return ell * abs(u + offset) ** gamma0 * math.exp(-z * z / (2.0 * au)) / (SQRT_2PI * math.sqrt(au))

    cuts = {lo, hi, 0.0, -offset, s - t}
    return _quad_pieces(integrand, sorted(c for c in cuts if lo <= c <= hi), "cross_variance_d1")


def _space_gap_integral(t: float, z: float, gamma0: float) -> float:
    """2 int_0^t (t-u) u^(g0-1/2) (1 - exp(-z^2/2u)) / sqrt(2 pi) du."""

    def integrand(u: float) -> float:
        return -math.expm1(-z * z / (2.0 * u)) / SQRT_2PI if u > 0.0 else 1.0 / SQRT_2PI

    val, _ = integrate.quad(integrand, 0.0, t, weight="alg", wvar=(gamma0 - 0.5, 1.0), limit=200)
    return 2.0 * val


def cross_variance_d1(h0: float, s: float, t: float, x: float, y: float) -> float:
    """E^B E^W |V_{t,y} - V_{s,x}|^2 in the d = 1, H1 = 1/2 case (deterministic)."""
    spec = d1_spec(h0)
    if not 0.0 <= s <= t:
        raise DomainError("need 0 <= s <= t", operation="cross_variance_d1")
    z = float(x) - float(y)
    alpha, g0 = spec.alpha_h0, spec.gamma0
    if s == t:
        return 0.0 if z == 0.0 else 2.0 * alpha * _space_gap_integral(t, z, g0)
    self_terms = silt_limit(h0, s) + silt_limit(h0, t)
    return alpha * (self_terms - 2.0 * _t_integral(s, t, t - s, z, g0))


# ---------------------------------------------------------
# [로직 4] 음의 모멘트와 블록 스케일링
# ---------------------------------------------------------
def negative_moment_L(
    t: float,
    p: float,
    mc: int,
    eps_ladder: Sequence[float],
    *,
    stream: RngStream,
    grid_n: int = 256,
    workers: Optional[int] = None,
) -> EstimatorResult:
    """E[L^-p] for the self-intersection local time L on [0,t]^2, by mollification.

    Stability across the last two rungs and the Jensen bound
    E[L^-p] >= (E L)^-p are reported in meta; neither raises.
    """
    ladder = check_ladder(eps_ladder)
    if not 0.0 <= p <= 0.1:
        raise DomainError("p must lie in [0, 0.1]", operation="negative_moment_L")
    base = stream.sub("negative_moment_L")
    if p == 0.0:
        return EstimatorResult(1.0, 0.0, mc, stream.seed, {"eps_ladder": list(ladder), "stable": True, "jensen_ok": True})
    samples = _silt_samples(ladder, t, 0.0, mc, base, grid_n, workers)
    powered = samples ** (-p)
    rungs = [float(np.mean(powered[:, j])) for j in range(len(ladder))]
    change = abs(rungs[-1] - rungs[-2]) / abs(rungs[-2])
    stable = change < STABILITY_TOL
    jensen_floor = float(np.mean(samples[:, -1])) ** (-p)
    if not stable:
        handle_log(logger, f"negative_moment_L: rung change {change:.1%} exceeds {STABILITY_TOL:.0%}; inconclusive", "WARNING")
    meta = {
        "eps_ladder": list(ladder),
        "rungs": rungs,
        "rung_change": change,
        "stable": stable,
        "jensen_floor": jensen_floor,
        "jensen_ok": rungs[-1] >= jensen_floor,
    }
    return summarize(powered[:, -1], base, meta=meta, operation="negative_moment_L")


def silt_block_scaling(
    levels: Sequence[int], eps0: float, mc: int, *, stream: RngStream, cells: int = 64, workers: Optional[int] = None
) -> List[Tuple[int, EstimatorResult, float]]:
    """2^(3n/2) E alpha_{n,1}, alpha_{n,1} the plain SILT over [0,2^-n] x [2^-n,2^(1-n)] at eps_n = eps0 2^-n.

    Brownian scaling makes every level share one expectation; each entry
    carries the exact discrete expectation of its own quadrature.
    """
    out = []
    for n in levels:
        span = 2.0 ** (1 - n)
        eps = eps0 * 2.0 ** (-n)
        scale = 2.0 ** (1.5 * n)
        grid = TimeGrid.uniform(span, 2 * cells)

        def one(rs: RngStream, grid=grid, eps=eps, span=span, scale=scale) -> float:
            leg = path_leg(sample_bm(grid, 1, 0.0, rs), span)
            return scale * math.fsum(silt_cells(leg, eps)[:cells, cells:].ravel())

        base = stream.sub(f"silt_block:{n}")
        est = summarize(run_replicates(one, mc, base, workers=workers), base, meta={"n": n, "eps": eps}, operation="silt_block_scaling")
        out.append((n, est, scale * _block_expectation(span, eps, cells)))
    return out


def _block_expectation(span: float, eps: float, cells: int) -> float:
    h = span / (2 * cells)
    leg = Leg(np.linspace(0.0, span, 2 * cells + 1), np.zeros((1, 2 * cells + 1)), h)
    lag_w = time_weights(leg, leg, 0.0)
    total = []
    for i in range(cells):
        for j in range(cells, 2 * cells):
            k = j - i
            if k <= 1:
                total.append(_silt_closure(i - j, h, eps, 0.0))
            else:
                total.append(lag_w[i, j] / (SQRT_2PI * math.sqrt(eps + k * h)))
    return math.fsum(total)
