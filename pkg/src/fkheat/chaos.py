"""Wiener chaos kernels f_n of the Skorokhod solution, their norms, and
the Stratonovich coefficients h_n by pinned Brownian bridges.

Kernels are kept time-sorted. The 1/n! of f_n lives in eval_f_n only;
the n! of the norm lives in chaos_norm_sq only.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import DomainError
from .feynman_kac import stratonovich_mean
from .kernels_quadrature import heat_kernel, heat_semigroup, pair_cells, path_leg, singular_double_integral_S
from .log import handle_log
from .model import EstimatorResult, HurstSpec, InitialCondition, Regime, TimeGrid, require_admissible
from .montecarlo import DEFAULT_EXP_CAP, clip_exponent, run_replicates, summarize
from .paths_fields import sample_bm, sample_pinned_bm
from .rng import RngStream

logger = logging.getLogger(__name__)

MAX_NORM_ORDER = 3
MAX_PINNED_ORDER = 2
ESS_FLOOR = 0.05


def _points(points: Sequence, n: int, d: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(n, d)
    return pts


def eval_f_n(n: int, times: Sequence[float], points: Sequence, t: float, x: Sequence[float], f: InitialCondition) -> float:
    """f_n(s_1,y_1,...,s_n,y_n; t,x) with the pairs sorted by time, 1/n! included."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.size
    if n == 0:
        return float(heat_semigroup(f, t, x))
    s = np.asarray(times, dtype=float)
    if s.size != n or np.any(s <= 0.0) or np.any(s >= t):
        raise DomainError("chaos times must lie in (0, t)", operation="eval_f_n")
    order = np.argsort(s, kind="stable")
    s = s[order]
    y = _points(points, n, d)[order]
    if np.any(np.diff(s) == 0.0):
        raise DomainError("chaos times must be distinct", operation="eval_f_n")
    value = float(heat_kernel(t - s[-1], x - y[-1]))
    for k in range(n - 1):
        value *= float(heat_kernel(s[k + 1] - s[k], y[k + 1] - y[k]))
    value *= float(heat_semigroup(f, s[0], y[0]))
    return value / math.factorial(n)


# ---------------------------------------------------------
# 카오스 노름: 두 브라운 경로를 따라 적분 (backbone)
# ---------------------------------------------------------
@dataclass
class ChaosSeries:
    """n! ||f_n||^2 for n = 0..N from common samples, with the remainder of E[u^2]."""

    terms: List[EstimatorResult]
    tail: EstimatorResult

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum([term.value for term in self.terms])


def _backbone_samples(
    orders: int,
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    mc: int,
    stream: RngStream,
    grid_n: int,
    workers: Optional[int],
    exp_cap: float,
) -> np.ndarray:
    grid = TimeGrid.uniform(t, grid_n)
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))

    def one(rs: RngStream) -> np.ndarray:
        a = sample_bm(grid, spec.d, start, rs.child(0))
        b = sample_bm(grid, spec.d, start, rs.child(1))
        weight = float(f(a.values[:, -1])) * float(f(b.values[:, -1]))
        cross = spec.alpha_h * math.fsum(pair_cells(path_leg(a, t), path_leg(b, t), spec, same_path=False).ravel())
        terms = [weight * cross ** n / math.factorial(n) for n in range(orders + 1)]
        capped, clipped = clip_exponent(cross, exp_cap)
        tail = weight * math.exp(float(capped)) - math.fsum(terms)
        return np.array(terms + [tail, float(clipped)])

    return run_replicates(one, mc, stream, workers=workers)


def chaos_series(
    order_max: int,
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
) -> ChaosSeries:
    """E[f(B^1_t) f(B^2_t) (alpha_H S_12)^n] / n! for n <= order_max, S_12 the cross integral of two paths."""
    require_admissible(spec, Regime.REGULAR, operation="chaos_series")
    if not 0 <= order_max <= MAX_NORM_ORDER:
        raise DomainError(f"chaos order must be in 0..{MAX_NORM_ORDER}", operation="chaos_series")
    base = stream.sub("chaos_backbone")
    samples = _backbone_samples(order_max, spec, f, t, x, mc, base, grid_n, workers, exp_cap)
    meta = {"method": "backbone", "t": t, "grid_n": grid_n}
    terms = [summarize(samples[:, n], base, meta=dict(meta, n=n), operation="chaos_series") for n in range(order_max + 1)]
    clips = int(np.sum(samples[:, -1]))
    tail = summarize(samples[:, -2], base, meta=dict(meta, n="tail"), clip_count=clips, operation="chaos_series")
    return ChaosSeries(terms, tail)


def _direct_norm(
    n: int, spec: HurstSpec, f: InitialCondition, t: float, x: Sequence[float], mc: int, stream: RngStream, workers: Optional[int]
) -> EstimatorResult:
    """Importance sampling of the 2n(d+1)-dimensional integral.

    Proposal: n iid uniform times per copy and the points y_k = B^x_{t - s_k}
    of an independent Brownian path per copy, so the weight of one copy
    reduces to t^n p_{s_min} f(y at s_min) / n!.
    """
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))

    def copy(rs: RngStream):
        s = rs.generator().uniform(0.0, t, size=n)
        tau = np.sort(t - s)
        grid = TimeGrid.from_nodes(np.unique(np.concatenate([[0.0], tau])))
        path = sample_bm(grid, spec.d, start, rs.sub("chain"))
        y = np.array([path.at(v) for v in t - s])
        first = int(np.argmin(s))
        w = t ** n * float(heat_semigroup(f, s[first], y[first])) / math.factorial(n)
        return s, y, w

    def one(rs: RngStream) -> float:
        s1, y1, w1 = copy(rs.child(0))
        s2, y2, w2 = copy(rs.child(1))
        kernel = spec.alpha_h ** n * float(np.prod(np.abs(s1 - s2) ** spec.gamma0))
        kernel *= float(np.prod(np.abs(y1 - y2) ** spec.space_exponents[None, :]))
        return math.factorial(n) * w1 * w2 * kernel

    samples = run_replicates(one, mc, stream, workers=workers)
    ess = float(np.sum(samples) ** 2 / np.sum(samples ** 2)) if np.any(samples) else float(mc)
    low = ess < ESS_FLOOR * mc
    if low:
        handle_log(logger, f"chaos_norm_sq(n={n}): effective sample size {ess:.0f} below {ESS_FLOOR:g} x {mc}", "WARNING")
    meta = {
        "method": "direct",
        "proposal": "uniform times on [0,t]^n x Brownian chain points",
        "ess": ess,
        "low_quality": low,
    }
    return summarize(samples, stream, meta=meta, operation="chaos_norm_sq")


def chaos_norm_sq(
    n: int,
    spec: HurstSpec,
    f: InitialCondition,
    t: float,
    x: Sequence[float],
    mc: int,
    *,
    stream: RngStream,
    method: str = "backbone",
    grid_n: int = 64,
    workers: Optional[int] = None,
) -> EstimatorResult:
    """n! ||f_n(., t, x)||^2 in H^{(x)n}."""
    require_admissible(spec, Regime.REGULAR, operation="chaos_norm_sq")
    if not 0 <= n <= MAX_NORM_ORDER:
        raise DomainError(f"chaos order must be in 0..{MAX_NORM_ORDER}", operation="chaos_norm_sq")
    if method == "backbone":
        return chaos_series(n, spec, f, t, x, mc, stream=stream, grid_n=grid_n, workers=workers).terms[n]
    if method == "direct":
        if n == 0:
            value = float(heat_semigroup(f, t, np.asarray(x, dtype=float))) ** 2
            return EstimatorResult(value, 0.0, mc, stream.seed, {"method": "direct", "exact": True})
        return _direct_norm(n, spec, f, t, x, mc, stream.sub(f"chaos_direct:{n}"), workers)
    raise DomainError(f"unknown chaos method {method!r}", operation="chaos_norm_sq")


# ---------------------------------------------------------
# Stratonovich 계수 h_n
# ---------------------------------------------------------
def eval_h_n_stratonovich(
    n: int,
    times: Sequence[float],
    points: Sequence,
    t: float,
    x: Sequence[float],
    f: InitialCondition,
    spec: HurstSpec,
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
    exp_cap: float = DEFAULT_EXP_CAP,
    exponential: bool = True,
) -> EstimatorResult:
    """h_n = E^B[f(B^x_t) prod delta(B^x_{t-s_i} - y_i) exp(alpha_H S(B;t) / 2)].

    The deltas become the Brownian chain density at the pins times an
    expectation over bridges pinned at B^x_{t-s_i} = y_i.
    """
    if n == 0:
        if not exponential:
            value = float(heat_semigroup(f, t, np.asarray(x, dtype=float)))
            return EstimatorResult(value, 0.0, mc, stream.seed, {"n": 0, "exact": True})
        return stratonovich_mean(spec, f, t, x, mc, stream=stream, grid_n=grid_n, workers=workers, exp_cap=exp_cap)
    require_admissible(spec, Regime.REGULAR, operation="eval_h_n_stratonovich")
    if not 1 <= n <= MAX_PINNED_ORDER:
        raise DomainError(f"pinned order must be in 1..{MAX_PINNED_ORDER}", operation="eval_h_n_stratonovich")
    start = np.broadcast_to(np.asarray(x, dtype=float), (spec.d,))
    s = np.asarray(times, dtype=float)
    if s.size != n or np.any(s <= 0.0) or np.any(s >= t):
        raise DomainError("chaos times must lie in (0, t)", operation="eval_h_n_stratonovich")
    y = _points(points, n, spec.d)
    tau = t - s
    order = np.argsort(tau, kind="stable")
    tau, y = tau[order], y[order]
    if np.any(np.diff(tau) == 0.0):
        raise DomainError("chaos times must be distinct", operation="eval_h_n_stratonovich")

    chain = float(heat_kernel(tau[0], y[0] - start))
    for k in range(n - 1):
        chain *= float(heat_kernel(tau[k + 1] - tau[k], y[k + 1] - y[k]))
    grid = TimeGrid.from_nodes(np.union1d(np.linspace(0.0, t, grid_n + 1), tau))
    pins = {float(v): y[k] for k, v in enumerate(tau)}

    def one(rs: RngStream) -> np.ndarray:
        path = sample_pinned_bm(grid, spec.d, start, pins, rs)
        weight = float(f(path.values[:, -1]))
        if not exponential:
            return np.array([chain * weight, 0.0])
        s_val = singular_double_integral_S(path, spec, t).value
        capped, clipped = clip_exponent(0.5 * spec.alpha_h * s_val, exp_cap)
        return np.array([chain * weight * math.exp(float(capped)), float(clipped)])

    base = stream.sub(f"h_n:{n}")
    samples = run_replicates(one, mc, base, workers=workers)
    meta = {"n": n, "chain_density": chain, "grid_n": grid.n}
    return summarize(samples[:, 0], base, meta=meta, clip_count=int(np.sum(samples[:, 1])), operation="eval_h_n_stratonovich")
