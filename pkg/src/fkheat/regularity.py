"""Hölder-exponent studies on the squared-increment proxy E^B C(s,t,x,y).

Space lags move one coordinate of y away from x at a fixed time; time
lags move s below t at a fixed point. Targets are 2 kappa (space) and
kappa (time).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import DomainError, StudyAbortedError
from .kernels_quadrature import cross_variance_C, cross_variance_expectation
from .log import handle_log
from .model import EstimatorResult, HurstSpec, Regime, require_admissible
from .rng import RngStream
from .special_d1 import cross_variance_d1, d1_spec

logger = logging.getLogger(__name__)

MIN_LAGS = 4
MIN_SPAN = 10.0
MONOTONE_SIGMAS = 2.0

# (below, above) the target slope
SPACE_WINDOW = (0.2, 0.3)
TIME_WINDOW = (0.15, 0.3)
D1_TOL = 0.1


class Axis(str, Enum):
    SPACE = "space"
    TIME = "time"


# ---------------------------------------------------------
# [로직 1] 로그-로그 회귀
# ---------------------------------------------------------
@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    slope_stderr: float
    ci: Tuple[float, float]
    n_points: int
    weighted: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
            "ci": list(self.ci),
            "n_points": self.n_points,
            "weighted": self.weighted,
        }


def local_slopes(lags: Sequence[float], values: Sequence[float]) -> np.ndarray:
    """Point-to-point d log(value) / d log(lag); central average inside, one-sided at the ends."""
    lx = np.log10(np.asarray(lags, dtype=float))
    ly = np.log10(np.asarray(values, dtype=float))
    step = np.diff(ly) / np.diff(lx)
    out = np.empty(lx.size)
    out[1:-1] = 0.5 * (step[1:] + step[:-1])
    out[0] = step[0]
    out[-1] = step[-1]
    return out


def fit_power_law(
    lags: Sequence[float],
    values: Sequence[float],
    errors: Optional[Sequence[float]] = None,
    *,
    level: float = 0.95,
) -> PowerLawFit:
    """Fit values ~ C lags^slope by least squares on log10 of both.

    With positive standard errors the points are weighted by
    1/sd(log10 value) = value ln(10) / error. The slope CI uses Student t
    with n - 2 degrees of freedom and needs at least 4 points.
    """
    x = np.asarray(lags, dtype=float)
    y = np.asarray(values, dtype=float)
    if x.size != y.size or x.size < 2:
        raise DomainError("need at least two (lag, value) pairs", operation="fit_power_law")
    if np.any(x <= 0.0) or np.any(y <= 0.0):
        raise DomainError("power-law fit needs positive lags and values", operation="fit_power_law")

    weights = None
    if errors is not None:
        err = np.asarray(errors, dtype=float)
        if np.all(err > 0.0):
            weights = y * math.log(10.0) / err

    lx, ly = np.log10(x), np.log10(y)
    if x.size >= MIN_LAGS:
        coef, cov = np.polyfit(lx, ly, 1, w=weights, cov=True)
        stderr = float(math.sqrt(max(cov[0, 0], 0.0)))
        half = float(stats.t.ppf(0.5 + 0.5 * level, x.size - 2)) * stderr
    else:
        coef = np.polyfit(lx, ly, 1, w=weights)
        stderr, half = math.nan, math.nan
    slope = float(coef[0])
    return PowerLawFit(slope, float(coef[1]), stderr, (slope - half, slope + half), int(x.size), weights is not None)


# ---------------------------------------------------------
# [로직 2] 스케일링 연구
# ---------------------------------------------------------
@dataclass
class ScalingStudy:
    axis: Axis
    component: int
    lags: np.ndarray
    estimates: List[EstimatorResult]
    fit: PowerLawFit
    target: float
    window: Tuple[float, float]
    monotone: bool
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def in_window(self) -> bool:
        lo, hi = self.window
        return lo <= self.fit.slope <= hi

    @property
    def bound_consistent(self) -> bool:
        """The fitted slope does not undercut the target by more than the lower window tolerance."""
        return self.fit.slope >= self.window[0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "axis": self.axis.value,
            "component": self.component,
            "lags": [float(v) for v in self.lags],
            "estimates": [e.to_dict() for e in self.estimates],
            "fit": self.fit.to_dict(),
            "target": self.target,
            "window": list(self.window),
            "monotone": self.monotone,
            "in_window": self.in_window,
            "meta": dict(self.meta),
        }


def dyadic_lags(largest: float, count: int) -> np.ndarray:
    """largest * 2^-k for k = count-1, ..., 0 (increasing)."""
    if largest <= 0.0 or count < 1:
        raise DomainError("dyadic ladder needs a positive largest lag and count >= 1", operation="dyadic_lags")
    return largest * 2.0 ** -np.arange(count - 1, -1, -1, dtype=float)


def _positive_lags(lags: Sequence[float], operation: str) -> Tuple[np.ndarray, int]:
    arr = np.asarray(lags, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("lags must be nonnegative", operation=operation)
    dropped = int(np.count_nonzero(arr == 0.0))
    pos = np.unique(arr[arr > 0.0])
    if pos.size < MIN_LAGS:
        raise DomainError(f"need at least {MIN_LAGS} distinct positive lags, got {pos.size}", operation=operation)
    span = pos[-1] / pos[0]
    if span < MIN_SPAN:
        handle_log(logger, f"{operation}: lags span a factor {span:.3g} (< {MIN_SPAN:g}); the fitted slope is a local one", "WARNING")
    return pos, dropped


def _lag_points(axis: Axis, t: float, x: np.ndarray, lag: float, component: int) -> Tuple[float, float, np.ndarray, np.ndarray]:
    if axis is Axis.SPACE:
        y = x.copy()
        y[component] += lag
        return t, t, x, y
    return t - lag, t, x, x


def _monotone(estimates: Sequence[EstimatorResult]) -> bool:
    for a, b in zip(estimates, estimates[1:]):
        if b.value < a.value - MONOTONE_SIGMAS * math.hypot(a.std_error, b.std_error):
            return False
    return True


def _check_beta(spec: HurstSpec) -> None:
    beta = 2.0 * np.asarray(spec.h, dtype=float) + 1.0
    if np.any(beta <= 2.0):
        raise StudyAbortedError(f"increment bound needs 2*H_j + 1 > 2 for every j, got {beta.tolist()}", operation="exponent_study")


def _window(axis: Axis, kappa: float) -> Tuple[float, float, float]:
    if axis is Axis.SPACE:
        target, (below, above) = 2.0 * kappa, SPACE_WINDOW
    else:
        target, (below, above) = kappa, TIME_WINDOW
    return target, target - below, target + above


def _finish_study(
    axis: Axis,
    component: int,
    lags: np.ndarray,
    estimates: List[EstimatorResult],
    target: float,
    window: Tuple[float, float],
    meta: Dict[str, Any],
    operation: str,
) -> ScalingStudy:
    for lag, est in zip(lags, estimates):
        if not est.value > 0.0:
            raise StudyAbortedError(
                f"nonpositive increment estimate {est.value:.3g} +- {est.std_error:.2g} at lag {lag:.4g}; "
                "raise the replicate budget or move the lags away from zero",
                operation=operation,
            )
    values = [e.value for e in estimates]
    errors = [e.std_error for e in estimates]
    fit = fit_power_law(lags, values, errors)
    monotone = _monotone(estimates)
    if not monotone:
        handle_log(logger, f"{operation}: increment estimates are not nondecreasing in the lag (2 stderr)", "WARNING")
    meta = dict(meta, local_slopes=local_slopes(lags, values).tolist())
    study = ScalingStudy(axis, component, lags, estimates, fit, target, window, monotone, meta)
    verdict = "SUCCESS" if study.in_window else "WARNING"
    handle_log(
        logger,
        f"{operation}({axis.value}): slope {fit.slope:.4f} [{fit.ci[0]:.3f}, {fit.ci[1]:.3f}], target {target:.4f}, window [{window[0]:.3f}, {window[1]:.3f}]",
        verdict,
    )
    return study


def exponent_study(
    spec: HurstSpec,
    axis: Axis,
    base_point: Tuple[float, Sequence[float]],
    lags: Sequence[float],
    mc: int,
    *,
    stream: RngStream,
    method: str = "monte_carlo",
    component: int = 0,
    grid_n: int = 64,
    workers: Optional[int] = None,
) -> ScalingStudy:
    """Fit the lag exponent of E^B C along one axis at base_point = (t, x).

    Zero lags are dropped from the fit (C vanishes there). Lags run
    one after another; each lag is replicate-parallel on stream.child(i).
    """
    operation = "exponent_study"
    require_admissible(spec, Regime.REGULAR, operation=operation)
    _check_beta(spec)
    axis = Axis(axis)
    t, x = float(base_point[0]), np.broadcast_to(np.asarray(base_point[1], dtype=float), (spec.d,)).copy()
    if not 0 <= component < spec.d:
        raise DomainError(f"component must be in 0..{spec.d - 1}", operation=operation)
    pos, dropped = _positive_lags(lags, operation)
    if axis is Axis.TIME and pos[-1] > t:
        raise DomainError(f"time lags must not exceed t = {t:g}", operation=operation)

    estimates: List[EstimatorResult] = []
    for i, lag in enumerate(pos):
        s, tt, xa, ya = _lag_points(axis, t, x, float(lag), component)
        if method == "monte_carlo":
            est = cross_variance_C(s, tt, xa, ya, spec, mc, stream=stream.child(i), grid_n=grid_n, workers=workers)
        elif method == "expectation":
            value = cross_variance_expectation(s, tt, xa, ya, spec)
            est = EstimatorResult(value, 0.0, 0, stream.seed, {"exact": True})
        else:
            raise DomainError(f"unknown study method {method!r}", operation=operation)
        est.meta["lag"] = float(lag)
        estimates.append(est)

    target, lo, hi = _window(axis, spec.kappa)
    meta = {"method": method, "t": t, "x": x.tolist(), "dropped_zero_lags": dropped, "kappa": spec.kappa}
    return _finish_study(axis, component, pos, estimates, target, (lo, hi), meta, operation)


def d1_exponent_study(h0: float, axis: Axis, t: float, x: float, lags: Sequence[float]) -> ScalingStudy:
    """Deterministic slopes of cross_variance_d1; window is the target +- 0.1."""
    operation = "d1_exponent_study"
    spec = d1_spec(h0)
    axis = Axis(axis)
    pos, dropped = _positive_lags(lags, operation)
    if axis is Axis.TIME and pos[-1] > t:
        raise DomainError(f"time lags must not exceed t = {t:g}", operation=operation)
    estimates = []
    for lag in pos:
        s, tt, xa, ya = _lag_points(axis, t, np.array([float(x)]), float(lag), 0)
        value = cross_variance_d1(h0, s, tt, float(xa[0]), float(ya[0]))
        estimates.append(EstimatorResult(value, 0.0, 0, 0, {"exact": True, "lag": float(lag)}))
    target = 2.0 * spec.kappa if axis is Axis.SPACE else spec.kappa
    meta = {"method": "deterministic", "h0": h0, "t": t, "x": float(x), "dropped_zero_lags": dropped}
    return _finish_study(axis, 0, pos, estimates, target, (target - D1_TOL, target + D1_TOL), meta, operation)
