"""Deterministic kernels and the singular quadrature engines.

Covers the fractional covariance R_H, the heat kernel and semigroup,
Gaussian absolute moments, exact power-law cell integrals, the
H-inner product of factorizable kernels, the path-dependent singular
double integral S and the cross-variance C(s,t,x,y).
"""
from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate
from scipy.special import gamma as gamma_fn
from scipy.special import hyp1f1, ndtr

from .errors import DegeneratePathError, DomainError, QuadratureError, UnsupportedKernelError
from .model import EstimatorResult, HurstSpec, Regime, require_admissible
from .montecarlo import run_replicates, summarize
from .rng import RngStream

if TYPE_CHECKING:
    from .paths_fields import BrownianPath

logger = logging.getLogger(__name__)

# |c| = |gamma + 1| below this switches the antiderivative to its expm1 form
_NEAR_MINUS_ONE = 1e-6
# |z|/sigma above this uses the large-argument expansion of E|z + sigma xi|^p
_ASYMPTOTIC_RATIO = 10.0


# ---------------------------------------------------------
# 공분산, 열핵
# ---------------------------------------------------------
def rh_cov(h: float, s: Any, t: Any) -> np.ndarray:
    """R_H(s,t) = (|t|^2H + |s|^2H - |t-s|^2H) / 2, two-sided."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    e = 2.0 * h
    return 0.5 * (np.abs(t) ** e + np.abs(s) ** e - np.abs(t - s) ** e)


def heat_kernel(eps: float, x: Any) -> np.ndarray:
    """p_eps(x) = (2 pi eps)^(-d/2) exp(-|x|^2 / 2 eps); x has shape (..., d)."""
    if not eps > 0.0:
        raise DomainError("heat kernel width must be positive", operation="heat_kernel")
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1)
    d = pts.shape[-1]
    return (2.0 * math.pi * eps) ** (-d / 2.0) * np.exp(-np.sum(pts ** 2, axis=-1) / (2.0 * eps))


def gauss_hermite_expectation(fn: Callable[[np.ndarray], np.ndarray], mean: Sequence[float], var: float, order: int = 40) -> float:
    """E fn(mean + sqrt(var) Z), Z standard normal in d = len(mean) dimensions."""
    nodes, weights = hermegauss(order)
    d = len(mean)
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1) * math.sqrt(var) + np.asarray(mean, dtype=float)
    w = np.ones(pts.shape[0])
    for wg in np.meshgrid(*([weights] * d), indexing="ij"):
        w = w * wg.ravel()
    return float(np.sum(w * fn(pts)) / (2.0 * math.pi) ** (d / 2.0))


def heat_semigroup(f: Any, t: float, x: Any, order: int = 40) -> np.ndarray:
    """p_t f(x): closed form for the built-in initial conditions, Gauss-Hermite otherwise."""
    if t < 0.0:
        raise DomainError("semigroup time must be nonnegative", operation="heat_semigroup")
    if hasattr(f, "semigroup"):
        return f.semigroup(t, x)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0.0:
        return np.asarray(f(pts))
    return np.array([gauss_hermite_expectation(f, p, t, order) for p in pts])


# ---------------------------------------------------------
# 가우시안 절대 모멘트
# ---------------------------------------------------------
def abs_moment(p: float) -> float:
    """E|xi|^p = 2^(p/2) Gamma((p+1)/2) / sqrt(pi), p > -1."""
    if not p > -1.0:
        raise DomainError("E|xi|^p diverges for p <= -1", operation="abs_moment")
    return 2.0 ** (p / 2.0) * float(gamma_fn((p + 1.0) / 2.0)) / math.sqrt(math.pi)


def noncentral_abs_moment(p: float, z: Any, sigma: Any) -> np.ndarray:
    """E|z + sigma xi|^p for xi standard normal, vectorized in (z, sigma)."""
    z, sigma = np.broadcast_arrays(np.abs(np.asarray(z, dtype=float)), np.asarray(sigma, dtype=float))
    out = np.empty(z.shape, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(sigma > 0.0, z / np.where(sigma > 0.0, sigma, 1.0), np.inf)
        point = sigma == 0.0
        out[point] = z[point] ** p
        far = ~point & (ratio > _ASYMPTOTIC_RATIO)
        if np.any(far):
            a, b = -p / 2.0, 0.5
            x = 0.5 * ratio[far] ** 2
            series = 1.0 + a * (a - b + 1.0) / x + a * (a + 1.0) * (a - b + 1.0) * (a - b + 2.0) / (2.0 * x ** 2)
            out[far] = z[far] ** p * series
        near = ~point & ~far
        if np.any(near):
            scale = sigma[near] ** p * abs_moment(p)
            centered = z[near] == 0.0
            vals = scale * hyp1f1(-p / 2.0, 0.5, -0.5 * ratio[near] ** 2)
            out[near] = np.where(centered, scale, vals)
    return out


def closure_constant(spec: HurstSpec) -> float:
    """Prod_i E|xi|^(2H_i - 2)."""
    return math.prod(abs_moment(p) for p in spec.space_exponents)


def expected_S(spec: HurstSpec, t: float) -> float:
    """E^B S(B;t) = 2 prod E|xi|^(2H_i-2) t^(kappa+1) / (kappa (kappa+1))."""
    k = spec.kappa
    return 2.0 * closure_constant(spec) * t ** (k + 1.0) / (k * (k + 1.0))


def sigma_t(spec: HurstSpec, t: float) -> float:
    """Limit of the second moment of the mollified functional."""
    return spec.alpha_h * expected_S(spec, t)


# ---------------------------------------------------------
# 멱법칙 셀 적분 (닫힌 형태)
# ---------------------------------------------------------
def _phi1(c: float, log_x: np.ndarray) -> np.ndarray:
    if c == 0.0:
        return log_x
    return np.expm1(c * log_x) / c


def _signed_antiderivative_sum(xs: Sequence[np.ndarray], signs: Sequence[float], gamma: float) -> np.ndarray:
    """sum_k sign_k |x_k|^(gamma+2) / ((gamma+1)(gamma+2))."""
    c = gamma + 1.0
    g2 = gamma + 2.0
    if abs(c) >= _NEAR_MINUS_ONE:
        return sum(sg * np.abs(x) ** g2 for x, sg in zip(xs, signs)) / (c * g2)
    total = 0.0
    linear = 0.0
    for x, sg in zip(xs, signs):
        ax = np.abs(np.asarray(x, dtype=float))
        with np.errstate(divide="ignore"):
            logs = np.where(ax > 0.0, np.log(np.where(ax > 0.0, ax, 1.0)), 0.0)
        total = total + sg * ax * _phi1(c, logs) / g2
        linear = linear + sg * ax
    linear = np.asarray(linear, dtype=float)
    if c == 0.0:
        return np.where(np.abs(linear) > 1e-12, np.inf, total)
    return total + linear / (c * g2)


def power_box_integral(a1: Any, b1: Any, a2: Any, b2: Any, gamma: float, offset: Any = 0.0) -> np.ndarray:
    """Exact int_{a1}^{b1} int_{a2}^{b2} |u - v + offset|^gamma dv du, gamma > -1."""
    a1, b1, a2, b2, off = (np.asarray(v, dtype=float) for v in (a1, b1, a2, b2, offset))
    return _signed_antiderivative_sum(
        [b1 - a2 + off, a1 - b2 + off, b1 - b2 + off, a1 - a2 + off], [1.0, 1.0, -1.0, -1.0], gamma
    )


def sum_box_integral(a1: Any, b1: Any, a2: Any, b2: Any, gamma: float) -> np.ndarray:
    """Exact int_{a1}^{b1} int_{a2}^{b2} (u + v)^gamma dv du for u, v >= 0."""
    a1, b1, a2, b2 = (np.asarray(v, dtype=float) for v in (a1, b1, a2, b2))
    return _signed_antiderivative_sum([b1 + b2, a1 + a2, a1 + b2, b1 + a2], [1.0, 1.0, -1.0, -1.0], gamma)


@functools.lru_cache(maxsize=256)
def _lag_weights(n_rows: int, n_cols: int, h: float, gamma: float, shift_cells: float) -> np.ndarray:
    # cells share the spacing h, so each weight depends on the lag only
    lags = np.arange(-(n_cols - 1), n_rows, dtype=float) + shift_cells
    unit = _signed_antiderivative_sum([lags + 1.0, lags - 1.0, lags, lags], [1.0, 1.0, -1.0, -1.0], gamma)
    per_lag = unit * h ** (gamma + 2.0)
    idx = np.arange(n_rows)[:, None] - np.arange(n_cols)[None, :] + (n_cols - 1)
    out = per_lag[idx]
    out.setflags(write=False)
    return out


@functools.lru_cache(maxsize=64)
def _node_weights_cached(rows: bytes, cols: bytes, gamma: float, offset: float) -> np.ndarray:
    r = np.frombuffer(rows)
    c = np.frombuffer(cols)
    out = power_box_integral(r[:-1, None], r[1:, None], c[None, :-1], c[None, 1:], gamma, offset)
    out.setflags(write=False)
    return out


class Leg(NamedTuple):
    """Nodes, path displacement (d, n+1), uniform spacing (or None) and translation of one integration variable."""

    nodes: np.ndarray
    values: np.ndarray
    h: Optional[float]
    origin: Optional[np.ndarray] = None


def path_leg(path: "BrownianPath", t: float) -> Leg:
    idx = path.grid.index_of(t)
    return Leg(path.grid.nodes[: idx + 1], path.displacement[:, : idx + 1], path.grid.spacing, np.asarray(path.origin, dtype=float))


def time_weights(rows: Leg, cols: Leg, gamma: float, offset: float = 0.0) -> np.ndarray:
    """Exact cell integrals of |r - s + offset|^gamma on the rows x cols cell grid."""
    if rows.h is not None and rows.h == cols.h:
        return _lag_weights(rows.nodes.size - 1, cols.nodes.size - 1, rows.h, gamma, offset / rows.h)
    return _node_weights_cached(rows.nodes.tobytes(), cols.nodes.tobytes(), gamma, float(offset))


# ---------------------------------------------------------
# 대각선 근방 셀: 조건부 기댓값 (closure)
# ---------------------------------------------------------
def _overlap_length(u: float, a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1 + u) - max(a0, b0 + u))


def _quad_pieces(fn: Callable[[float], float], points: Sequence[float], operation: str) -> float:
    total = 0.0
    for lo, hi in zip(points[:-1], points[1:]):
        if hi <= lo:
            continue
        val, err = integrate.quad(fn, lo, hi, limit=200, epsabs=1e-14, epsrel=1e-11)
        if not math.isfinite(val) or err > max(1e-7 * abs(val), 1e-12):
            raise QuadratureError(f"quadrature did not converge on [{lo}, {hi}] (err={err:.3g})", operation=operation)
        total += val
    return total


def _key(x: float) -> float:
    return float(f"{x:.14g}")


@functools.lru_cache(maxsize=4096)
def _lag_closure(a_len: float, b_len: float, start_gap: float, offset: float, shift: Tuple[float, ...],
                 exponents: Tuple[float, ...], gamma0: float) -> float:
    a0, a1 = 0.0, a_len
    b0, b1 = -start_gap, -start_gap + b_len
    lo, hi = a0 - b1, a1 - b0
    p = np.asarray(exponents)
    z = np.asarray(shift)

    def integrand(u: float) -> float:
        ell = _overlap_length(u, a0, a1, b0, b1)
        if ell == 0.0:
            return 0.0
        sd = math.sqrt(abs(u))
        path_part = 1.0
        for pk, zk in zip(p, z):
            path_part *= float(noncentral_abs_moment(pk, zk, sd))
        return ell * abs(u + offset) ** gamma0 * path_part

    cuts = {lo, hi, a0 - b0, a1 - b1, 0.0, -offset}
    points = sorted(c for c in cuts if lo <= c <= hi)
    return _quad_pieces(integrand, points, "lag_closure")


def lag_closure(a0: float, a1: float, b0: float, b1: float, spec: HurstSpec, offset: float = 0.0,
                shift: Optional[Sequence[float]] = None) -> float:
    """E^B of int_{[a0,a1]x[b0,b1]} |a-b+offset|^g0 prod|B_a - B_b + z_i|^p_i for one Brownian path."""
    z = tuple(_key(v) for v in (shift if shift is not None else [0.0] * spec.d))
    return _lag_closure(_key(a1 - a0), _key(b1 - b0), _key(a0 - b0), _key(offset), z,
                        tuple(float(v) for v in spec.space_exponents), spec.gamma0)


# ---------------------------------------------------------
# 특이 이중적분 S
# ---------------------------------------------------------
@dataclass(frozen=True)
class SingularIntegralResult:
    value: float
    grid_n: int
    diagonal_scheme: str
    est_discretization_error: float = float("nan")


def leg_gap(rows: Leg, cols: Leg, shift: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
    """Constant part of R(r) - C(s): origin difference plus ``shift``; None when it vanishes."""
    gap = np.zeros(rows.values.shape[0])
    if rows.origin is not None and cols.origin is not None:
        gap = rows.origin - cols.origin
    if shift is not None:
        gap = gap + shift
    return gap if np.any(gap) else None


def node_factor(rows: Leg, cols: Leg, exponents: np.ndarray, shift: Optional[np.ndarray] = None) -> np.ndarray:
    """prod_i |R_i(r) - C_i(s) + z_i|^p_i on the (rows+1) x (cols+1) node grid."""
    gap = leg_gap(rows, cols, shift)
    out = np.ones((rows.values.shape[1], cols.values.shape[1]))
    with np.errstate(divide="ignore"):
        for i, p in enumerate(exponents):
            diff = rows.values[i][:, None] - cols.values[i][None, :]
            if gap is not None:
                diff = diff + gap[i]
            out = out * np.abs(diff) ** p
    return out


def pair_cells(
    rows: Leg,
    cols: Leg,
    spec: HurstSpec,
    *,
    same_path: bool,
    offset: float = 0.0,
    shift: Optional[Sequence[float]] = None,
    path_factor: bool = True,
) -> np.ndarray:
    """Per-cell contributions to int int |r-s+offset|^g0 prod |R_r - C_s + z|^p dr ds.

    Time weights are exact per cell. Off-diagonal cells take the mean of
    the path factor at the two main-diagonal corners. For one path, cells
    with |i - j| <= 1 (and cells whose corners coincide) are replaced by
    their conditional expectation given the cell geometry.
    """
    weights = time_weights(rows, cols, spec.gamma0, offset)
    if not path_factor:
        return np.array(weights)
    z = None if shift is None else np.asarray(shift, dtype=float)
    p = spec.space_exponents
    factor = node_factor(rows, cols, p, z)
    avg = 0.5 * (factor[:-1, :-1] + factor[1:, 1:])
    cells = weights * avg

    n_r, n_c = cells.shape
    if same_path:
        i = np.arange(n_r)[:, None]
        j = np.arange(n_c)[None, :]
        fix = (np.abs(i - j) <= 1) | ~np.isfinite(avg)
        plain = offset == 0.0 and (z is None or not np.any(z))
        uniform = rows.h is not None and rows.h == cols.h
        if plain:
            closure = closure_constant(spec) * time_weights(rows, cols, spec.kappa - 1.0)
        for a, b in zip(*np.nonzero(fix)):
            if plain:
                cells[a, b] = closure[a, b]
                continue
            if uniform:
                # relative geometry only, so equal lags share one cached quadrature
                r0, r1, c0, c1 = 0.0, rows.h, (b - a) * rows.h, (b - a + 1) * rows.h
            else:
                r0, r1, c0, c1 = rows.nodes[a], rows.nodes[a + 1], cols.nodes[b], cols.nodes[b + 1]
            cells[a, b] = lag_closure(r0, r1, c0, c1, spec, offset, z)
    else:
        bad = ~np.isfinite(avg)
        if np.any(bad):
            # coincident corners of independent paths: use the law of the gap at the cell center
            mid_r = 0.5 * (rows.nodes[:-1] + rows.nodes[1:])
            mid_c = 0.5 * (cols.nodes[:-1] + cols.nodes[1:])
            gap = leg_gap(rows, cols, z)
            start_gap = rows.values[:, 0] - cols.values[:, 0] + (0.0 if gap is None else gap)
            for a, b in zip(*np.nonzero(bad)):
                sd = math.sqrt(mid_r[a] + mid_c[b])
                law = math.prod(float(noncentral_abs_moment(pk, gk, sd)) for pk, gk in zip(p, start_gap))
                cells[a, b] = weights[a, b] * law
    return cells


def _check_nondegenerate(leg: Leg) -> None:
    if np.all(leg.values == leg.values[:, :1]):
        raise DegeneratePathError("path is constant on [0, t]", operation="singular_double_integral_S")


def _coarsen(leg: Leg) -> Optional[Leg]:
    n = leg.nodes.size - 1
    if n < 4 or n % 2:
        return None
    return Leg(leg.nodes[::2], leg.values[:, ::2], None if leg.h is None else 2.0 * leg.h, leg.origin)


def singular_double_integral_S(
    paths: Union["BrownianPath", Tuple["BrownianPath", "BrownianPath"]],
    spec: HurstSpec,
    t: float,
    *,
    shift: Optional[Sequence[float]] = None,
    path_factor: bool = True,
    estimate_error: bool = False,
) -> SingularIntegralResult:
    """S = int_0^t int_0^t |r-s|^(2H0-2) prod |B^a_r - B^b_s|^(2H_i-2) dr ds, without alpha_H.

    One path (or the same path twice) gives the self integral, two
    distinct paths the cross integral.
    """
    require_admissible(spec, Regime.REGULAR, operation="singular_double_integral_S")
    if isinstance(paths, tuple):
        first, second = paths
    else:
        first = second = paths
    same = first is second
    rows, cols = path_leg(first, t), path_leg(second, t)
    if same and path_factor:
        _check_nondegenerate(rows)
    cells = pair_cells(rows, cols, spec, same_path=same, shift=shift, path_factor=path_factor)
    value = math.fsum(cells.ravel())
    err = float("nan")
    if estimate_error:
        coarse_rows, coarse_cols = _coarsen(rows), _coarsen(cols)
        if coarse_rows is not None and coarse_cols is not None:
            coarse = pair_cells(coarse_rows, coarse_cols, spec, same_path=same, shift=shift, path_factor=path_factor)
            err = abs(value - math.fsum(coarse.ravel()))
    scheme = "exact-time" if not path_factor else ("lag-closure" if same else "coincidence-law")
    return SingularIntegralResult(value, rows.nodes.size - 1, scheme, err)


# ---------------------------------------------------------
# 교차분산 C(s,t,x,y)
# ---------------------------------------------------------
def cross_variance_sample(path: "BrownianPath", spec: HurstSpec, s: float, t: float, shift: Sequence[float]) -> float:
    """alpha_H [S(s) + S(t) - 2 T(s,t,z)] for one path; the same path feeds all three terms."""
    full = path_leg(path, t)
    part = path_leg(path, s)
    z = np.asarray(shift, dtype=float)
    s_t = math.fsum(pair_cells(full, full, spec, same_path=True).ravel())
    s_s = math.fsum(pair_cells(part, part, spec, same_path=True).ravel())
    if t - s == 0.0 and not np.any(z):
        cross = s_t
    else:
        cross = math.fsum(pair_cells(part, full, spec, same_path=True, offset=t - s, shift=z).ravel())
    return spec.alpha_h * (s_s + s_t - 2.0 * cross)


def cross_variance_C(
    s: float,
    t: float,
    x: Sequence[float],
    y: Sequence[float],
    spec: HurstSpec,
    mc: int,
    *,
    stream: RngStream,
    grid_n: int = 64,
    workers: Optional[int] = None,
) -> EstimatorResult:
    """Monte Carlo estimate of E^B C(s,t,x,y) = E^B E^W |V_{t,y} - V_{s,x}|^2."""
    from .paths_fields import grid_with_node, sample_bm

    require_admissible(spec, Regime.REGULAR, operation="cross_variance_C")
    if not 0.0 <= s <= t:
        raise DomainError("need 0 <= s <= t", operation="cross_variance_C")
    grid = grid_with_node(t, grid_n, s)
    shift = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    origin = np.zeros(spec.d)

    def one(rs: RngStream) -> float:
        path = sample_bm(grid, spec.d, origin, rs)
        return cross_variance_sample(path, spec, s, t, shift)

    samples = run_replicates(one, mc, stream, workers=workers)
    return summarize(samples, stream, meta={"s": s, "t": t, "grid_n": grid_n}, operation="cross_variance_C")


def cross_variance_expectation(s: float, t: float, x: Sequence[float], y: Sequence[float], spec: HurstSpec) -> float:
    """Deterministic E^B C(s,t,x,y) by quadrature in the lag variable."""
    require_admissible(spec, Regime.REGULAR, operation="cross_variance_expectation")
    z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    self_terms = expected_S(spec, s) + expected_S(spec, t)
    if t == s and not np.any(z):
        return 0.0
    cross = lag_closure(0.0, s, 0.0, t, spec, t - s, z)
    return spec.alpha_h * (self_terms - 2.0 * cross)


# ---------------------------------------------------------
# H 내적
# ---------------------------------------------------------
@dataclass(frozen=True)
class Window:
    """height * indicator of [lo, hi]."""

    lo: float
    hi: float
    height: float = 1.0


@dataclass(frozen=True)
class GaussianFactor:
    """y -> p_var(center - y)."""

    center: float
    var: float


Factor = Union[Tuple[Window, ...], GaussianFactor]


class Kernel:
    """A kernel on [0,T] x R^d fed to h_inner_product."""

    def factors(self) -> Tuple[Tuple[Window, ...], Tuple[Factor, ...]]:
        raise UnsupportedKernelError(f"{type(self).__name__} is not factorizable", operation="h_inner_product")


def _oriented_window(a: float, b: float, height: float = 1.0) -> Window:
    # I_(0,x] = -I_(x,0] for x < 0
    return Window(a, b, height) if b >= a else Window(b, a, -height)


@dataclass(frozen=True)
class MollifiedKernel(Kernel):
    """phi_delta(t - r) p_eps(x - y) with phi_delta = indicator[0,delta] / delta."""

    t: float
    x: Tuple[float, ...]
    eps: float
    delta: float

    def factors(self):
        lo = max(0.0, self.t - self.delta)
        return (Window(lo, self.t, 1.0 / self.delta),), tuple(GaussianFactor(xi, self.eps) for xi in self.x)


@dataclass(frozen=True)
class IndicatorKernel(Kernel):
    """Indicator of (0,t] x prod (0,x_i] with the sign convention for negative x_i."""

    t: float
    x: Tuple[float, ...]

    def factors(self):
        return (_oriented_window(0.0, self.t),), tuple((_oriented_window(0.0, xi),) for xi in self.x)


def _grid_windows(fn: Union[Callable[[np.ndarray], np.ndarray], np.ndarray], nodes: np.ndarray) -> Tuple[Window, ...]:
    nodes = np.asarray(nodes, dtype=float)
    vals = np.asarray(fn(0.5 * (nodes[:-1] + nodes[1:])) if callable(fn) else fn, dtype=float)
    return tuple(Window(float(a), float(b), float(v)) for a, b, v in zip(nodes[:-1], nodes[1:], vals) if v != 0.0)


@dataclass(frozen=True)
class TensorKernel(Kernel):
    """Product of a time factor and per-dimension space factors given on grids.

    Each factor is a callable (sampled at cell midpoints) or an array of
    cell values; it is treated as piecewise constant on its grid.
    """

    time_factor: Any
    time_nodes: Any
    space_factors: Tuple[Any, ...]
    space_nodes: Tuple[Any, ...]

    def factors(self):
        time = _grid_windows(self.time_factor, self.time_nodes)
        space = tuple(_grid_windows(f, n) for f, n in zip(self.space_factors, self.space_nodes))
        return time, space


@dataclass(frozen=True)
class FieldKernel(Kernel):
    """Non-factorizable kernel fn(r, y) on [0, t_max] x box; only a Monte Carlo inner product exists."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    t_max: float
    lower: Tuple[float, ...]
    upper: Tuple[float, ...]


@dataclass(frozen=True)
class KernelSum(Kernel):
    terms: Tuple[Tuple[float, Kernel], ...] = field(default_factory=tuple)


def _window_pair(wa: Tuple[Window, ...], wb: Tuple[Window, ...], exponent: float) -> float:
    if not wa or not wb:
        return 0.0
    a = np.array([(w.lo, w.hi, w.height) for w in wa])
    b = np.array([(w.lo, w.hi, w.height) for w in wb])
    box = power_box_integral(a[:, None, 0], a[:, None, 1], b[None, :, 0], b[None, :, 1], exponent)
    return float(np.sum(a[:, None, 2] * b[None, :, 2] * box))


def _window_overlap(wa: Tuple[Window, ...], wb: Tuple[Window, ...]) -> float:
    total = 0.0
    for u in wa:
        for v in wb:
            total += u.height * v.height * max(0.0, min(u.hi, v.hi) - max(u.lo, v.lo))
    return total


def _gauss_window(g: GaussianFactor, windows: Tuple[Window, ...], exponent: Optional[float]) -> float:
    sd = math.sqrt(g.var)
    total = 0.0
    for w in windows:
        if exponent is None:
            mass = float(ndtr((w.hi - g.center) / sd) - ndtr((w.lo - g.center) / sd))
            total += w.height * mass
            continue
        fn = lambda v: float(noncentral_abs_moment(exponent, g.center - v, sd))  # noqa: E731
        total += w.height * _quad_pieces(fn, sorted({w.lo, w.hi, min(max(g.center, w.lo), w.hi)}), "h_inner_product")
    return total


def _space_pair(fa: Factor, fb: Factor, hurst: float) -> float:
    """alpha_H int int f(y) g(z) |y-z|^(2H-2) dy dz, the L2 product when H = 1/2."""
    white = hurst == 0.5
    exponent = None if white else 2.0 * hurst - 2.0
    alpha = 1.0 if white else hurst * (2.0 * hurst - 1.0)
    if isinstance(fa, GaussianFactor) and isinstance(fb, GaussianFactor):
        var = fa.var + fb.var
        if white:
            return float(heat_kernel(var, np.array([fa.center - fb.center])))
        return alpha * float(noncentral_abs_moment(exponent, fa.center - fb.center, math.sqrt(var)))
    if isinstance(fa, GaussianFactor):
        return alpha * _gauss_window(fa, fb, exponent)
    if isinstance(fb, GaussianFactor):
        return alpha * _gauss_window(fb, fa, exponent)
    if white:
        return _window_overlap(fa, fb)
    return alpha * _window_pair(fa, fb, exponent)


def gaussian_space_product(diff: Any, var: float, spec: HurstSpec) -> np.ndarray:
    """Space factor of <p_eps(a - .), p_eps'(b - .)>_H for diff = a - b of shape (..., d), var = eps + eps'."""
    diff = np.asarray(diff, dtype=float)
    out = np.ones(diff.shape[:-1])
    sd = math.sqrt(var)
    for i, hurst in enumerate(spec.h):
        if hurst == 0.5:
            out = out * np.exp(-diff[..., i] ** 2 / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
        else:
            out = out * hurst * (2.0 * hurst - 1.0) * noncentral_abs_moment(2.0 * hurst - 2.0, diff[..., i], sd)
    return out


def window_time_product(lo_a: Any, hi_a: Any, lo_b: Any, hi_b: Any, spec: HurstSpec) -> np.ndarray:
    """alpha_H0 int_{[lo_a,hi_a]} int_{[lo_b,hi_b]} |r - s|^(2H0-2), broadcast over the bounds."""
    return spec.alpha_h0 * power_box_integral(lo_a, hi_a, lo_b, hi_b, spec.gamma0)


def _factorized_product(a: Kernel, b: Kernel, spec: HurstSpec) -> float:
    ta, sa = a.factors()
    tb, sb = b.factors()
    value = spec.alpha_h0 * _window_pair(ta, tb, spec.gamma0)
    for fa, fb, hurst in zip(sa, sb, spec.h):
        if value == 0.0:
            break
        value *= _space_pair(fa, fb, hurst)
    return value


def _field_mc(a: Kernel, b: Kernel, spec: HurstSpec, mc: int, stream: RngStream) -> EstimatorResult:
    fields = [k if isinstance(k, FieldKernel) else None for k in (a, b)]
    ref = next(f for f in fields if f is not None)
    lower = np.asarray(ref.lower, dtype=float)
    upper = np.asarray(ref.upper, dtype=float)
    volume = ref.t_max * float(np.prod(upper - lower))

    def evaluate(kernel: Kernel, r: float, y: np.ndarray) -> float:
        if isinstance(kernel, FieldKernel):
            return float(kernel.fn(np.asarray(r), y))
        time, space = kernel.factors()
        val = sum(w.height for w in time if w.lo <= r <= w.hi)
        for fac, yi in zip(space, y):
            if isinstance(fac, GaussianFactor):
                val *= float(heat_kernel(fac.var, np.array([fac.center - yi])))
            else:
                val *= sum(w.height for w in fac if w.lo <= yi <= w.hi)
        return val

    def one(rs: RngStream) -> float:
        gen = rs.generator()
        r1, r2 = gen.uniform(0.0, ref.t_max, size=2)
        y1 = gen.uniform(lower, upper)
        y2 = gen.uniform(lower, upper)
        weight = spec.alpha_h * abs(r1 - r2) ** spec.gamma0
        weight *= math.prod(abs(u - v) ** p for u, v, p in zip(y1, y2, spec.space_exponents))
        return volume ** 2 * evaluate(a, r1, y1) * evaluate(b, r2, y2) * weight

    samples = run_replicates(one, mc, stream)
    return summarize(samples, stream, meta={"fallback": "monte_carlo"}, operation="h_inner_product")


def h_inner_product(
    phi: Kernel,
    psi: Kernel,
    spec: HurstSpec,
    *,
    mc: Optional[int] = None,
    stream: Optional[RngStream] = None,
) -> Union[float, EstimatorResult]:
    """<phi, psi>_H for the weight alpha_H |s-t|^(2H0-2) prod |x_i - y_i|^(2H_i-2).

    Factorizable kernels give a float. A FieldKernel needs an ``mc``
    budget and returns an EstimatorResult flagged ``fallback="monte_carlo"``.
    """
    require_admissible(spec, operation="h_inner_product")
    if isinstance(phi, KernelSum) or isinstance(psi, KernelSum):
        left = phi.terms if isinstance(phi, KernelSum) else ((1.0, phi),)
        right = psi.terms if isinstance(psi, KernelSum) else ((1.0, psi),)
        raw = [(ca * cb, h_inner_product(ka, kb, spec, mc=mc, stream=stream)) for ca, ka in left for cb, kb in right]
        if any(isinstance(p, EstimatorResult) for _, p in raw):
            raise UnsupportedKernelError("sums of Monte Carlo kernels are not supported", operation="h_inner_product")
        return math.fsum(c * p for c, p in raw)
    if isinstance(phi, FieldKernel) or isinstance(psi, FieldKernel):
        if mc is None:
            raise UnsupportedKernelError("non-factorizable kernel needs an mc budget", operation="h_inner_product")
        return _field_mc(phi, psi, spec, mc, stream or RngStream(0, "h_inner_product"))
    return _factorized_product(phi, psi, spec)
