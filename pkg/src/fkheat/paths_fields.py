"""Brownian paths, fractional Brownian sheets and the smoothed noise W^{eps,delta}.

Samplers are pure functions of their arguments and an explicit RngStream.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg
from scipy.special import ndtr

from .errors import DegenerateGridError, DomainError, FactorizationError, MemoryBudgetError, RecordError, TruncationDomainError, UnsupportedGridError
from .kernels_quadrature import abs_moment, gaussian_space_product, rh_cov, window_time_product
from .log import handle_log
from .model import GridKind, HurstSpec, Regime, TimeGrid
from .montecarlo import available_memory_bytes
from .rng import RngStream

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-12, 1e-10, 1e-8)
PAD_SD = 5.0
TAIL_TOL = 1e-6


# ---------------------------------------------------------
# [로직 1] 브라운 경로
# ---------------------------------------------------------
@dataclass(frozen=True, eq=False)
class BrownianPath:
    """B^x on a time grid, stored as ``displacement`` (d, n+1) plus a translation ``origin``.

    ``values == displacement + origin``. Translations touch only the origin
    and time reversal only reorders the displacement, so quantities built
    from differences of the displacement see neither.
    """

    grid: TimeGrid
    displacement: np.ndarray
    origin: Tuple[float, ...]

    @property
    def d(self) -> int:
        return self.displacement.shape[0]

    @cached_property
    def values(self) -> np.ndarray:
        return self.displacement + np.asarray(self.origin, dtype=float)[:, None]

    @property
    def start(self) -> Tuple[float, ...]:
        return tuple(float(v) for v in self.values[:, 0])

    def at(self, t: float) -> np.ndarray:
        return self.values[:, self.grid.index_of(t)]

    def shifted(self, offset: Sequence[float]) -> "BrownianPath":
        off = np.asarray(offset, dtype=float)
        return BrownianPath(self.grid, self.displacement, tuple(float(v) for v in np.asarray(self.origin, dtype=float) + off))

    def reversed(self) -> "BrownianPath":
        """s -> B_{t-s} on the whole grid; the displacement is reordered, never recomputed."""
        nodes = self.grid.t_max - self.grid.nodes[::-1]
        grid = self.grid if self.grid.kind is not GridKind.CUSTOM else TimeGrid.from_nodes(nodes)
        return BrownianPath(grid, self.displacement[:, ::-1].copy(), self.origin)


def _start_vector(start: Union[float, Sequence[float]], d: int) -> np.ndarray:
    vec = np.broadcast_to(np.asarray(start, dtype=float), (d,)).copy()
    return vec


def grid_with_node(t: float, n: int, s: float) -> TimeGrid:
    """Uniform grid on [0, t] with n cells, switched to custom nodes when s is not already a node."""
    grid = TimeGrid.uniform(t, n)
    if s in (0.0, t):
        return grid
    k = s / grid.spacing
    if abs(k - round(k)) <= 1e-9:
        return grid
    nodes = np.union1d(grid.nodes, [s])
    return TimeGrid.from_nodes(nodes)


def sample_bm(grid: TimeGrid, d: int, start: Union[float, Sequence[float]], stream: RngStream) -> BrownianPath:
    if grid.n < 1:
        raise DegenerateGridError("time grid needs at least one subinterval", operation="sample_bm")
    x0 = _start_vector(start, d)
    steps = np.sqrt(np.diff(grid.nodes))
    incr = stream.generator().standard_normal((d, grid.n)) * steps
    disp = np.zeros((d, grid.n + 1))
    np.cumsum(incr, axis=1, out=disp[:, 1:])
    return BrownianPath(grid, disp, tuple(float(v) for v in x0))


def refine_bridge(path: BrownianPath, new_level: int, stream: RngStream) -> BrownianPath:
    """Brownian-bridge midpoint insertion up to a finer dyadic level; coarse nodes are kept bit-exact."""
    grid = path.grid
    if grid.kind is not GridKind.DYADIC:
        raise UnsupportedGridError("bridge refinement needs a dyadic grid", operation="refine_bridge")
    if new_level < grid.level:
        raise UnsupportedGridError("new level is coarser than the path", operation="refine_bridge")
    values = path.displacement
    for level in range(grid.level, new_level):
        h = grid.t_max / 2 ** level
        gen = stream.child(level).generator()
        mids = 0.5 * (values[:, :-1] + values[:, 1:]) + math.sqrt(h / 4.0) * gen.standard_normal((path.d, values.shape[1] - 1))
        finer = np.empty((path.d, 2 * values.shape[1] - 1))
        finer[:, 0::2] = values
        finer[:, 1::2] = mids
        values = finer
    return BrownianPath(TimeGrid.dyadic(grid.t_max, new_level), values, path.origin)


def restrict(path: BrownianPath, level: int) -> BrownianPath:
    grid = path.grid
    if grid.kind is not GridKind.DYADIC or level > grid.level:
        raise UnsupportedGridError("restriction needs a dyadic grid at least as fine", operation="restrict")
    step = 2 ** (grid.level - level)
    return BrownianPath(TimeGrid.dyadic(grid.t_max, level), path.displacement[:, ::step], path.origin)


def sample_pinned_bm(
    grid: TimeGrid,
    d: int,
    start: Union[float, Sequence[float]],
    pins: Mapping[float, Sequence[float]],
    stream: RngStream,
) -> BrownianPath:
    """BM from ``start`` conditioned on B(tau) = pins[tau] at grid nodes tau.

    Between pins the path is a Brownian bridge (free path minus its
    linear interpolation between the pin times); after the last pin it
    continues as a free BM.
    """
    free = sample_bm(grid, d, 0.0, stream)
    nodes = grid.nodes
    anchors = [(0, _start_vector(start, d))]
    for tau in sorted(pins):
        if not 0.0 < tau <= grid.t_max:
            raise DomainError(f"pin time {tau} outside (0, t_max]", operation="sample_pinned_bm")
        anchors.append((grid.index_of(tau), _start_vector(pins[tau], d)))
    values = np.empty_like(free.values)
    for (i0, y0), (i1, y1) in zip(anchors[:-1], anchors[1:]):
        seg = slice(i0, i1 + 1)
        w = (nodes[seg] - nodes[i0]) / (nodes[i1] - nodes[i0])
        base = free.values[:, seg]
        bridge = base - (1.0 - w) * base[:, :1] - w * base[:, -1:]
        values[:, seg] = bridge + (1.0 - w) * y0[:, None] + w * y1[:, None]
    last, y_last = anchors[-1]
    values[:, last:] = free.values[:, last:] - free.values[:, last:last + 1] + y_last[:, None]
    return BrownianPath(grid, values, (0.0,) * d)


# ---------------------------------------------------------
# [로직 2] 분수 브라운 시트
# ---------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SheetSample:
    """W(t, x) at the vertices of time_nodes x space_nodes[0] x ... (row-major)."""

    spec: HurstSpec
    time_nodes: np.ndarray
    space_nodes: Tuple[np.ndarray, ...]
    values: np.ndarray

    @classmethod
    def zeros(cls, spec: HurstSpec, time_nodes: Sequence[float], space_nodes: Sequence[Sequence[float]]) -> "SheetSample":
        tn = np.asarray(time_nodes, dtype=float)
        sn = tuple(np.asarray(n, dtype=float) for n in space_nodes)
        return cls(spec, tn, sn, np.zeros((tn.size,) + tuple(n.size for n in sn)))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @cached_property
    def increments(self) -> np.ndarray:
        """Mixed first differences over every axis: W(cell) for each space-time cell."""
        out = self.values
        for axis in range(out.ndim):
            out = np.diff(out, axis=axis)
        return out


def default_max_vertices() -> int:
    return available_memory_bytes() // 4 // 8 // 4


def _check_nodes(nodes: np.ndarray, label: str) -> None:
    if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0.0):
        raise DegenerateGridError(f"{label} nodes must increase strictly", operation="sample_sheet")


def cholesky_factor(hurst: float, nodes: np.ndarray, dimension: int) -> np.ndarray:
    """Lower factor L with L L^T = R_H(nodes, nodes); rows at the node 0 are zero."""
    nonzero = nodes != 0.0
    sub = nodes[nonzero]
    cov = rh_cov(hurst, sub[:, None], sub[None, :])
    scale = float(np.max(np.diag(cov)))
    factor = None
    try:
        factor = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        for jitter in JITTER_LADDER:
            try:
                factor = linalg.cholesky(cov + jitter * scale * np.eye(sub.size), lower=True)
            except linalg.LinAlgError:
                continue
            handle_log(logger, f"dimension {dimension}: covariance factorized with jitter {jitter:g}", "WARNING")
            break
    if factor is None:
        raise FactorizationError(
            f"covariance of dimension {dimension} is not positive definite after jitter",
            dimension=dimension,
            operation="sample_sheet",
        )
    full = np.zeros((nodes.size, nodes.size))
    full[np.ix_(nonzero, nonzero)] = factor
    return full


def sample_sheet(
    spec: HurstSpec,
    time_nodes: Sequence[float],
    space_nodes: Sequence[Sequence[float]],
    stream: RngStream,
    *,
    max_vertices: Optional[int] = None,
) -> SheetSample:
    """Exact separable Gaussian sample: Z contracted with one Cholesky factor per axis."""
    tn = np.asarray(time_nodes, dtype=float)
    sn = tuple(np.asarray(n, dtype=float) for n in space_nodes)
    if len(sn) != spec.d:
        raise DegenerateGridError("one node array per spatial dimension required", operation="sample_sheet")
    _check_nodes(tn, "time")
    if tn[0] < 0.0:
        raise DomainError("time nodes must be nonnegative", operation="sample_sheet")
    for i, n in enumerate(sn, start=1):
        _check_nodes(n, f"space[{i}]")

    shape = (tn.size,) + tuple(n.size for n in sn)
    budget = default_max_vertices() if max_vertices is None else max_vertices
    if math.prod(shape) > budget:
        raise MemoryBudgetError(f"sheet with {math.prod(shape)} vertices exceeds the budget of {budget}", operation="sample_sheet")

    factors = [cholesky_factor(spec.h0, tn, 0)] + [cholesky_factor(h, n, i) for i, (h, n) in enumerate(zip(spec.h, sn), start=1)]
    values = stream.generator().standard_normal(shape)
    for axis, factor in enumerate(factors):
        values = np.moveaxis(np.tensordot(factor, values, axes=([1], [axis])), 0, axis)
    return SheetSample(spec, tn, sn, values)


_MAGIC = b"FKSH"


def dump_sheet(sheet: SheetSample, path: Union[str, Path]) -> None:
    """Binary replay file: header (dims, Hurst spec), node arrays as float64, row-major values."""
    spec = sheet.spec
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", 1, spec.d, 1 if spec.regime is Regime.SPECIAL_D1 else 0))
        fh.write(struct.pack(f"<{spec.d + 1}I", *sheet.shape))
        fh.write(struct.pack(f"<{spec.d + 1}d", spec.h0, *spec.h))
        fh.write(np.ascontiguousarray(sheet.time_nodes, dtype="<f8").tobytes())
        for nodes in sheet.space_nodes:
            fh.write(np.ascontiguousarray(nodes, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(sheet.values, dtype="<f8").tobytes())


def load_sheet(path: Union[str, Path]) -> SheetSample:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise RecordError(f"{path} is not a sheet dump")
    version, d, regime = struct.unpack_from("<III", raw, 4)
    pos = 16
    shape = struct.unpack_from(f"<{d + 1}I", raw, pos)
    pos += 4 * (d + 1)
    hurst = struct.unpack_from(f"<{d + 1}d", raw, pos)
    pos += 8 * (d + 1)
    spec = HurstSpec(d, hurst[0], tuple(hurst[1:]), Regime.SPECIAL_D1 if regime else Regime.REGULAR)
    arrays = []
    for size in shape:
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=pos).copy())
        pos += 8 * size
    values = np.frombuffer(raw, dtype="<f8", count=math.prod(shape), offset=pos).reshape(shape).copy()
    return SheetSample(spec, arrays[0], tuple(arrays[1:]), values)


# ---------------------------------------------------------
# [로직 3] 평활화된 노이즈
# ---------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SmoothedNoiseField:
    """W^{eps,delta}(t,x) = int_0^t int phi_delta(t-s) p_eps(x-y) W(ds,dy) on a sheet grid."""

    sheet: SheetSample
    eps: float
    delta: float
    tail_tol: float = TAIL_TOL

    def __post_init__(self) -> None:
        if not (self.eps > 0.0 and self.delta > 0.0):
            raise DomainError("eps and delta must be positive", operation="SmoothedNoiseField")

    @property
    def pad(self) -> float:
        return PAD_SD * math.sqrt(self.eps)

    def valid_box(self) -> Tuple[np.ndarray, np.ndarray]:
        lo = np.array([n[0] for n in self.sheet.space_nodes]) + self.pad
        hi = np.array([n[-1] for n in self.sheet.space_nodes]) - self.pad
        return lo, hi

    def time_weights(self, t: Union[float, np.ndarray]) -> np.ndarray:
        """Cell averages of phi_delta(t - s) on [0, t]; shape (..., n_t)."""
        nodes = self.sheet.time_nodes
        t = np.asarray(t, dtype=float)[..., None]
        lo = np.maximum(t - self.delta, 0.0)
        overlap = np.clip(np.minimum(t, nodes[1:]) - np.maximum(lo, nodes[:-1]), 0.0, None)
        return overlap / (self.delta * np.diff(nodes))

    def space_weights(self, axis: int, x: Union[float, np.ndarray]) -> np.ndarray:
        """Cell averages of p_eps(x - y) along one spatial axis; shape (..., n_i)."""
        nodes = self.sheet.space_nodes[axis]
        sd = math.sqrt(self.eps)
        x = np.asarray(x, dtype=float)[..., None]
        mass = ndtr((nodes[1:] - x) / sd) - ndtr((nodes[:-1] - x) / sd)
        return mass / np.diff(nodes)

    def check_domain(self, t: Union[float, np.ndarray], x: np.ndarray) -> None:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.sheet.time_nodes[-1] + 1e-12):
            raise DomainError("time outside the sheet horizon", operation="eval_smoothed_noise")
        if np.any(t - self.delta < self.sheet.time_nodes[0] - 1e-12) and self.sheet.time_nodes[0] > 0.0:
            raise DomainError("time window starts before the sheet grid", operation="eval_smoothed_noise")
        sd = math.sqrt(self.eps)
        pts = np.atleast_2d(x)
        for axis, nodes in enumerate(self.sheet.space_nodes):
            xs = pts[..., axis]
            lost = ndtr((nodes[0] - xs) / sd) + ndtr((xs - nodes[-1]) / sd)
            if np.any(lost > self.tail_tol) or np.any(xs < nodes[0] + self.pad - 1e-12) or np.any(xs > nodes[-1] - self.pad + 1e-12):
                raise TruncationDomainError(
                    f"point outside the sheet hull padded by {PAD_SD:g} sqrt(eps) on axis {axis + 1}",
                    operation="eval_smoothed_noise",
                )


def eval_smoothed_noise(field: SmoothedNoiseField, t: float, x: Union[float, Sequence[float]]) -> float:
    """Midpoint sum of cell-averaged kernel weights against sheet increments; linear in the sheet."""
    pt = _start_vector(x, field.sheet.spec.d)
    field.check_domain(t, pt)
    out = np.tensordot(field.time_weights(t), field.sheet.increments, axes=([0], [0]))
    for axis in range(field.sheet.spec.d):
        out = np.tensordot(field.space_weights(axis, pt[axis]), out, axes=([0], [0]))
    return float(out)


def potential_table(field: SmoothedNoiseField, times: Sequence[float], grids: Sequence[Sequence[float]]) -> np.ndarray:
    """W^{eps,delta} on times x grids[0] x ... x grids[d-1] in one contraction."""
    times = np.asarray(times, dtype=float)
    grids = [np.asarray(g, dtype=float) for g in grids]
    field.check_domain(times, np.array([[g[0] for g in grids], [g[-1] for g in grids]]))
    out = np.tensordot(field.time_weights(times), field.sheet.increments, axes=([1], [0]))
    for axis, g in enumerate(grids):
        weights = field.space_weights(axis, g)
        out = np.moveaxis(np.tensordot(weights, out, axes=([1], [axis + 1])), 0, axis + 1)
    return out


def _increment_covariance(hurst: float, nodes: np.ndarray) -> np.ndarray:
    cov = rh_cov(hurst, nodes[:, None], nodes[None, :])
    diff = np.diff(np.eye(nodes.size), axis=0)
    return diff @ cov @ diff.T


def discrete_noise_variance(field: SmoothedNoiseField, t: float, x: Union[float, Sequence[float]]) -> float:
    """Exact variance of eval_smoothed_noise over sheet draws on the same grid."""
    spec = field.sheet.spec
    pt = _start_vector(x, spec.d)
    field.check_domain(t, pt)
    wt = field.time_weights(t)
    value = float(wt @ _increment_covariance(spec.h0, field.sheet.time_nodes) @ wt)
    for axis, (h, nodes) in enumerate(zip(spec.h, field.sheet.space_nodes)):
        ws = field.space_weights(axis, pt[axis])
        value *= float(ws @ _increment_covariance(h, nodes) @ ws)
    return value


def smoothed_noise_variance(spec: HurstSpec, t: float, eps: float, delta: float) -> float:
    """Continuum variance of W^{eps,delta}(t,x): time window pair times prod alpha_i (2 eps)^(p_i/2) E|xi|^(p_i)."""
    lo = max(t - delta, 0.0)
    value = float(window_time_product(lo, t, lo, t, spec)) / delta ** 2
    return value * float(gaussian_space_product(np.zeros(spec.d), 2.0 * eps, spec))


# ---------------------------------------------------------
# [로직 4] 경로를 따라 평활화된 범함수의 조건부 공분산
# ---------------------------------------------------------
def _trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _window_bounds(tau: np.ndarray, delta: float) -> Tuple[np.ndarray, np.ndarray]:
    return np.maximum(tau - delta, 0.0), tau


def mollified_inner(path_a: BrownianPath, path_b: BrownianPath, spec: HurstSpec, t: float, eps: float, delta: float) -> float:
    """W-conditional covariance of int_0^t W^{eps,delta}(t-s, B^a_s) ds and the same along B^b.

    The s-integrals use the trapezoid rule on each path's grid.
    """
    ia, ib = path_a.grid.index_of(t), path_b.grid.index_of(t)
    sa, sb = path_a.grid.nodes[: ia + 1], path_b.grid.nodes[: ib + 1]
    lo_a, hi_a = _window_bounds(t - sa, delta)
    lo_b, hi_b = _window_bounds(t - sb, delta)
    time = window_time_product(lo_a[:, None], hi_a[:, None], lo_b[None, :], hi_b[None, :], spec) / delta ** 2
    diff = path_a.values[:, : ia + 1].T[:, None, :] - path_b.values[:, : ib + 1].T[None, :, :]
    space = gaussian_space_product(diff, 2.0 * eps, spec)
    wa, wb = _trapezoid_weights(sa), _trapezoid_weights(sb)
    return float(wa @ (time * space) @ wb)


def _composite_gauss_legendre(t: float, width: float, order: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    panels = max(1, math.ceil(t / width))
    x, w = leggauss(order)
    edges = np.linspace(0.0, t, panels + 1)
    half = 0.5 * np.diff(edges)
    pts = (edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


def mollified_variance_expectation(spec: HurstSpec, t: float, eps: float, delta: float) -> float:
    """E^B of mollified_inner in the self case, by composite Gauss-Legendre over [0,t]^2."""
    pts, wts = _composite_gauss_legendre(t, 0.5 * delta)
    lo, hi = _window_bounds(t - pts, delta)
    time = window_time_product(lo[:, None], hi[:, None], lo[None, :], hi[None, :], spec) / delta ** 2
    lag = np.abs(pts[:, None] - pts[None, :])
    space = np.ones_like(lag)
    for hurst in spec.h:
        var = lag + 2.0 * eps
        if hurst == 0.5:
            space = space / np.sqrt(2.0 * math.pi * var)
        else:
            p = 2.0 * hurst - 2.0
            space = space * hurst * (2.0 * hurst - 1.0) * abs_moment(p) * var ** (p / 2.0)
    return float(wts @ (time * space) @ wts)
