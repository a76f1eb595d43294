"""Parameter objects, admissibility validation and derived constants."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from .errors import AdmissibilityError, ConfigError, DegenerateGridError, UnsupportedGridError


class Regime(str, Enum):
    REGULAR = "regular"
    SPECIAL_D1 = "special_d1"


@dataclass(frozen=True)
class HurstSpec:
    """Time index ``h0`` and spatial indices ``h`` of the fractional Brownian sheet.

    The regime is declared by the caller; it is never inferred from
    ``h == 0.5`` comparisons.
    """

    d: int
    h0: float
    h: Tuple[float, ...]
    regime: Regime = Regime.REGULAR

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", tuple(float(v) for v in np.atleast_1d(self.h)))
        object.__setattr__(self, "h0", float(self.h0))
        object.__setattr__(self, "regime", Regime(self.regime))

    @property
    def gamma0(self) -> float:
        """Exponent of the time kernel |r-s|^(2H0-2)."""
        return 2.0 * self.h0 - 2.0

    @property
    def space_exponents(self) -> np.ndarray:
        return np.array([2.0 * hi - 2.0 for hi in self.h])

    @property
    def kappa(self) -> float:
        return 2.0 * self.h0 + sum(self.h) - self.d - 1.0

    @property
    def alpha_h0(self) -> float:
        return self.h0 * (2.0 * self.h0 - 1.0)

    @property
    def alpha_h(self) -> float:
        return self.alpha_h0 * math.prod(hi * (2.0 * hi - 1.0) for hi in self.h)

    @property
    def alpha_space(self) -> Tuple[float, ...]:
        return tuple(hi * (2.0 * hi - 1.0) for hi in self.h)

    def to_dict(self) -> Dict[str, Any]:
        return {"d": self.d, "h0": self.h0, "h": list(self.h), "regime": self.regime.value}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "HurstSpec":
        return cls(d=int(data["d"]), h0=float(data["h0"]), h=tuple(data["h"]), regime=Regime(data.get("regime", "regular")))


@dataclass(frozen=True)
class ValidationReport:
    admissible: bool
    kappa: Optional[float] = None
    alpha_h: Optional[float] = None
    alpha_h0: Optional[float] = None
    reason: Optional[str] = None


INDEX_OUT_OF_RANGE = "index out of (0,1)"
KAPPA_CONDITION = "2*h0 + sum(h) > d + 1"


def validate(spec: HurstSpec) -> ValidationReport:
    """Check the regime conditions; rejection names the violated condition."""
    indices = (spec.h0,) + spec.h
    if not all(math.isfinite(v) and 0.0 < v < 1.0 for v in indices):
        return ValidationReport(False, reason=INDEX_OUT_OF_RANGE)
    if spec.d < 1 or len(spec.h) != spec.d:
        return ValidationReport(False, reason="len(h) == d >= 1")

    if spec.regime is Regime.SPECIAL_D1:
        if spec.d != 1:
            return ValidationReport(False, reason="special_d1 requires d == 1")
        if spec.h[0] != 0.5:
            return ValidationReport(False, reason="special_d1 requires h1 == 1/2")
        if not spec.h0 > 0.75:
            return ValidationReport(False, reason="h0 > 3/4")
        return ValidationReport(True, alpha_h0=spec.alpha_h0)

    if spec.h0 < 0.5:
        return ValidationReport(False, reason="h0 >= 1/2")
    if not all(hi > 0.5 for hi in spec.h):
        return ValidationReport(False, reason="h_i > 1/2")
    if not spec.kappa > 0.0:
        return ValidationReport(False, reason=KAPPA_CONDITION)
    return ValidationReport(True, kappa=spec.kappa, alpha_h=spec.alpha_h, alpha_h0=spec.alpha_h0)


def require_admissible(spec: HurstSpec, regime: Optional[Regime] = None, *, operation: Optional[str] = None) -> ValidationReport:
    report = validate(spec)
    if not report.admissible:
        raise AdmissibilityError(report.reason or "unknown", operation=operation)
    if regime is not None and spec.regime is not regime:
        raise AdmissibilityError(f"regime {regime.value} required", operation=operation)
    return report


# ---------------------------------------------------------
# 시간 격자
# ---------------------------------------------------------
class GridKind(str, Enum):
    UNIFORM = "uniform"
    DYADIC = "dyadic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    n: int
    kind: GridKind = GridKind.UNIFORM
    level: Optional[int] = None
    custom_nodes: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise DegenerateGridError("time grid needs at least one subinterval", operation="TimeGrid")
        if not self.t_max > 0.0:
            raise DegenerateGridError("time horizon must be positive", operation="TimeGrid")
        if self.kind is GridKind.DYADIC and (self.level is None or self.n != 2 ** self.level):
            raise UnsupportedGridError("dyadic grid requires n == 2**level", operation="TimeGrid")
        if self.kind is GridKind.CUSTOM:
            nodes = np.asarray(self.custom_nodes, dtype=float)
            if nodes.size != self.n + 1 or nodes[0] != 0.0 or nodes[-1] != self.t_max or np.any(np.diff(nodes) <= 0.0):
                raise DegenerateGridError("custom nodes must increase strictly from 0 to t_max", operation="TimeGrid")

    @classmethod
    def uniform(cls, t_max: float, n: int) -> "TimeGrid":
        return cls(float(t_max), int(n))

    @classmethod
    def dyadic(cls, t_max: float, level: int) -> "TimeGrid":
        return cls(float(t_max), 2 ** int(level), GridKind.DYADIC, int(level))

    @classmethod
    def from_nodes(cls, nodes: Sequence[float]) -> "TimeGrid":
        arr = np.asarray(nodes, dtype=float)
        if arr.size < 2:
            raise DegenerateGridError("time grid needs at least one subinterval", operation="TimeGrid")
        return cls(float(arr[-1]), arr.size - 1, GridKind.CUSTOM, None, tuple(arr.tolist()))

    @property
    def nodes(self) -> np.ndarray:
        if self.kind is GridKind.CUSTOM:
            return np.asarray(self.custom_nodes, dtype=float)
        return np.linspace(0.0, self.t_max, self.n + 1)

    @property
    def spacing(self) -> Optional[float]:
        """Uniform step, or None for custom grids."""
        if self.kind is GridKind.CUSTOM:
            return None
        return self.t_max / self.n

    def index_of(self, t: float) -> int:
        """Index of node ``t``; raises if ``t`` is not a grid node."""
        nodes = self.nodes
        idx = int(np.argmin(np.abs(nodes - t)))
        if not math.isclose(nodes[idx], t, rel_tol=0.0, abs_tol=1e-12 * max(1.0, self.t_max)):
            raise UnsupportedGridError(f"time {t} is not a grid node", operation="TimeGrid")
        return idx


# ---------------------------------------------------------
# 초기 조건
# ---------------------------------------------------------
def _as_points(x: Any) -> np.ndarray:
    """Points are arrays of shape (..., d); a scalar is one point in d=1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class InitialCondition:
    """Bounded initial datum f with its heat-semigroup image p_t f."""

    kind = "abstract"

    def __call__(self, x: Any) -> np.ndarray:
        raise NotImplementedError

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        raise NotImplementedError

    @property
    def sup(self) -> float:
        raise NotImplementedError

    def __add__(self, other: "InitialCondition") -> "Superposition":
        return Superposition((self, other))

    def to_dict(self) -> Dict[str, Any]:
        out = {"kind": self.kind}
        out.update(asdict(self))  # type: ignore[arg-type]
        return out


@dataclass(frozen=True)
class Constant(InitialCondition):
    c: float = 1.0
    kind = "constant"

    def __call__(self, x: Any) -> np.ndarray:
        pts = _as_points(x)
        return np.full(pts.shape[:-1], float(self.c))

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        return self(x)

    @property
    def sup(self) -> float:
        return abs(self.c)


@dataclass(frozen=True)
class GaussianBump(InitialCondition):
    center: Tuple[float, ...] = (0.0,)
    width: float = 1.0
    amplitude: float = 1.0
    kind = "gaussian_bump"

    def __call__(self, x: Any) -> np.ndarray:
        pts = _as_points(x)
        r2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width ** 2))

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        pts = _as_points(x)
        w2 = self.width ** 2
        d = len(self.center)
        r2 = np.sum((pts - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * (w2 / (w2 + t)) ** (d / 2.0) * np.exp(-r2 / (2.0 * (w2 + t)))

    @property
    def sup(self) -> float:
        return abs(self.amplitude)


@dataclass(frozen=True)
class Indicator(InitialCondition):
    lower: Tuple[float, ...] = (-1.0,)
    upper: Tuple[float, ...] = (1.0,)
    kind = "indicator"

    def __call__(self, x: Any) -> np.ndarray:
        pts = _as_points(x)
        inside = (pts >= np.asarray(self.lower)) & (pts <= np.asarray(self.upper))
        return np.all(inside, axis=-1).astype(float)

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        if t <= 0.0:
            return self(x)
        pts = _as_points(x)
        sd = math.sqrt(t)
        mass = ndtr((np.asarray(self.upper) - pts) / sd) - ndtr((np.asarray(self.lower) - pts) / sd)
        return np.prod(mass, axis=-1)

    @property
    def sup(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Cosine(InitialCondition):
    wavevector: Tuple[float, ...] = (1.0,)
    kind = "cosine"

    def __call__(self, x: Any) -> np.ndarray:
        pts = _as_points(x)
        return np.cos(pts @ np.asarray(self.wavevector, dtype=float))

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        k = np.asarray(self.wavevector, dtype=float)
        return math.exp(-0.5 * float(k @ k) * t) * self(x)

    @property
    def sup(self) -> float:
        return 1.0


@dataclass(frozen=True)
class Superposition(InitialCondition):
    terms: Tuple[InitialCondition, ...] = field(default_factory=tuple)
    kind = "superposition"

    def __call__(self, x: Any) -> np.ndarray:
        return sum(term(x) for term in self.terms)

    def semigroup(self, t: float, x: Any) -> np.ndarray:
        return sum(term.semigroup(t, x) for term in self.terms)

    @property
    def sup(self) -> float:
        return sum(term.sup for term in self.terms)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "terms": [term.to_dict() for term in self.terms]}


_CONDITIONS = {cls.kind: cls for cls in (Constant, GaussianBump, Indicator, Cosine)}


def initial_condition_from_dict(data: Mapping[str, Any]) -> InitialCondition:
    kind = data.get("kind")
    if kind == "superposition":
        return Superposition(tuple(initial_condition_from_dict(t) for t in data["terms"]))
    if kind not in _CONDITIONS:
        raise ConfigError(f"unknown initial condition kind {kind!r}", field="params.f.kind")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items() if k != "kind"}
    return _CONDITIONS[kind](**kwargs)


# ---------------------------------------------------------
# 약형식 시험 함수
# ---------------------------------------------------------
@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported test function with an analytic Laplacian.

    ``shape`` is ``"bump"`` (exp(-1/(1-r^2)) per coordinate) or
    ``"raised_cosine"`` ((1+cos(pi r))/2 per coordinate), r the scaled
    distance to ``center`` in each coordinate.
    """

    __test__ = False

    center: Tuple[float, ...] = (0.0,)
    radius: float = 1.0
    amplitude: float = 1.0
    shape: str = "bump"

    def _factors(self, x: np.ndarray):
        r = (x - np.asarray(self.center)) / self.radius
        inside = np.abs(r) < 1.0
        rs = np.where(inside, r, 0.0)
        if self.shape == "bump":
            q = 1.0 - rs ** 2
            g = np.where(inside, np.exp(-1.0 / q), 0.0)
            # g' = g * (-2r/q^2), g'' = g * ((6r^4 - 2) / q^4)
            g2 = np.where(inside, g * (6.0 * rs ** 4 - 2.0) / q ** 4, 0.0)
        elif self.shape == "raised_cosine":
            g = np.where(inside, 0.5 * (1.0 + np.cos(np.pi * rs)), 0.0)
            g2 = np.where(inside, -0.5 * np.pi ** 2 * np.cos(np.pi * rs), 0.0)
        else:
            raise ConfigError(f"unknown test function shape {self.shape!r}", field="params.test_fn.shape")
        return g, g2 / self.radius ** 2

    def __call__(self, x: Any) -> np.ndarray:
        g, _ = self._factors(_as_points(x))
        return self.amplitude * np.prod(g, axis=-1)

    def laplacian(self, x: Any) -> np.ndarray:
        g, g2 = self._factors(_as_points(x))
        d = g.shape[-1]
        total = np.zeros(g.shape[:-1])
        for j in range(d):
            others = np.prod(np.delete(g, j, axis=-1), axis=-1) if d > 1 else 1.0
            total = total + g2[..., j] * others
        return self.amplitude * total

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


# ---------------------------------------------------------
# 추정 결과
# ---------------------------------------------------------
@dataclass
class EstimatorResult:
    value: float
    std_error: float
    n_samples: int
    seed: int
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def clip_count(self) -> int:
        return int(self.meta.get("clip_count", 0))

    def within(self, target: float, k: float = 3.0, extra: float = 0.0) -> bool:
        return abs(self.value - target) <= k * math.hypot(self.std_error, extra) + 1e-15

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EstimatorResult":
        return cls(float(data["value"]), float(data["std_error"]), int(data["n_samples"]), int(data["seed"]), dict(data.get("meta", {})))


def combined_stderr(*results: EstimatorResult) -> float:
    return math.sqrt(sum(r.std_error ** 2 for r in results))
