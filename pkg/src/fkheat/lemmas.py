"""Checkable auxiliary inequalities behind the moment and regularity bounds.

Each bound asserts that some constant exists. The suite fits the
constant on a deterministic training sweep, inflates it by 20% and
verifies it on a fresh random sweep drawn from a named stream.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import FkheatError, QuadratureError
from .kernels_quadrature import MollifiedKernel, abs_moment, h_inner_product, heat_kernel, noncentral_abs_moment
from .log import handle_log
from .model import HurstSpec, Regime, require_admissible
from .rng import RngStream

logger = logging.getLogger(__name__)

INFLATION = 1.2
GAUSS_CUTOFF = 12.0
SERIES_TERMS = 200
SERIES_REL_TOL = 1e-12


@dataclass
class LemmaCheck:
    name: str
    passed: bool
    constant: float = math.nan
    max_test_ratio: float = math.nan
    margin: float = math.nan
    n_train: int = 0
    n_test: int = 0
    meta: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "constant": self.constant,
            "max_test_ratio": self.max_test_ratio,
            "margin": self.margin,
            "n_train": self.n_train,
            "n_test": self.n_test,
            "meta": dict(self.meta),
        }


@dataclass
class LemmaSuiteReport:
    checks: List[LemmaCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> LemmaCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


# ---------------------------------------------------------
# [로직 1] 보조 함수
# ---------------------------------------------------------
def neg_moment(x: Any, eps: Any, alpha: float) -> np.ndarray:
    """E|x + eps X|^-alpha."""
    return noncentral_abs_moment(-alpha, x, eps)


def neg_moment_bound(x: Any, eps: Any, alpha: float) -> np.ndarray:
    """min(eps^-alpha, x^-alpha); x = 0 leaves the eps branch."""
    x = np.abs(np.asarray(x, dtype=float))
    eps = np.asarray(eps, dtype=float)
    with np.errstate(divide="ignore"):
        return np.minimum(eps ** -alpha, np.where(x > 0.0, x, np.inf) ** -alpha)


def c_alpha(y: Any, alpha: float) -> np.ndarray:
    """C_alpha(y) = E(|xi|^-alpha - |y + xi|^-alpha); exactly 0 at y = 0."""
    y = np.asarray(y, dtype=float)
    vals = abs_moment(-alpha) - noncentral_abs_moment(-alpha, y, 1.0)
    return np.where(y == 0.0, 0.0, vals)


def c_alpha_bound(y: Any, alpha: float) -> np.ndarray:
    y = np.abs(np.asarray(y, dtype=float))
    return np.minimum(1.0, y ** 2 + y ** (3.0 - alpha))


def box_window(width: float, x: Any) -> np.ndarray:
    """indicator[0, width] / width."""
    x = np.asarray(x, dtype=float)
    return np.where((x >= 0.0) & (x <= width), 1.0 / width, 0.0)


def increment_pair_moment(r: float, s: float, hurst: float) -> float:
    """E(|B_r|^(2H-2) |B_s|^(2H-2)) for 0 < r < s.

    Conditioning on B_r leaves a noncentral moment in B_s - B_r; the outer
    integral carries the |B_r|^(2H-2) singularity as an algebraic weight.
    """
    g = 2.0 * hurst - 2.0
    sd = math.sqrt(s - r)
    root_r = math.sqrt(r)

    def integrand(u: float) -> float:
        return math.exp(-0.5 * u * u) * float(noncentral_abs_moment(g, root_r * u, sd))

    val, err = integrate.quad(integrand, 0.0, GAUSS_CUTOFF, weight="alg", wvar=(g, 0.0), limit=200)
    if not math.isfinite(val) or err > 1e-8 * max(abs(val), 1.0):
        raise QuadratureError(f"increment pair moment did not converge (err={err:.3g})", operation="increment_pair_moment")
    return 2.0 * r ** (g / 2.0) * val / math.sqrt(2.0 * math.pi)


def moment_series_terms(alpha: float, lam: float, c: float = 1.0, n_max: int = SERIES_TERMS) -> np.ndarray:
    """(c lam)^n Gamma(alpha/2+1)^n / ((n + n alpha/2) Gamma(n + n alpha/2)) for n = 1..n_max, alpha > -2."""
    n = np.arange(1, n_max + 1, dtype=float)
    m = n * (1.0 + alpha / 2.0)
    logs = n * math.log(c * lam) + n * float(gammaln(alpha / 2.0 + 1.0)) - np.log(m) - gammaln(m)
    return np.exp(logs)


def series_ratio_index(terms: np.ndarray) -> Optional[int]:
    """First 1-based n from which every successive-term ratio stays below 1, or None."""
    ratios = terms[1:] / terms[:-1]
    above = np.nonzero(ratios >= 1.0)[0]
    if above.size == 0:
        return 1
    n0 = int(above[-1]) + 2
    return n0 if n0 < terms.size else None


# ---------------------------------------------------------
# [로직 2] 상수 맞추기 / 검증
# ---------------------------------------------------------
def _fit_and_verify(name: str, train: np.ndarray, test: np.ndarray, meta: Dict[str, Any]) -> LemmaCheck:
    if not (np.all(np.isfinite(train)) and np.all(np.isfinite(test))):
        return LemmaCheck(name, False, n_train=train.size, n_test=test.size, meta=dict(meta, reason="non-finite ratio"))
    constant = INFLATION * float(np.max(train))
    worst = float(np.max(test))
    margin = 1.0 - worst / constant
    return LemmaCheck(name, margin >= 0.0, constant, worst, margin, int(train.size), int(test.size), meta)


def _log_uniform(gen: np.random.Generator, lo: float, hi: float, size: int) -> np.ndarray:
    return 10.0 ** gen.uniform(lo, hi, size=size)


def check_negative_moment(alpha: float, stream: RngStream, n_test: int = 100) -> LemmaCheck:
    # the ratio depends on x / eps only
    u = np.logspace(-5.0, 5.0, 201)
    train = neg_moment(u, 1.0, alpha) / neg_moment_bound(u, 1.0, alpha)
    gen = stream.sub("lemma_a").generator()
    x = _log_uniform(gen, -3.0, 1.0, n_test)
    eps = _log_uniform(gen, -3.0, 1.0, n_test)
    test = neg_moment(x, eps, alpha) / neg_moment_bound(x, eps, alpha)
    at_zero = float(neg_moment(0.0, 0.5, alpha))
    exact = 0.5 ** -alpha * abs_moment(-alpha)
    meta = {"alpha": alpha, "x0_value": at_zero, "x0_exact": exact, "x0_ok": math.isclose(at_zero, exact, rel_tol=1e-12)}
    check = _fit_and_verify("a_negative_moment", train, test, meta)
    check.passed = check.passed and meta["x0_ok"]
    return check


def check_c_alpha(alpha: float, stream: RngStream, n_test: int = 100) -> LemmaCheck:
    y = np.logspace(-3.0, 2.0, 101)
    train = c_alpha(y, alpha) / c_alpha_bound(y, alpha)
    gen = stream.sub("lemma_b").generator()
    yt = _log_uniform(gen, -3.0, 2.0, n_test)
    test = c_alpha(yt, alpha) / c_alpha_bound(yt, alpha)
    zero = float(c_alpha(0.0, alpha))
    meta = {"alpha": alpha, "c_alpha_zero": zero}
    check = _fit_and_verify("b_c_alpha", train, test, meta)
    check.passed = check.passed and zero == 0.0
    return check


def check_mollifier_domination(stream: RngStream, n_test: int = 100) -> LemmaCheck:
    """p_delta(x) >= (2 pi e)^-1/2 phi_sqrt(delta)(x); the constant is 1, no fit."""
    gen = stream.sub("lemma_c").generator()
    delta = _log_uniform(gen, -4.0, 0.0, n_test)
    x = gen.uniform(0.0, 1.5, size=n_test) * np.sqrt(delta)
    lhs = np.array([float(heat_kernel(d, np.array([v]))) for d, v in zip(delta, x)])
    rhs = np.array([float(box_window(math.sqrt(d), v)) for d, v in zip(delta, x)]) / math.sqrt(2.0 * math.pi * math.e)
    slack = lhs - rhs * (1.0 - 1e-12)
    worst = float(np.min(slack / np.where(rhs > 0.0, rhs, lhs)))
    return LemmaCheck("c_mollifier_domination", worst >= 0.0, 1.0, float(np.max(rhs / lhs)), worst, 0, n_test, {})


def check_increment_pair(hurst: float, stream: RngStream, n_test: int = 100) -> LemmaCheck:
    # homogeneous of degree 2H - 2, so the ratio depends on r / s only
    rho = np.concatenate([np.logspace(-4.0, -1.0, 31), np.linspace(0.1, 0.999, 60)])
    h1 = hurst - 1.0

    def ratio(r: float, s: float) -> float:
        return increment_pair_moment(r, s, hurst) / (r ** h1 * (s - r) ** h1)

    train = np.array([ratio(p, 1.0) for p in rho])
    gen = stream.sub("lemma_d").generator()
    s = gen.uniform(0.05, 2.0, size=n_test)
    r = s * _log_uniform(gen, -4.0, math.log10(0.999), n_test)
    test = np.array([ratio(a, b) for a, b in zip(r, s)])
    return _fit_and_verify("d_increment_pair", train, test, {"hurst": hurst})


def check_moment_series(alpha: float, lam: float = 1.0, c: float = 1.0) -> LemmaCheck:
    terms = moment_series_terms(alpha, lam, c)
    partial = np.cumsum(terms)
    n0 = series_ratio_index(terms)
    rel_last = float(terms[-1] / partial[-1])
    passed = n0 is not None and rel_last < SERIES_REL_TOL
    meta = {"alpha": alpha, "lambda": lam, "c": c, "n0": n0, "sum": float(partial[-1]), "last_relative_term": rel_last}
    return LemmaCheck("e_moment_series", passed, c, math.nan, SERIES_REL_TOL - rel_last, 0, terms.size, meta)


def _mollified_pair_ratio(spec: HurstSpec, gen: np.random.Generator, n: int) -> np.ndarray:
    out = np.empty(n)
    for k in range(n):
        s1 = gen.uniform(0.4, 1.0)
        gap_t = 10.0 ** gen.uniform(-2.0, -0.5)
        delta = gap_t * 10.0 ** gen.uniform(-2.0, 0.5)
        delta2 = delta * 10.0 ** gen.uniform(-0.3, 0.3)
        x1 = gen.uniform(-1.0, 1.0, size=spec.d)
        gap_x = 10.0 ** gen.uniform(-2.0, 0.0, size=spec.d)
        eps = (float(np.min(gap_x)) * 10.0 ** gen.uniform(-2.0, 0.5)) ** 2
        eps2 = eps * 10.0 ** gen.uniform(-0.3, 0.3)
        a = MollifiedKernel(s1, tuple(x1), eps, delta)
        b = MollifiedKernel(s1 - gap_t, tuple(x1 + gap_x), eps2, delta2)
        bound = gap_t ** spec.gamma0 * float(np.prod(gap_x ** spec.space_exponents))
        out[k] = h_inner_product(a, b, spec) / bound
    return out


def check_mollified_pair(spec: HurstSpec, stream: RngStream, n_train: int = 400, n_test: int = 100) -> LemmaCheck:
    """<phi_delta p_eps, phi_delta' p_eps'>_H <= C |s1-s2|^(2H0-2) prod |x1i-x2i|^(2Hi-2) uniformly in the widths."""
    train = _mollified_pair_ratio(spec, stream.sub("lemma_h_train").generator(), n_train)
    test = _mollified_pair_ratio(spec, stream.sub("lemma_h_test").generator(), n_test)
    return _fit_and_verify("mollified_pair", train, test, {"spec": spec.to_dict()})


# ---------------------------------------------------------
# [로직 3] 전체 묶음
# ---------------------------------------------------------
def lemma_bound_suite(
    *,
    stream: RngStream,
    alpha: float = 0.4,
    hurst: float = 0.8,
    series_alpha: float = -0.5,
    spec: Optional[HurstSpec] = None,
    n_test: int = 100,
) -> LemmaSuiteReport:
    """Fit-then-verify every bound; a failing item records its diagnostics instead of aborting the suite."""
    spec = spec or HurstSpec(1, 0.7, (0.9,), Regime.REGULAR)
    require_admissible(spec, Regime.REGULAR, operation="lemma_bound_suite")
    jobs: Sequence[tuple] = (
        ("a_negative_moment", lambda: check_negative_moment(alpha, stream, n_test)),
        ("b_c_alpha", lambda: check_c_alpha(alpha, stream, n_test)),
        ("c_mollifier_domination", lambda: check_mollifier_domination(stream, n_test)),
        ("d_increment_pair", lambda: check_increment_pair(hurst, stream, n_test)),
        ("e_moment_series", lambda: check_moment_series(series_alpha)),
        ("mollified_pair", lambda: check_mollified_pair(spec, stream, n_test=n_test)),
    )
    checks: List[LemmaCheck] = []
    for name, job in jobs:
        try:
            check = job()
        except FkheatError as exc:
            check = LemmaCheck(name, False, meta={"error": str(exc)})
        checks.append(check)
        handle_log(logger, f"{name}: {'pass' if check.passed else 'FAIL'} (margin {check.margin:.3g})", "INFO" if check.passed else "WARNING")
    return LemmaSuiteReport(checks)
