import math

import numpy as np
import pytest
from scipy import integrate

from fkheat.chaos import (
    MAX_NORM_ORDER,
    chaos_norm_sq,
    chaos_series,
    eval_f_n,
    eval_h_n_stratonovich,
)
from fkheat.errors import DomainError
from fkheat.feynman_kac import MomentKind, moment_p
from fkheat.kernels_quadrature import heat_kernel
from fkheat.model import Constant, GaussianBump
from fkheat.rng import RngStream

BUMP = GaussianBump((0.0,), 0.5)


# ---------------------------------------------------------
# 커널 f_n
# ---------------------------------------------------------
def test_f0_is_the_heat_flow():
    assert eval_f_n(0, [], [], 0.5, [0.2], BUMP) == pytest.approx(float(BUMP.semigroup(0.5, np.array([0.2]))))


def test_f1_integrates_back_to_the_heat_flow():
    # Chapman-Kolmogorov in the point variable
    t, x, s = 0.5, 0.2, 0.2
    val, _ = integrate.quad(lambda y: eval_f_n(1, [s], [y], t, [x], BUMP), -np.inf, np.inf)
    assert val == pytest.approx(float(BUMP.semigroup(t, np.array([x]))), rel=1e-8)


def test_f2_is_symmetric_and_carries_the_factorial():
    t, x = 1.0, [0.1]
    a = eval_f_n(2, [0.3, 0.6], [[0.5], [-0.2]], t, x, Constant(1.0))
    b = eval_f_n(2, [0.6, 0.3], [[-0.2], [0.5]], t, x, Constant(1.0))
    assert a == b
    chain = float(heat_kernel(0.4, np.array([0.1 + 0.2]))) * float(heat_kernel(0.3, np.array([-0.2 - 0.5])))
    assert a == pytest.approx(chain / 2.0)


@pytest.mark.parametrize("times", [[0.0, 0.5], [0.5, 1.0], [0.4, 0.4]])
def test_f_n_rejects_bad_times(times):
    with pytest.raises(DomainError):
        eval_f_n(2, times, [[0.0], [0.0]], 1.0, [0.0], Constant(1.0))


# ---------------------------------------------------------
# 카오스 노름
# ---------------------------------------------------------
def test_chaos_series_terms(spec_a, stream):
    series = chaos_series(2, spec_a, Constant(1.0), 0.25, [0.0], 32, stream=stream, grid_n=16)
    assert series.terms[0].value == 1.0
    assert series.terms[1].value > 0.0
    assert np.all(np.diff(series.partial_sums) > 0.0)
    assert series.tail.value > -1e-12


def test_chaos_order_limit(spec_a, stream):
    with pytest.raises(DomainError):
        chaos_series(MAX_NORM_ORDER + 1, spec_a, Constant(1.0), 0.25, [0.0], 8, stream=stream)
    with pytest.raises(DomainError):
        chaos_norm_sq(-1, spec_a, Constant(1.0), 0.25, [0.0], 8, stream=stream)


def test_direct_norm_of_order_zero_is_exact(spec_a, stream):
    est = chaos_norm_sq(0, spec_a, BUMP, 0.25, [0.1], 10, stream=stream, method="direct")
    assert est.meta["exact"] is True
    assert est.value == pytest.approx(float(BUMP.semigroup(0.25, np.array([0.1]))) ** 2)
    with pytest.raises(DomainError):
        chaos_norm_sq(1, spec_a, BUMP, 0.25, [0.1], 10, stream=stream, method="spectral")


def test_direct_norm_reports_sample_quality(spec_a, stream):
    est = chaos_norm_sq(1, spec_a, Constant(1.0), 0.25, [0.0], 64, stream=stream, method="direct")
    assert est.value > 0.0
    assert est.meta["method"] == "direct"
    assert 0.0 < est.meta["ess"] <= 64.0


@pytest.mark.slow
def test_chaos_terms_add_up_to_the_second_moment(spec_a):
    stream = RngStream(61, "chaos_sum")
    series = chaos_series(3, spec_a, BUMP, 0.25, [0.0], 3000, stream=stream, grid_n=16)
    whole = series.partial_sums[-1] + series.tail.value
    skor = moment_p(spec_a, BUMP, 0.25, [0.0], 2, MomentKind.SKOROKHOD, 3000, stream=stream, grid_n=16)
    parts = sum(term.std_error for term in series.terms) + series.tail.std_error
    spread = math.hypot(skor.std_error, parts)
    assert abs(whole - skor.value) <= 4.0 * spread + 0.01 * skor.value


# ---------------------------------------------------------
# Stratonovich 계수 h_n
# ---------------------------------------------------------
def test_h0_without_exponential_is_exact(spec_a, stream):
    est = eval_h_n_stratonovich(0, [], [], 0.5, [0.2], BUMP, spec_a, 10, stream=stream, exponential=False)
    assert est.value == pytest.approx(float(BUMP.semigroup(0.5, np.array([0.2]))))
    assert est.std_error == 0.0


@pytest.mark.parametrize("n, times, points", [(1, [0.4], [[0.3]]), (2, [0.3, 0.6], [[0.5], [-0.2]])])
def test_pinned_coefficients_without_noise_match_f_n(spec_a, stream, n, times, points):
    est = eval_h_n_stratonovich(n, times, points, 1.0, [0.1], BUMP, spec_a, 2000, stream=stream, grid_n=16, exponential=False)
    target = math.factorial(n) * eval_f_n(n, times, points, 1.0, [0.1], BUMP)
    assert est.within(target, k=4.0)


def test_exponential_weights_raise_the_coefficient(spec_a, stream):
    kw = dict(stream=stream, grid_n=16)
    plain = eval_h_n_stratonovich(1, [0.4], [[0.3]], 1.0, [0.1], BUMP, spec_a, 16, exponential=False, **kw)
    weighted = eval_h_n_stratonovich(1, [0.4], [[0.3]], 1.0, [0.1], BUMP, spec_a, 16, **kw)
    # same pinned paths, weights exp(alpha_H S / 2) > 1
    assert weighted.value > plain.value


def test_pinned_order_limit(spec_a, stream):
    with pytest.raises(DomainError):
        eval_h_n_stratonovich(3, [0.1, 0.2, 0.3], [[0.0]] * 3, 1.0, [0.0], BUMP, spec_a, 4, stream=stream)
    with pytest.raises(DomainError):
        eval_h_n_stratonovich(1, [1.0], [[0.0]], 1.0, [0.0], BUMP, spec_a, 4, stream=stream)
