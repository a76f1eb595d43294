import numpy as np
import pytest

from fkheat.errors import DomainError
from fkheat.regularity import (
    MIN_LAGS,
    Axis,
    d1_exponent_study,
    dyadic_lags,
    exponent_study,
    fit_power_law,
    local_slopes,
)

LAGS = dyadic_lags(0.5, 6)


# ---------------------------------------------------------
# 로그-로그 회귀
# ---------------------------------------------------------
def test_dyadic_lags():
    np.testing.assert_allclose(dyadic_lags(1.0, 4), [0.125, 0.25, 0.5, 1.0])
    with pytest.raises(DomainError):
        dyadic_lags(1.0, 0)
    with pytest.raises(DomainError):
        dyadic_lags(-1.0, 3)


def test_fit_recovers_a_power_law():
    values = 3.0 * LAGS ** 0.7
    fit = fit_power_law(LAGS, values)
    assert fit.slope == pytest.approx(0.7)
    assert fit.intercept == pytest.approx(np.log10(3.0))
    assert fit.ci[0] <= fit.slope <= fit.ci[1]
    assert not fit.weighted
    np.testing.assert_allclose(local_slopes(LAGS, values), 0.7)


def test_weighted_fit():
    rng = np.random.default_rng(3)
    values = 2.0 * LAGS ** 0.4 * (1.0 + 0.01 * rng.standard_normal(LAGS.size))
    fit = fit_power_law(LAGS, values, 0.01 * values)
    assert fit.weighted
    assert fit.slope == pytest.approx(0.4, abs=0.05)
    assert fit.slope_stderr > 0.0


def test_short_fits_have_no_interval():
    fit = fit_power_law(LAGS[:MIN_LAGS - 1], LAGS[:MIN_LAGS - 1] ** 2)
    assert fit.slope == pytest.approx(2.0)
    assert np.isnan(fit.slope_stderr)


@pytest.mark.parametrize("lags, values", [([1.0], [1.0]), ([0.0, 1.0], [1.0, 2.0]), ([1.0, 2.0], [0.0, 1.0])])
def test_fit_rejects_bad_points(lags, values):
    with pytest.raises(DomainError):
        fit_power_law(lags, values)


# ---------------------------------------------------------
# 지수 연구
# ---------------------------------------------------------
def test_study_needs_enough_lags(spec_a, stream):
    with pytest.raises(DomainError):
        exponent_study(spec_a, Axis.SPACE, (1.0, [0.0]), [0.0, 0.1, 0.2, 0.4], 8, stream=stream, method="expectation")
    with pytest.raises(DomainError):
        exponent_study(spec_a, "time", (0.5, [0.0]), LAGS * 2.0, 8, stream=stream, method="expectation")
    with pytest.raises(DomainError):
        exponent_study(spec_a, Axis.SPACE, (1.0, [0.0]), LAGS, 8, stream=stream, method="bootstrap")
    with pytest.raises(DomainError):
        exponent_study(spec_a, Axis.SPACE, (1.0, [0.0]), LAGS, 8, stream=stream, component=1)


def test_d1_space_study_hits_its_target():
    study = d1_exponent_study(0.8, Axis.SPACE, 1.0, 0.0, [0.0] + [2.0 ** -k for k in range(3, 8)])
    assert study.target == pytest.approx(0.2)
    assert study.meta["dropped_zero_lags"] == 1
    assert study.in_window
    assert study.monotone


def test_d1_time_study_is_increasing():
    study = d1_exponent_study(0.8, "time", 1.0, 0.0, [2.0 ** -k for k in range(2, 7)])
    assert study.target == pytest.approx(0.1)
    assert study.slope > 0.0
    assert study.to_dict()["axis"] == "time"


@pytest.mark.slow
def test_space_exponent_from_expectations(spec_a, stream):
    lags = [2.0 ** -k for k in range(3, 8)]
    study = exponent_study(spec_a, Axis.SPACE, (1.0, [0.0]), lags, 0, stream=stream, method="expectation")
    assert study.target == pytest.approx(0.6)
    assert study.in_window
    assert study.bound_consistent


@pytest.mark.slow
def test_time_exponent_from_expectations(spec_a, stream):
    lags = [2.0 ** -k for k in range(2, 7)]
    study = exponent_study(spec_a, Axis.TIME, (1.0, [0.0]), lags, 0, stream=stream, method="expectation")
    assert study.target == pytest.approx(0.3)
    assert study.bound_consistent
