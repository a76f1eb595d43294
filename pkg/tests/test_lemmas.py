import math

import numpy as np
import pytest

from fkheat.kernels_quadrature import abs_moment
from fkheat.lemmas import (
    LemmaCheck,
    LemmaSuiteReport,
    box_window,
    c_alpha,
    check_c_alpha,
    check_mollifier_domination,
    check_moment_series,
    check_negative_moment,
    increment_pair_moment,
    lemma_bound_suite,
    moment_series_terms,
    neg_moment,
    neg_moment_bound,
    series_ratio_index,
)


def test_neg_moment_at_zero_shift():
    assert float(neg_moment(0.0, 0.5, 0.4)) == pytest.approx(0.5 ** -0.4 * abs_moment(-0.4), rel=1e-12)
    assert float(neg_moment_bound(0.0, 0.5, 0.4)) == pytest.approx(0.5 ** -0.4)
    assert float(neg_moment_bound(4.0, 0.5, 0.4)) == pytest.approx(4.0 ** -0.4)


def test_c_alpha():
    assert float(c_alpha(0.0, 0.4)) == 0.0
    vals = c_alpha(np.array([0.1, 1.0, 10.0]), 0.4)
    assert np.all(vals > 0.0)
    assert np.all(np.diff(vals) > 0.0)


def test_box_window():
    np.testing.assert_array_equal(box_window(0.5, [-0.1, 0.0, 0.25, 0.5, 0.6]), [0.0, 2.0, 2.0, 2.0, 0.0])


def test_increment_pair_moment_is_homogeneous():
    base = increment_pair_moment(0.2, 0.7, 0.8)
    scaled = increment_pair_moment(0.6, 2.1, 0.8)
    assert scaled == pytest.approx(3.0 ** (2.0 * 0.8 - 2.0) * base, rel=1e-6)


def test_series_ratio_index():
    assert series_ratio_index(np.array([1.0, 0.5, 0.25])) == 1
    assert series_ratio_index(np.array([1.0, 2.0, 3.0, 2.0, 1.0])) == 3
    assert series_ratio_index(np.array([1.0, 2.0, 3.0])) is None


def test_moment_series_terms_decay():
    terms = moment_series_terms(-0.5, 1.0)
    assert terms.size == 200
    assert terms[-1] / terms.sum() < 1e-12


# ---------------------------------------------------------
# 개별 부등식 점검
# ---------------------------------------------------------
@pytest.mark.parametrize("check", [
    lambda rs: check_negative_moment(0.4, rs, 40),
    lambda rs: check_c_alpha(0.4, rs, 40),
    lambda rs: check_mollifier_domination(rs, 40),
    lambda rs: check_moment_series(-0.5),
])
def test_single_checks_pass(check, stream):
    result = check(stream)
    assert result.passed, result.to_dict()


def test_negative_moment_check_reports_constant(stream):
    result = check_negative_moment(0.4, stream, 40)
    assert result.name == "a_negative_moment"
    assert result.meta["x0_ok"]
    assert math.isfinite(result.constant)
    assert result.margin >= 0.0


def test_report_lookup():
    report = LemmaSuiteReport([LemmaCheck("x", True), LemmaCheck("y", False)])
    assert not report.passed
    assert report["y"].passed is False
    with pytest.raises(KeyError):
        report["z"]


@pytest.mark.slow
def test_full_suite_passes(stream):
    report = lemma_bound_suite(stream=stream, n_test=50)
    assert [c.name for c in report.checks] == [
        "a_negative_moment",
        "b_c_alpha",
        "c_mollifier_domination",
        "d_increment_pair",
        "e_moment_series",
        "mollified_pair",
    ]
    assert report.passed, report.to_dict()
