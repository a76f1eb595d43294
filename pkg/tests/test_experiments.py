import pytest

from fkheat.experiments import agreement_verdict, ladder_verdicts
from fkheat.feynman_kac import LadderRung
from fkheat.model import EstimatorResult

TARGET = EstimatorResult(2.0, 0.01, 1000, 1)


def _rungs(oracle_values, sheet_values, se=0.01):
    deltas = (0.1, 0.05, 0.025)
    return [
        LadderRung(delta, delta / 2.0, EstimatorResult(sheet, se, 32, 1), EstimatorResult(oracle, se, 1000, 1))
        for delta, oracle, sheet in zip(deltas, oracle_values, sheet_values)
    ]


def _by_name(verdicts):
    return {v.name: v for v in verdicts}


def test_agreement_verdict_margin():
    v = agreement_verdict("x", 1.05, 1.0, 0.1)
    assert v.passed
    assert v.margin == pytest.approx(0.5)
    assert not agreement_verdict("x", 1.0, 0.0, 0.0).passed


def test_ladder_judges_oracle_and_sheet_trends():
    verdicts = _by_name(ladder_verdicts("c4", _rungs([1.6, 1.85, 1.99], [1.61, 1.86, 1.98]), TARGET))
    assert set(verdicts) == {
        "c4:rung_delta=0.1",
        "c4:rung_delta=0.05",
        "c4:rung_delta=0.025",
        "c4:monotone_gap",
        "c4:final_gap",
        "c4:sheet:monotone_gap",
        "c4:sheet:final_gap",
    }
    assert all(v.passed for v in verdicts.values())
    assert verdicts["c4:sheet:final_gap"].detail["delta"] == 0.025


def test_sheet_trend_fails_on_its_own():
    # the oracle converges while the sheet estimates drift away from the target
    verdicts = _by_name(ladder_verdicts("c4", _rungs([1.6, 1.85, 1.99], [1.99, 1.85, 1.6], se=0.05), TARGET))
    assert verdicts["c4:monotone_gap"].passed
    assert not verdicts["c4:sheet:monotone_gap"].passed
    assert verdicts["c4:sheet:monotone_gap"].detail["gaps"] == pytest.approx([0.01, 0.15, 0.4])
