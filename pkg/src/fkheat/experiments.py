"""Experiment runners: one function per experiment kind, each writing a run record.

``run_experiment`` opens the record, dispatches on the kind and closes
the record even when the run fails. The acceptance suite raises
``AcceptanceFailure`` after its record is written.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from .chaos import chaos_norm_sq, chaos_series
from .config import ARTIFACT_VERSION, ExperimentConfig, ExperimentKind
from .errors import AcceptanceFailure, FkheatError
from .feynman_kac import (
    LadderRung,
    MomentKind,
    convergence_ladder,
    exp_moment_V,
    legall_alpha0,
    legall_band_share,
    legall_block_mean,
    legall_decompose,
    legall_level_correlation,
    moment_p,
    regularized_sheet_nodes,
    weak_form_residual,
)
from .kernels_quadrature import expected_S, singular_double_integral_S
from .lemmas import lemma_bound_suite
from .log import handle_log
from .model import (
    Constant,
    EstimatorResult,
    GaussianBump,
    HurstSpec,
    InitialCondition,
    Regime,
    TestFunction,
    TimeGrid,
    combined_stderr,
    initial_condition_from_dict,
)
from .montecarlo import run_replicates, summarize
from .paths_fields import sample_bm, sample_sheet
from .regularity import Axis, ScalingStudy, d1_exponent_study, exponent_study
from .rng import RngStream
from .run_records import RunRecordStore, Verdict, format_float
from .special_d1 import (
    negative_moment_L,
    silt_block_scaling,
    silt_limit,
    silt_limit_by_quadrature,
    variance_v_d1,
)

logger = logging.getLogger(__name__)

# d=1 (H0=0.7, H=0.9) and d=2 (H0=0.9, H=(0.8, 0.8))
SPEC_A = HurstSpec(1, 0.7, (0.9,), Regime.REGULAR)
SPEC_B = HurstSpec(2, 0.9, (0.8, 0.8), Regime.REGULAR)

D1_H0 = 0.8
D1_REL_TOL = 0.02
LEGALL_PATHS = 50
LEGALL_LEVEL = 10
LEGALL_BLOCKS = 8
IDENTITY_TOL = 1e-2
BAND_SHARE_SLACK = 0.1


@dataclass
class RunContext:
    """Everything a runner needs; verdicts also land in ``verdicts`` for the caller."""

    config: ExperimentConfig
    store: RunRecordStore
    stream: RngStream
    workers: Optional[int] = None
    verdicts: List[Verdict] = field(default_factory=list)

    @property
    def spec(self) -> HurstSpec:
        return self.config.hurst

    @property
    def params(self) -> Dict[str, Any]:
        return self.config.params

    def record(self, name: str, params: Dict[str, Any], result: EstimatorResult, passed: Optional[bool] = None,
               target: Optional[float] = None) -> None:
        self.store.add_estimate(name, params, result, passed, target)

    def judge(self, verdict: Verdict) -> Verdict:
        self.store.add_verdict(verdict)
        self.verdicts.append(verdict)
        return verdict


# ---------------------------------------------------------
# 판정 헬퍼
# ---------------------------------------------------------
def agreement_verdict(name: str, value: float, target: float, tol: float, **detail: Any) -> Verdict:
    """Pass when |value - target| <= tol; margin is 1 - gap/tol."""
    gap = abs(value - target)
    if tol > 0.0:
        margin = 1.0 - gap / tol
    else:
        margin = 1.0 if gap == 0.0 else -math.inf
    return Verdict(name, gap <= tol, margin, dict(detail, value=value, target=target, tol=tol))


def bound_verdict(name: str, value: float, limit: float, **detail: Any) -> Verdict:
    """Pass when value <= limit; margin is the relative headroom."""
    scale = abs(limit) if limit != 0.0 else 1.0
    return Verdict(name, value <= limit, (limit - value) / scale, dict(detail, value=value, limit=limit))


def flag_verdict(name: str, passed: bool, **detail: Any) -> Verdict:
    return Verdict(name, bool(passed), 1.0 if passed else -1.0, detail)


def _trend_verdicts(name: str, results: Sequence[EstimatorResult], target: EstimatorResult, delta: float) -> List[Verdict]:
    """Gap to ``target`` nonincreasing along the ladder (within 2 combined stderr) and small at the last rung."""
    gaps = [abs(r.value - target.value) for r in results]
    ses = [combined_stderr(r, target) for r in results]
    worst = math.inf
    for i in range(len(results) - 1):
        slack = gaps[i] + 2.0 * math.hypot(ses[i], ses[i + 1]) - gaps[i + 1]
        worst = min(worst, slack / max(gaps[i], ses[i], 1e-300))
    return [
        Verdict(f"{name}:monotone_gap", worst >= 0.0, worst if math.isfinite(worst) else 1.0, {"gaps": gaps}),
        agreement_verdict(f"{name}:final_gap", results[-1].value, target.value, 3.0 * ses[-1], delta=delta),
    ]


def ladder_verdicts(name: str, rungs: Sequence[LadderRung], target: EstimatorResult) -> List[Verdict]:
    """Per-rung sheet vs oracle agreement, then the gap trend for the oracle and for the sheet estimates."""
    out = []
    for rung in rungs:
        tol = 3.0 * combined_stderr(rung.estimate, rung.oracle)
        out.append(agreement_verdict(f"{name}:rung_delta={rung.delta:g}", rung.estimate.value, rung.oracle.value, tol))
    last = rungs[-1].delta
    out.extend(_trend_verdicts(name, [r.oracle for r in rungs], target, last))
    out.extend(_trend_verdicts(f"{name}:sheet", [r.estimate for r in rungs], target, last))
    return out


def chaos_verdicts(name: str, series_by_t: Dict[float, Any], skorokhod_by_t: Dict[float, EstimatorResult]) -> List[Verdict]:
    """Partial sums nondecreasing and below the Skorokhod second moment; the tail grows with t."""
    out = []
    gaps = {}
    for t, series in series_by_t.items():
        partial = series.partial_sums
        steps = np.diff(partial)
        out.append(flag_verdict(f"{name}:nondecreasing:t={t:g}", bool(np.all(steps >= 0.0)), partial=partial.tolist()))
        skor = skorokhod_by_t[t]
        last_se = series.terms[-1].std_error
        limit = skor.value + 3.0 * math.hypot(skor.std_error, last_se)
        out.append(bound_verdict(f"{name}:below_skorokhod:t={t:g}", float(partial[-1]), limit))
        gaps[t] = skor.value - float(partial[-1])
    times = sorted(gaps)
    for small, large in zip(times, times[1:]):
        out.append(bound_verdict(f"{name}:tail_trend:{small:g}<{large:g}", gaps[small], gaps[large]))
    return out


def exponent_verdict(name: str, study: ScalingStudy) -> Verdict:
    lo, hi = study.window
    half = 0.5 * (hi - lo)
    centre = 0.5 * (hi + lo)
    return agreement_verdict(name, study.slope, centre, half, target=study.target, window=list(study.window),
                             ci=list(study.fit.ci), monotone=study.monotone)


def _record_study(ctx: RunContext, name: str, study: ScalingStudy) -> Verdict:
    for lag, est in zip(study.lags, study.estimates):
        ctx.record(name, {"axis": study.axis.value, "lag": float(lag), "component": study.component}, est)
    return ctx.judge(exponent_verdict(f"{name}:{study.axis.value}", study))


def _lambda_for_mu(spec: HurstSpec, mu: float, t: float) -> float:
    return math.sqrt(2.0 * mu / (spec.alpha_h * t ** (spec.kappa + 1.0)))


def self_integral_mean(spec: HurstSpec, t: float, mc: int, *, stream: RngStream, grid_n: int = 64,
                       workers: Optional[int] = None) -> EstimatorResult:
    """Monte Carlo E[S(B;t)] for paths started at the origin."""
    grid = TimeGrid.uniform(t, grid_n)
    origin = np.zeros(spec.d)

    def one(rs: RngStream) -> float:
        return singular_double_integral_S(sample_bm(grid, spec.d, origin, rs), spec, t).value

    base = stream.sub("self_integral_mean")
    return summarize(run_replicates(one, mc, base, workers=workers), base, meta={"t": t, "grid_n": grid_n},
                     operation="self_integral_mean")


# ---------------------------------------------------------
# [로직 1] 실험별 실행기
# ---------------------------------------------------------
def run_simulate_regularized(ctx: RunContext) -> None:
    p = ctx.params
    spec, t, x = ctx.spec, float(p["t"]), p["x"]
    f = initial_condition_from_dict(p["f"])
    rungs = convergence_ladder(spec, f, t, x, p["deltas"], p["n_sheets"], p["mc"], stream=ctx.stream.sub("ladder"),
                               oracle_mc=p["oracle_mc"], workers=ctx.workers)
    target = moment_p(spec, f, t, x, 2, MomentKind.STRATONOVICH, p["oracle_mc"], stream=ctx.stream.sub("target"),
                      workers=ctx.workers)
    ctx.record("moment_p", {"p": 2, "kind": "stratonovich", "t": t, "x": x}, target)
    for rung in rungs:
        params = {"delta": rung.delta, "eps": rung.eps, "t": t, "x": x}
        ctx.record("regularized_second_moment", params, rung.estimate, target=rung.oracle.value)
        ctx.record("mollified_moment_p", params, rung.oracle, target=target.value)
    for verdict in ladder_verdicts("ladder", rungs, target):
        ctx.judge(verdict)

    weak = p["weak_form"]
    if weak.get("enabled"):
        delta = float(p["deltas"][-1])
        eps = delta ** 2
        nodes, space = regularized_sheet_nodes(spec, t, x, eps, delta)
        sheet = sample_sheet(spec, nodes, space, ctx.stream.sub("weak_sheet"))
        test_fn = TestFunction(tuple(float(v) for v in x), float(weak["radius"]), 1.0, weak["shape"])
        residual = weak_form_residual(spec, f, t, eps, delta, sheet, test_fn, weak["mc"], stream=ctx.stream.sub("weak_form"),
                                      n_space=weak["n_space"], n_time=weak["n_time"], workers=ctx.workers)
        ctx.record("weak_form_residual", {"delta": delta, "eps": eps, "radius": weak["radius"], "shape": weak["shape"]},
                   residual, target=0.0)


def run_moments(ctx: RunContext) -> None:
    p = ctx.params
    spec, t = ctx.spec, float(p["t"])
    f = initial_condition_from_dict(p["f"])
    i = 0
    for point in p["points"]:
        for order in p["orders"]:
            for kind in p["kinds"]:
                est = moment_p(spec, f, t, point, int(order), MomentKind(kind), p["mc"], stream=ctx.stream.child(i),
                               grid_n=p["grid_n"], workers=ctx.workers, exp_cap=p["exp_cap"])
                params = {"t": t, "x": point, "p": order, "kind": kind}
                if order == 1 and kind == MomentKind.SKOROKHOD.value:
                    # the Skorokhod mean is the heat flow of f
                    target = float(f.semigroup(t, np.asarray(point, dtype=float)))
                    passed = est.within(target, 3.0)
                    ctx.record("moment_p", params, est, passed, target)
                    ctx.judge(agreement_verdict(f"skorokhod_mean:x={point}", est.value, target, 3.0 * est.std_error))
                else:
                    ctx.record("moment_p", params, est)
                i += 1


def run_chaos(ctx: RunContext) -> None:
    p = ctx.params
    spec, x = ctx.spec, p["x"]
    f = initial_condition_from_dict(p["f"])
    series_by_t, skor_by_t = {}, {}
    for i, t in enumerate(float(v) for v in p["t_values"]):
        stream = ctx.stream.child(i)
        series = chaos_series(p["order_max"], spec, f, t, x, p["mc"], stream=stream, grid_n=p["grid_n"], workers=ctx.workers)
        for n, term in enumerate(series.terms):
            ctx.record("chaos_norm_sq", {"t": t, "n": n, "method": "backbone"}, term)
        ctx.record("chaos_tail", {"t": t, "order_max": p["order_max"]}, series.tail)
        if p["method"] == "direct":
            for n in range(1, p["order_max"] + 1):
                direct = chaos_norm_sq(n, spec, f, t, x, p["mc"], stream=stream, method="direct", grid_n=p["grid_n"],
                                       workers=ctx.workers)
                ok = direct.within(series.terms[n].value, 3.0, series.terms[n].std_error)
                ctx.record("chaos_norm_sq", {"t": t, "n": n, "method": "direct"}, direct, ok, series.terms[n].value)
        skor = moment_p(spec, f, t, x, 2, MomentKind.SKOROKHOD, p["skorokhod_mc"], stream=stream, grid_n=p["grid_n"],
                        workers=ctx.workers)
        ctx.record("moment_p", {"t": t, "p": 2, "kind": "skorokhod"}, skor)
        series_by_t[t], skor_by_t[t] = series, skor
    for verdict in chaos_verdicts("chaos", series_by_t, skor_by_t):
        ctx.judge(verdict)


def run_exponents(ctx: RunContext) -> None:
    p = ctx.params
    base = (float(p["t"]), p["x"])
    for i, (axis, lags) in enumerate(((Axis.SPACE, p["space_lags"]), (Axis.TIME, p["time_lags"]))):
        study = exponent_study(ctx.spec, axis, base, lags, p["mc"], stream=ctx.stream.child(i), method=p["method"],
                               component=p["component"], grid_n=p["grid_n"], workers=ctx.workers)
        _record_study(ctx, "exponent", study)


def _equal_mu_pairs(ctx: RunContext, spec: HurstSpec, mu_levels: Sequence[float], times: Sequence[float], mc: int,
                    grid_n: int, exp_cap: float, name: str) -> None:
    for i, mu in enumerate(mu_levels):
        results = []
        for j, t in enumerate(times):
            lam = _lambda_for_mu(spec, mu, t)
            est = exp_moment_V(spec, lam, t, mc, stream=ctx.stream.sub(name).child(i).child(j), grid_n=grid_n,
                               workers=ctx.workers, exp_cap=exp_cap)
            ctx.record("exp_moment_V", {"mu": mu, "t": t, "lambda": lam}, est)
            results.append(est)
        ref = results[0]
        for t, est in zip(times[1:], results[1:]):
            tol = 3.0 * combined_stderr(ref, est)
            ctx.judge(agreement_verdict(f"{name}:mu={mu:g}:t={times[0]:g}~{t:g}", est.value, ref.value, tol,
                                        clip_count=ref.clip_count + est.clip_count))


def run_exp_moment(ctx: RunContext) -> None:
    p = ctx.params
    _equal_mu_pairs(ctx, ctx.spec, p["mu_levels"], p["times"], p["mc"], p["grid_n"], p["exp_cap"], "scaling")


def run_special_d1(ctx: RunContext) -> None:
    p = ctx.params
    h0, t, x = ctx.spec.h0, float(p["t"]), float(p["x"])
    result = variance_v_d1(h0, t, p["mc"], p["eps_ladder"], stream=ctx.stream.sub("variance"), grid_n=p["grid_n"],
                           workers=ctx.workers)
    target = float(result.meta["target"])
    for eps, mean, se, exact in zip(result.eps_ladder, result.rung_means, result.rung_stderr, result.rung_expectations):
        rung = EstimatorResult(mean, se, p["mc"], ctx.config.seed, {"eps": eps})
        ctx.record("variance_v_d1:rung", {"eps": eps}, rung, rung.within(exact, 3.0), exact)
    ctx.record("variance_v_d1", {"h0": h0, "t": t}, result.estimate, target=target)
    ctx.judge(agreement_verdict("variance_v_d1", result.estimate.value, target, D1_REL_TOL * target))

    quad = silt_limit_by_quadrature(h0, t)
    closed = silt_limit(h0, t)
    ctx.judge(agreement_verdict("silt_limit:quadrature", quad, closed, 1e-6 * abs(closed)))

    for k, power in enumerate(p["negative_p"]):
        est = negative_moment_L(t, power, p["mc"], p["eps_ladder"], stream=ctx.stream.sub("negative").child(k),
                                grid_n=p["grid_n"], workers=ctx.workers)
        ok = bool(est.meta["stable"]) and bool(est.meta["jensen_ok"])
        ctx.record("negative_moment_L", {"p": power, "t": t}, est, ok)
        ctx.judge(flag_verdict(f"negative_moment_L:p={power:g}", ok, stable=est.meta["stable"], jensen_ok=est.meta["jensen_ok"]))

    for axis, lags in ((Axis.SPACE, p["space_lags"]), (Axis.TIME, p["time_lags"])):
        _record_study(ctx, "d1_exponent", d1_exponent_study(h0, axis, t, x, lags))

    if p["block_levels"]:
        blocks = silt_block_scaling(p["block_levels"], p["block_eps0"], p["mc"], stream=ctx.stream.sub("blocks"),
                                    cells=p["block_cells"], workers=ctx.workers)
        for n, est, exact in blocks:
            passed = est.within(exact, 3.0)
            ctx.record("silt_block_scaling", {"n": n}, est, passed, exact)
            ctx.judge(agreement_verdict(f"silt_block_scaling:n={n}", est.value, exact, 3.0 * est.std_error))


def run_lemma_suite(ctx: RunContext) -> None:
    p = ctx.params
    report = lemma_bound_suite(stream=ctx.stream, alpha=p["alpha"], hurst=p["hurst_index"], series_alpha=p["series_alpha"],
                               spec=ctx.spec, n_test=p["n_test"])
    _judge_lemmas(ctx, report)


def _judge_lemmas(ctx: RunContext, report: Any, prefix: str = "lemma") -> None:
    for check in report.checks:
        detail = check.to_dict()
        detail.pop("name", None)
        ctx.judge(Verdict(f"{prefix}:{check.name}", check.passed, check.margin, detail))


# ---------------------------------------------------------
# [로직 2] 수용 기준
# ---------------------------------------------------------
def _budget(n: int, scale: float, floor: int = 8) -> int:
    return max(floor, int(round(n * scale)))


def criterion_expected_s(ctx: RunContext, scale: float) -> None:
    """E[S(B;1)] by Monte Carlo against the Gamma-function formula."""
    mc = _budget(10000, scale)
    for i, (label, spec) in enumerate((("A", SPEC_A), ("B", SPEC_B))):
        est = self_integral_mean(spec, 1.0, mc, stream=ctx.stream.sub("c1").child(i), grid_n=64, workers=ctx.workers)
        exact = expected_S(spec, 1.0)
        ctx.record("self_integral_mean", {"spec": label, "t": 1.0}, est, est.within(exact, 3.0), exact)
        ctx.judge(agreement_verdict(f"c1_expected_S:{label}", est.value, exact, 3.0 * est.std_error))


def criterion_scaling(ctx: RunContext, scale: float) -> None:
    _equal_mu_pairs(ctx, SPEC_A, [0.05, 0.2], [1.0, 0.25], _budget(10000, scale), 64, 700.0, "c2_scaling")


def criterion_skorokhod_mean(ctx: RunContext, scale: float) -> None:
    f = GaussianBump((0.0,), 0.5)
    mc = _budget(20000, scale)
    for i, (t, x) in enumerate(((0.1, 0.0), (0.25, 0.3), (0.5, -0.4))):
        est = moment_p(SPEC_A, f, t, [x], 1, MomentKind.SKOROKHOD, mc, stream=ctx.stream.sub("c3").child(i), grid_n=16,
                       workers=ctx.workers)
        target = float(f.semigroup(t, np.array([x])))
        ctx.record("moment_p", {"t": t, "x": [x], "p": 1, "kind": "skorokhod"}, est, est.within(target, 3.0), target)
        ctx.judge(agreement_verdict(f"c3_skorokhod_mean:t={t:g}", est.value, target, 3.0 * est.std_error))


def criterion_ladder(ctx: RunContext, scale: float) -> None:
    f: InitialCondition = Constant(1.0)
    t, x = 0.25, [0.0]
    stream = ctx.stream.sub("c4")
    rungs = convergence_ladder(SPEC_A, f, t, x, [0.2, 0.1, 0.05], _budget(32, scale, 4), 128, stream=stream.sub("ladder"),
                               oracle_mc=_budget(4000, scale), workers=ctx.workers)
    target = moment_p(SPEC_A, f, t, x, 2, MomentKind.STRATONOVICH, _budget(10000, scale), stream=stream.sub("target"),
                      workers=ctx.workers)
    ctx.record("moment_p", {"t": t, "p": 2, "kind": "stratonovich"}, target)
    for rung in rungs:
        ctx.record("regularized_second_moment", {"delta": rung.delta, "eps": rung.eps}, rung.estimate, target=rung.oracle.value)
        ctx.record("mollified_moment_p", {"delta": rung.delta, "eps": rung.eps}, rung.oracle, target=target.value)
    for verdict in ladder_verdicts("c4_ladder", rungs, target):
        ctx.judge(verdict)


def criterion_legall(ctx: RunContext, scale: float) -> None:
    stream = ctx.stream.sub("c5")
    grid = TimeGrid.dyadic(1.0, LEGALL_LEVEL)
    blocks = [
        legall_decompose(sample_bm(grid, 1, 0.0, stream.sub("paths").child(i)), SPEC_A, LEGALL_BLOCKS)
        for i in range(LEGALL_PATHS)
    ]
    worst_gap = max(b.identity_gap() for b in blocks)
    ctx.judge(bound_verdict("c5_legall:identity", worst_gap, IDENTITY_TOL, paths=LEGALL_PATHS, level_max=LEGALL_BLOCKS))
    share, share_se = legall_band_share(blocks)
    expected = 2.0 ** (-LEGALL_BLOCKS * SPEC_A.kappa)
    ctx.judge(agreement_verdict("c5_legall:band_share", share, expected, 4.0 * math.hypot(share_se, BAND_SHARE_SLACK * expected),
                                std_error=share_se, level_max=LEGALL_BLOCKS))

    mc = _budget(4000, scale)
    alpha0 = legall_alpha0(SPEC_A, mc, stream=stream.sub("alpha0"), workers=ctx.workers)
    ctx.record("legall_alpha0", {}, alpha0)
    for n in range(1, 5):
        est = legall_block_mean(SPEC_A, n, mc, stream=stream.sub("block").child(n), workers=ctx.workers)
        factor = float(est.meta["scaled_target_factor"])
        target = factor * alpha0.value
        tol = 3.0 * math.hypot(est.std_error, factor * alpha0.std_error)
        ctx.record("legall_block_mean", {"n": n}, est, abs(est.value - target) <= tol, target)
        ctx.judge(agreement_verdict(f"c5_legall:block_mean:n={n}", est.value, target, tol))

    limit = 4.0 / math.sqrt(LEGALL_PATHS)
    for n in (2, 3):
        ctx.judge(bound_verdict(f"c5_legall:correlation:n={n}", legall_level_correlation(blocks, n), limit))


def criterion_chaos(ctx: RunContext, scale: float) -> None:
    f = Constant(1.0)
    mc = _budget(4000, scale)
    series_by_t, skor_by_t = {}, {}
    for i, t in enumerate((0.1, 0.2)):
        stream = ctx.stream.sub("c6").child(i)
        series = chaos_series(3, SPEC_A, f, t, [0.0], mc, stream=stream, grid_n=32, workers=ctx.workers)
        skor = moment_p(SPEC_A, f, t, [0.0], 2, MomentKind.SKOROKHOD, mc, stream=stream, grid_n=32, workers=ctx.workers)
        for n, term in enumerate(series.terms):
            ctx.record("chaos_norm_sq", {"t": t, "n": n}, term)
        ctx.record("moment_p", {"t": t, "p": 2, "kind": "skorokhod"}, skor)
        series_by_t[t], skor_by_t[t] = series, skor
    for verdict in chaos_verdicts("c6_chaos", series_by_t, skor_by_t):
        ctx.judge(verdict)


def criterion_special_d1(ctx: RunContext, scale: float) -> None:
    result = variance_v_d1(D1_H0, 1.0, _budget(10000, scale), [0.04, 0.02, 0.01], stream=ctx.stream.sub("c7"),
                           grid_n=256, workers=ctx.workers)
    target = float(result.meta["target"])
    ctx.record("variance_v_d1", {"h0": D1_H0, "t": 1.0}, result.estimate, target=target)
    ctx.judge(agreement_verdict("c7_variance_v_d1", result.estimate.value, target, D1_REL_TOL * target))
    closed = silt_limit(D1_H0, 1.0)
    ctx.judge(agreement_verdict("c7_silt_limit:quadrature", silt_limit_by_quadrature(D1_H0, 1.0), closed, 1e-6 * closed))


def criterion_exponents(ctx: RunContext, scale: float) -> None:
    mc = _budget(1000, scale)
    space_lags = [2.0 ** -k for k in range(3, 8)]
    time_lags = [2.0 ** -k for k in range(2, 7)]
    for i, (axis, lags) in enumerate(((Axis.SPACE, space_lags), (Axis.TIME, time_lags))):
        study = exponent_study(SPEC_A, axis, (1.0, [0.0]), lags, mc, stream=ctx.stream.sub("c8").child(i), grid_n=64,
                               workers=ctx.workers)
        _record_study(ctx, "c8_exponent", study)
        _record_study(ctx, "c8_d1_exponent", d1_exponent_study(D1_H0, axis, 1.0, 0.0, lags))


def criterion_lemmas(ctx: RunContext, scale: float) -> None:
    report = lemma_bound_suite(stream=ctx.stream.sub("c9"), n_test=_budget(100, scale, 10))
    _judge_lemmas(ctx, report, prefix="c9_lemma")


def _determinism_fingerprint(stream: RngStream, workers: int) -> List[str]:
    """Small estimates whose 17-digit text must not depend on the worker count."""
    results = [
        self_integral_mean(SPEC_A, 1.0, 64, stream=stream.sub("s"), grid_n=32, workers=workers),
        moment_p(SPEC_A, Constant(1.0), 0.25, [0.0], 2, MomentKind.STRATONOVICH, 64, stream=stream.sub("m"), grid_n=32,
                 workers=workers),
        exp_moment_V(SPEC_B, 0.5, 0.5, 32, stream=stream.sub("v"), grid_n=16, workers=workers),
    ]
    results += chaos_series(2, SPEC_A, Constant(1.0), 0.1, [0.0], 32, stream=stream.sub("c"), grid_n=16, workers=workers).terms
    return [format_float(r.value) + "/" + format_float(r.std_error) for r in results]


def criterion_determinism(ctx: RunContext, scale: float) -> None:
    stream = ctx.stream.sub("c10")
    many = max(2, ctx.workers or 4)
    serial = _determinism_fingerprint(stream, 1)
    parallel = _determinism_fingerprint(stream, many)
    mismatched = [i for i, (a, b) in enumerate(zip(serial, parallel)) if a != b]
    ctx.judge(flag_verdict("c10_determinism", not mismatched, workers=[1, many], mismatched=mismatched, values=serial))


ACCEPTANCE_CRITERIA: Dict[int, Callable[[RunContext, float], None]] = {
    1: criterion_expected_s,
    2: criterion_scaling,
    3: criterion_skorokhod_mean,
    4: criterion_ladder,
    5: criterion_legall,
    6: criterion_chaos,
    7: criterion_special_d1,
    8: criterion_exponents,
    9: criterion_lemmas,
    10: criterion_determinism,
}


def run_acceptance(ctx: RunContext) -> None:
    p = ctx.params
    scale = float(p["scale"])
    for number in sorted(p["criteria"]):
        handle_log(logger, f"acceptance criterion {number}: {ACCEPTANCE_CRITERIA[number].__name__}", "INFO")
        before = len(ctx.verdicts)
        try:
            ACCEPTANCE_CRITERIA[number](ctx, scale)
        except FkheatError as exc:
            # a numerical failure fails this criterion only
            ctx.judge(flag_verdict(f"criterion_{number}:error", False, error=str(exc)))
        passed = all(v.passed for v in ctx.verdicts[before:])
        handle_log(logger, f"criterion {number}: {'PASS' if passed else 'FAIL'}", "SUCCESS" if passed else "WARNING")


RUNNERS: Dict[ExperimentKind, Callable[[RunContext], None]] = {
    ExperimentKind.SIMULATE_REGULARIZED: run_simulate_regularized,
    ExperimentKind.MOMENTS: run_moments,
    ExperimentKind.CHAOS: run_chaos,
    ExperimentKind.EXPONENTS: run_exponents,
    ExperimentKind.EXP_MOMENT: run_exp_moment,
    ExperimentKind.SPECIAL_D1: run_special_d1,
    ExperimentKind.LEMMA_SUITE: run_lemma_suite,
    ExperimentKind.ACCEPTANCE: run_acceptance,
}


@dataclass
class RunOutcome:
    record_file: str
    csv_file: str
    passed: bool
    verdicts: List[Verdict]


def run_experiment(config: ExperimentConfig, *, workers: Optional[int] = None) -> RunOutcome:
    """실험 실행 후 기록 저장

    ``workers`` overrides the config's worker count; neither changes the
    numbers, only the wall time.
    """
    store = RunRecordStore(config.output_dir, config.output_name)
    store.start(config.config_hash, config.resolved(), ARTIFACT_VERSION)
    ctx = RunContext(config, store, RngStream(config.seed, config.experiment.value), workers or config.workers)
    handle_log(logger, f"run {config.experiment.value} (seed {config.seed}, hash {config.config_hash[:12]})", "INFO")
    try:
        RUNNERS[config.experiment](ctx)
    except FkheatError as exc:
        store.finish(error=str(exc))
        raise
    store.finish()
    passed = all(v.passed for v in ctx.verdicts)
    outcome = RunOutcome(str(store.record_file), str(store.csv_file), passed, ctx.verdicts)
    if config.experiment is ExperimentKind.ACCEPTANCE and not passed:
        failed = [v.name for v in ctx.verdicts if not v.passed]
        raise AcceptanceFailure(f"{len(failed)} acceptance check(s) failed: {', '.join(failed)}", operation="acceptance")
    handle_log(logger, f"record written to {store.record_file}", "SUCCESS" if passed else "WARNING")
    return outcome
