import math

import numpy as np
import pytest

from fkheat.errors import AdmissibilityError, DomainError
from fkheat.feynman_kac import (
    MomentKind,
    conditional_functional,
    exp_moment_V,
    exp_moment_Y,
    legall_band_share,
    legall_block_mean,
    legall_decompose,
    legall_level_correlation,
    moment_p,
    mollified_moment_p,
    regularized_second_moment,
    regularized_sheet_nodes,
    scaling_mu,
    solve_regularized,
    stratonovich_mean,
    weak_form_residual,
)
from fkheat.kernels_quadrature import singular_double_integral_S
from fkheat.model import Constant, Cosine, GaussianBump, HurstSpec, Indicator, TestFunction, TimeGrid, combined_stderr
from fkheat.paths_fields import BrownianPath, SheetSample, sample_bm, sample_sheet
from fkheat.rng import RngStream


def test_conditional_functional(spec_a, stream):
    path = sample_bm(TimeGrid.uniform(1.0, 32), 1, 0.0, stream)
    bare = conditional_functional(path, spec_a, 1.0)
    assert bare.v_sample is None
    assert bare.s_self == pytest.approx(singular_double_integral_S(path, spec_a, 1.0).value)
    drawn = conditional_functional(path, spec_a, 1.0, stream.sub("v"))
    assert drawn.v_sample == conditional_functional(path, spec_a, 1.0, stream.sub("v")).v_sample
    assert drawn.stream == stream.sub("v").describe()


def test_self_integral_scales_with_time(spec_b, stream):
    # Brownian scaling: S(B; t) = t^(kappa+1) S(B; 1) path by path
    unit = sample_bm(TimeGrid.uniform(1.0, 32), 2, 0.0, stream)
    t = 0.3
    scaled = BrownianPath(TimeGrid.uniform(t, 32), math.sqrt(t) * unit.values, (0.0, 0.0))
    s1 = singular_double_integral_S(unit, spec_b, 1.0).value
    st = singular_double_integral_S(scaled, spec_b, t).value
    assert st == pytest.approx(t ** (spec_b.kappa + 1.0) * s1, rel=1e-9)


# ---------------------------------------------------------
# 모멘트
# ---------------------------------------------------------
def test_skorokhod_mean_of_constant_is_exact(spec_a, stream):
    est = moment_p(spec_a, Constant(1.0), 0.25, [0.0], 1, MomentKind.SKOROKHOD, 16, stream=stream, grid_n=16)
    assert est.value == 1.0
    assert est.std_error == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("f", [GaussianBump((0.3,), 0.5), Indicator((-0.5,), (0.5,)), Cosine((2.0,))], ids=lambda f: f.kind)
@pytest.mark.parametrize("t, x", [(0.1, 0.0), (0.25, 0.4), (0.5, -1.0)])
def test_skorokhod_mean_is_the_heat_flow(spec_a, f, t, x):
    stream = RngStream(404, f"skorokhod_mean:{f.kind}")
    est = moment_p(spec_a, f, t, [x], 1, MomentKind.SKOROKHOD, 2000, stream=stream, grid_n=4)
    assert est.within(float(f.semigroup(t, np.array([x]))), k=4.0)


def test_moment_without_noise_is_heat_flow(spec_a, stream):
    f = GaussianBump((0.0,), 0.5)
    est = moment_p(spec_a, f, 0.25, [0.2], 2, "stratonovich", 4000, stream=stream, grid_n=8, noise=False)
    assert est.within(float(f.semigroup(0.25, np.array([0.2]))) ** 2, k=4.0)
    plain = stratonovich_mean(spec_a, f, 0.25, [0.2], 16, stream=stream, grid_n=8, noise=False)
    assert plain.meta["kind"] == "stratonovich"


def test_moment_rejects_bad_input(spec_a, stream):
    with pytest.raises(DomainError):
        moment_p(spec_a, Constant(1.0), 0.25, [0.0], 0, MomentKind.SKOROKHOD, 8, stream=stream)
    with pytest.raises(AdmissibilityError):
        moment_p(HurstSpec(2, 0.5, (0.7, 0.7)), Constant(1.0), 0.25, [0.0, 0.0], 1, MomentKind.SKOROKHOD, 8, stream=stream)


def test_stratonovich_exceeds_skorokhod_second_moment(spec_a, stream):
    kw = dict(stream=stream, grid_n=16)
    strat = moment_p(spec_a, Constant(1.0), 0.25, [0.0], 2, MomentKind.STRATONOVICH, 64, **kw)
    skor = moment_p(spec_a, Constant(1.0), 0.25, [0.0], 2, MomentKind.SKOROKHOD, 64, **kw)
    # same paths; the Stratonovich exponent adds the positive self integrals
    assert strat.value > skor.value > 1.0


def test_moments_do_not_depend_on_workers(spec_a):
    stream = RngStream(77, "workers")
    one = moment_p(spec_a, Constant(1.0), 0.25, [0.0], 2, MomentKind.STRATONOVICH, 24, stream=stream, grid_n=16, workers=1)
    many = moment_p(spec_a, Constant(1.0), 0.25, [0.0], 2, MomentKind.STRATONOVICH, 24, stream=stream, grid_n=16, workers=4)
    assert one.value == many.value
    assert one.std_error == many.std_error


# ---------------------------------------------------------
# 지수 모멘트
# ---------------------------------------------------------
def test_exp_moment_at_zero(spec_a, stream):
    est = exp_moment_Y(spec_a, 0.0, 8, stream=stream)
    assert est.value == 1.0
    assert est.std_error == 0.0


def test_scaling_mu(spec_a):
    mu = scaling_mu(spec_a, 2.0, 0.5)
    assert mu == pytest.approx(2.0 * spec_a.alpha_h * 0.5 ** 1.3)


@pytest.mark.slow
def test_equal_mu_gives_equal_exponential_moments(spec_a):
    stream = RngStream(41, "scaling")
    t = 0.25
    lam = math.sqrt(2.0 * 0.1 / (spec_a.alpha_h * t ** (spec_a.kappa + 1.0)))
    v = exp_moment_V(spec_a, lam, t, 2000, stream=stream.child(0), grid_n=32)
    y = exp_moment_Y(spec_a, 0.1, 2000, stream=stream.child(1), grid_n=32)
    assert v.meta["mu"] == pytest.approx(0.1)
    assert abs(v.value - y.value) <= 4.0 * combined_stderr(v, y)


# ---------------------------------------------------------
# 이진 블록 분해
# ---------------------------------------------------------
def test_legall_identity(spec_a, stream):
    path = sample_bm(TimeGrid.dyadic(1.0, 6), 1, 0.0, stream)
    blocks = legall_decompose(path, spec_a, 4)
    assert blocks.identity_gap() < 1e-10
    assert [len(level) for level in blocks.alpha] == [1, 2, 4, 8]
    assert np.all(np.diff(blocks.partial_sums()) > 0.0)
    assert 0.0 < blocks.band_fraction() < 1.0
    assert blocks.band_share() == pytest.approx(1.0 - blocks.band_fraction(), abs=1e-10)


def test_legall_blocks_of_the_unit_integrand(spec_a, stream):
    path = sample_bm(TimeGrid.dyadic(1.0, 5), 1, 0.0, stream)
    blocks = legall_decompose(path, spec_a, 3, integrand_one=True)
    assert blocks.total == pytest.approx(1.0)
    np.testing.assert_allclose(blocks.partial_sums(), [0.5, 0.75, 0.875])
    assert blocks.residual_band == pytest.approx(0.125)


def test_band_share_of_the_unit_integrand(spec_a):
    grid = TimeGrid.dyadic(1.0, 5)
    blocks = [
        legall_decompose(sample_bm(grid, 1, 0.0, RngStream(9, "band").child(i)), spec_a, 3, integrand_one=True)
        for i in range(4)
    ]
    share, se = legall_band_share(blocks)
    assert share == pytest.approx(0.125)
    assert se == pytest.approx(0.0, abs=1e-12)
    assert math.isnan(legall_band_share(blocks[:1])[1])


@pytest.mark.slow
def test_band_share_follows_the_block_scaling(spec_a):
    grid = TimeGrid.dyadic(1.0, 8)
    level_max = 5
    blocks = [
        legall_decompose(sample_bm(grid, 1, 0.0, RngStream(10, "band").child(i)), spec_a, level_max)
        for i in range(40)
    ]
    share, se = legall_band_share(blocks)
    expected = 2.0 ** (-level_max * spec_a.kappa)
    assert abs(share - expected) <= 4.0 * math.hypot(se, 0.1 * expected)


def test_legall_needs_fine_dyadic_path(spec_a, stream):
    with pytest.raises(DomainError):
        legall_decompose(sample_bm(TimeGrid.dyadic(1.0, 3), 1, 0.0, stream), spec_a, 4)
    with pytest.raises(DomainError):
        legall_decompose(sample_bm(TimeGrid.uniform(1.0, 16), 1, 0.0, stream), spec_a, 2)


def test_legall_level_correlation_is_bounded(spec_a):
    grid = TimeGrid.dyadic(1.0, 5)
    blocks = [legall_decompose(sample_bm(grid, 1, 0.0, RngStream(3, "corr").child(i)), spec_a, 3) for i in range(12)]
    assert 0.0 <= legall_level_correlation(blocks, 3) <= 1.0
    assert legall_level_correlation(blocks, 1) == 0.0


def test_legall_block_mean_meta(spec_a, stream):
    est = legall_block_mean(spec_a, 2, 8, stream=stream, cells=8)
    assert est.meta["scaled_target_factor"] == pytest.approx(2.0 ** (-2 * 1.3))
    assert est.value > 0.0


# ---------------------------------------------------------
# 정칙화된 방정식
# ---------------------------------------------------------
def test_regularized_sheet_nodes(spec_a):
    time_nodes, space = regularized_sheet_nodes(spec_a, 0.25, [0.1], 0.01, 0.1)
    assert np.max(np.diff(time_nodes)) <= 0.1 / 4 + 1e-12
    assert np.max(np.diff(space[0])) <= math.sqrt(0.01) / 2 + 1e-12
    assert space[0][0] < 0.1 < space[0][-1]


def test_quiet_sheet_gives_the_heat_flow(spec_a, stream):
    time_nodes, space = regularized_sheet_nodes(spec_a, 0.25, [0.0], 0.04, 0.2)
    quiet = SheetSample.zeros(spec_a, time_nodes, space)
    const = solve_regularized(spec_a, Constant(2.0), 0.25, [0.0], 0.04, 0.2, quiet, 32, stream=stream)
    assert const.value == 2.0
    f = GaussianBump((0.0,), 0.5)
    bump = solve_regularized(spec_a, f, 0.25, [0.3], 0.04, 0.2, quiet, 2000, stream=stream)
    assert bump.within(float(f.semigroup(0.25, np.array([0.3]))), k=4.0)


def test_regularized_solution_on_a_sheet(spec_a, stream):
    time_nodes, space = regularized_sheet_nodes(spec_a, 0.25, [0.0], 0.04, 0.2)
    sheet = sample_sheet(spec_a, time_nodes, space, stream.sub("sheet"))
    est = solve_regularized(spec_a, Constant(1.0), 0.25, [0.0], 0.04, 0.2, sheet, 64, stream=stream)
    assert est.value > 0.0
    assert est.meta["breach_count"] == 0
    again = solve_regularized(spec_a, Constant(1.0), 0.25, [0.0], 0.04, 0.2, sheet, 64, stream=stream, workers=3)
    assert again.value == est.value


@pytest.mark.slow
def test_regularized_second_moment_matches_sheet_free_oracle(spec_a):
    stream = RngStream(55, "ladder_rung")
    f = Constant(1.0)
    est = regularized_second_moment(spec_a, f, 0.25, [0.0], 0.04, 0.2, 48, 64, stream=stream, n_steps=32)
    oracle = mollified_moment_p(spec_a, f, 0.25, [0.0], 2, 0.04, 0.2, 2000, stream=stream)
    assert abs(est.value - oracle.value) <= 4.0 * combined_stderr(est, oracle) + 0.05 * oracle.value


def test_weak_form_residual_vanishes_for_quiet_constant_data(spec_a, stream):
    time_nodes, space = regularized_sheet_nodes(spec_a, 0.25, [0.0], 0.04, 0.2)
    quiet = SheetSample.zeros(spec_a, time_nodes, space)
    phi = TestFunction((0.0,), 0.4)
    est = weak_form_residual(spec_a, Constant(1.0), 0.25, 0.04, 0.2, quiet, phi, 4, stream=stream, n_space=256, n_time=16)
    assert abs(est.value) < 1e-4


def test_weak_form_residual_checks_support(spec_a, stream):
    quiet = SheetSample.zeros(spec_a, np.linspace(0.0, 0.25, 9), [np.linspace(-1.0, 1.0, 41)])
    with pytest.raises(DomainError):
        weak_form_residual(spec_a, Constant(1.0), 0.25, 0.04, 0.2, quiet, TestFunction((0.8,), 0.4), 4, stream=stream)
