import numpy as np
import pytest
from scipy import linalg

from fkheat.errors import (
    DegenerateGridError,
    DomainError,
    MemoryBudgetError,
    RecordError,
    TruncationDomainError,
    UnsupportedGridError,
)
from fkheat.kernels_quadrature import rh_cov
from fkheat.model import TimeGrid
from fkheat.montecarlo import run_replicates, summarize
from fkheat.paths_fields import (
    SheetSample,
    SmoothedNoiseField,
    cholesky_factor,
    discrete_noise_variance,
    dump_sheet,
    eval_smoothed_noise,
    grid_with_node,
    load_sheet,
    mollified_inner,
    mollified_variance_expectation,
    potential_table,
    refine_bridge,
    restrict,
    sample_bm,
    sample_pinned_bm,
    sample_sheet,
    smoothed_noise_variance,
)
from fkheat.rng import RngStream

TIME_NODES = np.linspace(0.0, 1.0, 33)
SPACE_NODES = [np.linspace(-2.0, 2.0, 161)]


# ---------------------------------------------------------
# 브라운 경로
# ---------------------------------------------------------
def test_sample_bm_starts_at_start(stream):
    path = sample_bm(TimeGrid.uniform(1.0, 16), 2, [0.5, -1.0], stream)
    assert path.values.shape == (2, 17)
    np.testing.assert_array_equal(path.at(0.0), [0.5, -1.0])
    assert path.start == (0.5, -1.0)


def test_shifted_and_reversed(stream):
    path = sample_bm(TimeGrid.uniform(1.0, 8), 1, 0.0, stream)
    moved = path.shifted([2.0])
    np.testing.assert_allclose(moved.values, path.values + 2.0)
    back = path.reversed()
    np.testing.assert_array_equal(back.values[0], path.values[0, ::-1])
    assert back.start == (path.values[0, -1],)


def test_grid_with_node():
    assert grid_with_node(1.0, 8, 0.25).spacing == pytest.approx(0.125)
    grid = grid_with_node(1.0, 8, 0.3)
    assert grid.spacing is None
    assert grid.index_of(0.3) > 0


def test_refine_bridge_keeps_coarse_nodes(stream):
    coarse = sample_bm(TimeGrid.dyadic(1.0, 3), 2, 0.0, stream.sub("coarse"))
    fine = refine_bridge(coarse, 7, stream.sub("bridge"))
    assert fine.grid.level == 7
    np.testing.assert_array_equal(restrict(fine, 3).values, coarse.values)
    np.testing.assert_array_equal(restrict(fine, 5).values, restrict(refine_bridge(coarse, 5, stream.sub("bridge")), 5).values)


def test_refine_bridge_needs_dyadic(stream):
    path = sample_bm(TimeGrid.uniform(1.0, 6), 1, 0.0, stream)
    with pytest.raises(UnsupportedGridError):
        refine_bridge(path, 4, stream)


@pytest.mark.slow
def test_refined_increments_have_brownian_variance():
    stream = RngStream(17, "bridge_variance")

    def one(rs):
        coarse = sample_bm(TimeGrid.dyadic(1.0, 1), 1, 0.0, rs.sub("coarse"))
        fine = refine_bridge(coarse, 4, rs.sub("bridge"))
        return np.diff(fine.values[0]) ** 2

    sq = run_replicates(one, 2000, stream, workers=1)
    np.testing.assert_allclose(sq.mean(axis=0), 1.0 / 16, rtol=0.15)


def test_pinned_bm_hits_pins(stream):
    grid = TimeGrid.from_nodes(np.union1d(np.linspace(0.0, 1.0, 9), [0.3, 0.7]))
    pins = {0.3: [1.0, -0.5], 0.7: [0.2, 0.4]}
    path = sample_pinned_bm(grid, 2, [0.0, 0.0], pins, stream)
    for tau, y in pins.items():
        np.testing.assert_allclose(path.at(tau), y, atol=1e-14)
    np.testing.assert_array_equal(path.at(0.0), [0.0, 0.0])
    with pytest.raises(DomainError):
        sample_pinned_bm(grid, 2, 0.0, {0.0: [0.0, 0.0]}, stream)


# ---------------------------------------------------------
# 분수 브라운 시트
# ---------------------------------------------------------
def test_cholesky_factor_reproduces_covariance():
    nodes = np.array([-1.0, -0.25, 0.0, 0.5, 1.5])
    factor = cholesky_factor(0.8, nodes, 1)
    cov = rh_cov(0.8, nodes[:, None], nodes[None, :])
    np.testing.assert_allclose(factor @ factor.T, cov, atol=1e-12)
    np.testing.assert_array_equal(factor[2], 0.0)


def test_sample_sheet_vanishes_on_the_axes(spec_b, stream):
    sheet = sample_sheet(spec_b, [0.0, 0.5, 1.0], [[0.0, 0.5, 1.0], [-1.0, 0.0, 1.0]], stream)
    assert sheet.shape == (3, 3, 3)
    np.testing.assert_array_equal(sheet.values[0], 0.0)
    np.testing.assert_array_equal(sheet.values[:, 0], 0.0)
    np.testing.assert_array_equal(sheet.values[:, :, 1], 0.0)
    assert sheet.increments.shape == (2, 2, 2)


@pytest.mark.slow
def test_sheet_vertex_variance(spec_a):
    stream = RngStream(5, "sheet_variance")
    nodes_t, nodes_x = [0.0, 0.5, 1.0], [0.0, 0.7]
    samples = run_replicates(lambda rs: sample_sheet(spec_a, nodes_t, [nodes_x], rs).values[2, 1], 4000, stream, workers=1)
    est = summarize(samples ** 2, stream)
    assert est.within(1.0 * 0.7 ** (2.0 * 0.9), k=4.0)


@pytest.mark.slow
def test_sheet_covariance_matches_a_dense_sampler(spec_a):
    nodes_t = np.array([0.25, 0.5, 0.75, 1.0])
    nodes_x = np.array([-0.8, 0.3, 0.9, 1.6])
    dense = np.kron(
        rh_cov(spec_a.h0, nodes_t[:, None], nodes_t[None, :]),
        rh_cov(spec_a.h[0], nodes_x[:, None], nodes_x[None, :]),
    )
    n = 4000
    stream = RngStream(77, "sheet_kronecker")
    separable = run_replicates(lambda rs: sample_sheet(spec_a, nodes_t, [nodes_x], rs).values.ravel(), n, stream, workers=1)
    z = stream.sub("dense").generator().standard_normal((n, dense.shape[0]))
    direct = z @ linalg.cholesky(dense, lower=True).T

    rows, cols = np.triu_indices(dense.shape[0])
    prod_s = separable[:, rows] * separable[:, cols]
    prod_d = direct[:, rows] * direct[:, cols]
    gap = prod_s.mean(axis=0) - prod_d.mean(axis=0)
    se = np.sqrt(prod_s.var(axis=0, ddof=1) / n + prod_d.var(axis=0, ddof=1) / n)
    assert np.all(np.abs(gap) <= 4.0 * se), np.max(np.abs(gap) / se)


def test_sample_sheet_rejects_bad_grids(spec_a, stream):
    with pytest.raises(DegenerateGridError):
        sample_sheet(spec_a, [0.0, 0.5, 0.5], [[0.0, 1.0]], stream)
    with pytest.raises(DegenerateGridError):
        sample_sheet(spec_a, [0.0, 1.0], [[0.0, 1.0], [0.0, 1.0]], stream)
    with pytest.raises(MemoryBudgetError):
        sample_sheet(spec_a, TIME_NODES, SPACE_NODES, stream, max_vertices=100)


def test_sheet_dump_and_load(tmp_path, spec_b, stream):
    sheet = sample_sheet(spec_b, [0.0, 0.25, 1.0], [[0.0, 1.0], [-0.5, 0.5, 2.0]], stream)
    target = tmp_path / "sheet.bin"
    dump_sheet(sheet, target)
    again = load_sheet(target)
    assert again.spec == spec_b
    np.testing.assert_array_equal(again.values, sheet.values)
    np.testing.assert_array_equal(again.space_nodes[1], sheet.space_nodes[1])

    bogus = tmp_path / "bogus.bin"
    bogus.write_bytes(b"NOPE" + target.read_bytes()[4:])
    with pytest.raises(RecordError):
        load_sheet(bogus)


# ---------------------------------------------------------
# 평활화된 노이즈
# ---------------------------------------------------------
def test_smoothed_noise_is_linear_in_the_sheet(spec_a, stream):
    sheet = sample_sheet(spec_a, TIME_NODES, SPACE_NODES, stream)
    field = SmoothedNoiseField(sheet, 0.01, 0.25)
    doubled = SmoothedNoiseField(SheetSample(spec_a, sheet.time_nodes, sheet.space_nodes, 2.0 * sheet.values), 0.01, 0.25)
    one = eval_smoothed_noise(field, 1.0, 0.1)
    assert eval_smoothed_noise(doubled, 1.0, 0.1) == pytest.approx(2.0 * one)
    quiet = SmoothedNoiseField(SheetSample.zeros(spec_a, TIME_NODES, SPACE_NODES), 0.01, 0.25)
    assert eval_smoothed_noise(quiet, 1.0, 0.1) == 0.0


def test_potential_table_agrees_with_pointwise(spec_a, stream):
    sheet = sample_sheet(spec_a, TIME_NODES, SPACE_NODES, stream)
    field = SmoothedNoiseField(sheet, 0.01, 0.25)
    times, xs = [0.5, 1.0], [-0.3, 0.0, 0.4]
    table = potential_table(field, times, [xs])
    assert table.shape == (2, 3)
    assert table[1, 2] == pytest.approx(eval_smoothed_noise(field, 1.0, 0.4), rel=1e-12)


def test_truncation_domain(spec_a):
    field = SmoothedNoiseField(SheetSample.zeros(spec_a, TIME_NODES, SPACE_NODES), 0.01, 0.25)
    lo, hi = field.valid_box()
    assert hi[0] == pytest.approx(1.5)
    with pytest.raises(TruncationDomainError):
        eval_smoothed_noise(field, 1.0, 1.8)
    with pytest.raises(DomainError):
        SmoothedNoiseField(field.sheet, 0.0, 0.25)


def test_discrete_variance_tends_to_continuum(spec_a):
    field = SmoothedNoiseField(SheetSample.zeros(spec_a, TIME_NODES, SPACE_NODES), 0.01, 0.25)
    discrete = discrete_noise_variance(field, 1.0, 0.0)
    assert discrete == pytest.approx(smoothed_noise_variance(spec_a, 1.0, 0.01, 0.25), rel=0.05)


@pytest.mark.slow
def test_empirical_noise_variance(spec_a):
    nodes_t, nodes_x = np.linspace(0.0, 1.0, 9), [np.linspace(-1.5, 1.5, 31)]
    stream = RngStream(23, "noise_variance")
    quiet = SmoothedNoiseField(SheetSample.zeros(spec_a, nodes_t, nodes_x), 0.01, 0.25)

    def one(rs):
        field = SmoothedNoiseField(sample_sheet(spec_a, nodes_t, nodes_x, rs), 0.01, 0.25)
        return eval_smoothed_noise(field, 1.0, 0.0) ** 2

    est = summarize(run_replicates(one, 2000, stream, workers=1), stream)
    assert est.within(discrete_noise_variance(quiet, 1.0, 0.0), k=4.0)


@pytest.mark.slow
def test_mollified_inner_mean(spec_a):
    stream = RngStream(29, "mollified_inner")
    grid = TimeGrid.uniform(0.5, 64)

    def one(rs):
        path = sample_bm(grid, 1, 0.0, rs)
        return mollified_inner(path, path, spec_a, 0.5, 0.01, 0.1)

    samples = run_replicates(one, 400, stream)
    est = summarize(samples, stream)
    exact = mollified_variance_expectation(spec_a, 0.5, 0.01, 0.1)
    assert est.within(exact, k=4.0, extra=0.03 * exact)
