import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fkheat.montecarlo import clip_exponent, default_workers, run_replicates, summarize
from fkheat.rng import RngStream


def _normal(rs: RngStream) -> float:
    return float(rs.generator().standard_normal())


def test_stream_keys_are_values():
    a = RngStream(5, "moment").child(3)
    b = RngStream(5, "moment", (3,))
    assert a == b
    assert a.generator().random() == b.generator().random()
    assert a.describe() == "5:moment:3"


def test_sub_changes_purpose_not_path():
    base = RngStream(5, "moment").child(2)
    other = base.sub("sheet")
    assert other.path == base.path
    assert other.generator().random() != base.generator().random()


def test_seed_range():
    with pytest.raises(ValueError):
        RngStream(-1)


@pytest.mark.parametrize("workers", [1, 2, 5])
def test_run_replicates_independent_of_workers(workers):
    stream = RngStream(99, "replicates")
    ref = run_replicates(_normal, 257, stream, workers=1)
    out = run_replicates(_normal, 257, stream, workers=workers, chunk_size=7)
    np.testing.assert_array_equal(out, ref)


def test_run_replicates_vector_samples():
    out = run_replicates(lambda rs: rs.generator().standard_normal(3), 10, RngStream(1), workers=2)
    assert out.shape == (10, 3)


def test_run_replicates_rejects_empty_budget():
    with pytest.raises(ValueError):
        run_replicates(_normal, 0, RngStream(1))


@given(seed=st.integers(0, 2 ** 40))
def test_summarize_is_sample_mean(seed):
    stream = RngStream(seed, "summary")
    samples = run_replicates(_normal, 64, stream, workers=1)
    est = summarize(samples, stream, meta={"label": "x"})
    assert est.value == pytest.approx(float(np.mean(samples)))
    assert est.std_error == pytest.approx(float(np.std(samples, ddof=1) / 8.0))
    assert est.n_samples == 64
    assert est.meta["label"] == "x"
    assert est.meta["stream"] == stream.describe()


def test_clip_exponent_counts():
    capped, n = clip_exponent(np.array([1.0, 800.0, 701.0]), 700.0)
    np.testing.assert_array_equal(capped, [1.0, 700.0, 700.0])
    assert n == 2


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("FKHEAT_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("FKHEAT_WORKERS", "many")
    assert default_workers() >= 1
