import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "src"))

from fkheat.model import HurstSpec, Regime  # noqa: E402
from fkheat.rng import RngStream  # noqa: E402

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=50, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))


@pytest.fixture
def spec_a():
    return HurstSpec(1, 0.7, (0.9,), Regime.REGULAR)


@pytest.fixture
def spec_b():
    return HurstSpec(2, 0.9, (0.8, 0.8), Regime.REGULAR)


@pytest.fixture
def stream():
    return RngStream(20240611, "test")


@pytest.fixture(autouse=True)
def _isolated_data_dir(tmp_path_factory, monkeypatch):
    monkeypatch.setenv("FKHEAT_DATA_DIR", str(tmp_path_factory.mktemp("fkheat_data")))
