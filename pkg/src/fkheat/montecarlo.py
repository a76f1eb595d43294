"""Replicate-parallel Monte Carlo driver.

Replicate ``i`` always draws from ``stream.child(i)`` and its result is
stored at index ``i``, so estimates do not depend on the worker count.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import psutil

from .log import handle_log
from .model import EstimatorResult
from .rng import RngStream

logger = logging.getLogger(__name__)

DEFAULT_EXP_CAP = 700.0

SampleFn = Callable[[RngStream], Union[float, Sequence[float], np.ndarray]]


def default_workers() -> int:
    """기본 워커 수: FKHEAT_WORKERS 환경 변수, 없으면 물리 코어 수"""
    override = os.getenv("FKHEAT_WORKERS")
    if override:
        try:
            return max(1, int(override))
        except ValueError:
            handle_log(logger, f"FKHEAT_WORKERS={override!r} is not an integer; ignoring", "WARNING")
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def available_memory_bytes() -> int:
    return int(psutil.virtual_memory().available)


def run_replicates(
    sample_fn: SampleFn,
    n: int,
    stream: RngStream,
    *,
    workers: Optional[int] = None,
    chunk_size: Optional[int] = None,
) -> np.ndarray:
    """Evaluate ``sample_fn(stream.child(i))`` for i < n.

    Returns shape (n,) for scalar samples and (n, k) for vector samples.
    """
    if n < 1:
        raise ValueError("replicate budget must be positive")
    first = np.atleast_1d(np.asarray(sample_fn(stream.child(0)), dtype=float))
    out = np.empty((n, first.size), dtype=float)
    out[0] = first

    workers = workers or default_workers()
    chunk_size = chunk_size or max(1, math.ceil((n - 1) / (4 * workers)))

    def _work(lo: int, hi: int) -> None:
        for i in range(lo, hi):
            out[i] = np.asarray(sample_fn(stream.child(i)), dtype=float)

    bounds = [(lo, min(lo + chunk_size, n)) for lo in range(1, n, chunk_size)]
    if workers == 1 or len(bounds) <= 1:
        for lo, hi in bounds:
            _work(lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for future in [pool.submit(_work, lo, hi) for lo, hi in bounds]:
                future.result()
    return out[:, 0] if first.size == 1 else out


def summarize(
    samples: np.ndarray,
    stream: RngStream,
    *,
    meta: Optional[Dict[str, Any]] = None,
    clip_count: int = 0,
    operation: str = "",
) -> EstimatorResult:
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    value = float(np.mean(samples))
    std_error = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    info: Dict[str, Any] = {"stream": stream.describe(), "clip_count": int(clip_count)}
    if meta:
        info.update(meta)
    if clip_count:
        handle_log(
            logger,
            f"{operation or stream.tag}: {clip_count} of {n} exponents clipped at the cap; raise the budget or lower the parameters",
            "WARNING",
        )
    return EstimatorResult(value, std_error, n, stream.seed, info)


def clip_exponent(x: Union[float, np.ndarray], cap: float = DEFAULT_EXP_CAP) -> Tuple[np.ndarray, int]:
    """Cap exponents before exp(); the count is carried into result meta."""
    arr = np.asarray(x, dtype=float)
    over = arr > cap
    return np.where(over, cap, arr), int(np.count_nonzero(over))
