"""Dynamic-threshold zero-crossing step counter over 32-sample FIFO batches.

Per batch: compute mean/max/min of the z axis, derive the dynamic threshold
T = max(max - mean, mean - min). Below the static threshold the window counts
nothing. Otherwise a two-register shift window slides over the 31 consecutive
sample pairs and counts every pair that crosses the precision band around the
mean from above to below. Counts aggregate into 10-minute windows, six per
one-hour duty period.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .synthgen import FIFO_DEPTH, FifoBatch


@dataclass(frozen=True)
class StepCounterConfig:
    """Fixed tuning values of the detector.

    s_static_g: windows whose dynamic threshold stays below this are treated
    as the device standing still. m_precision: divisor turning the dynamic
    threshold into the crossing band half-width.
    """

    s_static_g: float = 0.2
    m_precision: float = 4.0

    def __post_init__(self) -> None:
        if self.s_static_g <= 0:
            raise ValueError("s_static_g must be positive")
        if self.m_precision < 1:
            raise ValueError("m_precision must be >= 1")


DEFAULT_CONFIG = StepCounterConfig()


@dataclass(frozen=True)
class WindowStats:
    """Per-batch z statistics and the derived threshold/precision."""

    alpha: float   # mean
    beta: float    # max
    gamma: float   # min
    t: float       # dynamic threshold, max(beta-alpha, alpha-gamma)
    p: float       # precision band half-width, t / m_precision


def window_stats(batch: FifoBatch, config: StepCounterConfig = DEFAULT_CONFIG) -> WindowStats:
    z = batch.z_g
    if len(z) != FIFO_DEPTH:
        raise ValueError(f"expected {FIFO_DEPTH} samples, got {len(z)}")
    alpha = float(np.mean(z))
    beta = float(np.max(z))
    gamma = float(np.min(z))
    t = max(beta - alpha, alpha - gamma)
    return WindowStats(alpha=alpha, beta=beta, gamma=gamma, t=t,
                       p=t / config.m_precision)


def count_batch(batch: FifoBatch, config: StepCounterConfig = DEFAULT_CONFIG) -> int:
    """Steps detected in one FIFO batch.

    Register pairs never straddle batches: each FIFO read is processed on its
    own, with its own statistics.
    """
    stats = window_stats(batch, config)
    if stats.t < config.s_static_g:
        return 0
    z = batch.z_g
    a = z[:-1] - stats.alpha   # previous sample register
    b = z[1:] - stats.alpha    # current sample register
    return int(np.count_nonzero((a > stats.p) & (b < -stats.p)))


def count_trace(batches: Sequence[FifoBatch],
                config: StepCounterConfig = DEFAULT_CONFIG) -> int:
    """Total steps over a sequence of FIFO batches."""
    return sum(count_batch(batch, config) for batch in batches)


@dataclass(frozen=True)
class StepWindow:
    """Step total for one 10-minute aggregation window."""

    window_start_ms: float
    window_len_ms: float
    steps: int

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


WINDOW_LEN_MS = 600_000.0   # 10 minutes
WINDOWS_PER_DUTY = 6


def accumulate(increments: Sequence[tuple[float, int]], duty_start_ms: float = 0.0,
               window_len_ms: float = WINDOW_LEN_MS,
               n_windows: int = WINDOWS_PER_DUTY) -> list[StepWindow]:
    """Sum timestamped step increments into consecutive windows.

    Increments are (t_ms, steps) with t_ms the first-sample time of the batch
    that produced the count; windows tile [duty_start, duty_start + n*len).
    Out-of-range increments are a caller bug and rejected.
    """
    counts = [0] * n_windows
    duty_end = duty_start_ms + n_windows * window_len_ms
    for t_ms, steps in increments:
        if t_ms < duty_start_ms or t_ms >= duty_end:
            raise ValueError(f"increment at {t_ms} outside duty period "
                             f"[{duty_start_ms}, {duty_end})")
        counts[int((t_ms - duty_start_ms) // window_len_ms)] += steps
    return [StepWindow(window_start_ms=duty_start_ms + i * window_len_ms,
                       window_len_ms=window_len_ms, steps=counts[i])
            for i in range(n_windows)]
