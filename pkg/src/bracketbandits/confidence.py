"""Anytime confidence radii with a doubly-logarithmic schedule.

The radius is valid simultaneously over all sample counts t >= 1 for a
sub-Gaussian arm: with probability at least 1 - delta the empirical mean
after t pulls stays within ``radius(t, delta)`` of the true mean for every t.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Failure probabilities are clamped below at this value before any log is
# taken; clamping is counted so extreme-budget runs can be audited.
MIN_DELTA = 1e-300

_clamp_events = 0


def clamp_event_count() -> int:
    """Number of times a failure probability was clamped up to MIN_DELTA."""
    return _clamp_events


def reset_clamp_events() -> int:
    """Reset the clamp counter, returning the previous value."""
    global _clamp_events
    old = _clamp_events
    _clamp_events = 0
    return old


def _note_clamps(k: int) -> None:
    global _clamp_events
    _clamp_events += k


def reg_log(x: float) -> float:
    """max(ln(x), 1): the regularized logarithm used throughout.

    Keeps every log factor bounded below by 1 so radii and hardness terms
    never vanish or go negative for small arguments.
    """
    if x <= 0.0:
        raise ValueError(f"reg_log requires x > 0, got {x}")
    return max(math.log(x), 1.0)


@dataclass(frozen=True)
class ConfidenceSchedule:
    """Parameters of the anytime radius sqrt(c * v * reg_log(log2(2t)/delta) / t).

    scale_c: leading constant (4 gives the default anytime-valid schedule for
        variance-proxy-1 observations).
    variance_proxy: sub-Gaussian variance proxy of the rewards.
    """

    scale_c: float = 4.0
    variance_proxy: float = 1.0

    def __post_init__(self) -> None:
        if not (self.scale_c > 0.0) or not math.isfinite(self.scale_c):
            raise ValueError(f"scale_c must be positive and finite, got {self.scale_c}")
        if not (self.variance_proxy > 0.0) or not math.isfinite(self.variance_proxy):
            raise ValueError(
                f"variance_proxy must be positive and finite, got {self.variance_proxy}"
            )

    @property
    def c4(self) -> float:
        """Product scale_c * variance_proxy, the constant inside the sqrt."""
        return self.scale_c * self.variance_proxy


DEFAULT_SCHEDULE = ConfidenceSchedule()


def _checked_delta(delta: float) -> float:
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if delta < MIN_DELTA:
        _note_clamps(1)
        return MIN_DELTA
    return delta


def radius(t: int, delta: float, schedule: ConfidenceSchedule = DEFAULT_SCHEDULE) -> float:
    """Anytime confidence radius after t pulls at failure probability delta.

    Strictly decreasing in t; increasing as delta shrinks (strictly once the
    inner log is past its regularization point).
    """
    if t < 1:
        raise ValueError(f"radius requires t >= 1, got {t}")
    d = _checked_delta(delta)
    return math.sqrt(schedule.c4 * reg_log(math.log2(2.0 * t) / d) / t)


def radius_vec(
    counts: np.ndarray, delta: float, schedule: ConfidenceSchedule = DEFAULT_SCHEDULE
) -> np.ndarray:
    """Vectorized ``radius`` over an integer array of pull counts (all >= 1)."""
    t = np.asarray(counts, dtype=np.float64)
    if t.size and t.min() < 1:
        raise ValueError("radius_vec requires every count >= 1")
    d = _checked_delta(delta)
    inner = np.maximum(np.log(np.log2(2.0 * t) / d), 1.0)
    return np.sqrt(schedule.c4 * inner / t)


def invert_radius(
    gamma: float, delta: float, schedule: ConfidenceSchedule = DEFAULT_SCHEDULE
) -> int:
    """Smallest t >= 1 with radius(t, delta) <= gamma.

    Exponential search for an upper bound, then binary search; the radius is
    strictly decreasing in t so the crossing point is unique.
    """
    if not (gamma > 0.0) or not math.isfinite(gamma):
        raise ValueError(f"gamma must be positive and finite, got {gamma}")
    d = _checked_delta(delta)

    def ok(t: int) -> bool:
        return math.sqrt(schedule.c4 * reg_log(math.log2(2.0 * t) / d) / t) <= gamma

    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > 2**62:  # pragma: no cover - unreachable for sane gamma/delta
            raise OverflowError("invert_radius search exceeded 2**62 pulls")
    if hi == 1:
        return 1
    lo = hi // 2  # radius(lo) > gamma
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
