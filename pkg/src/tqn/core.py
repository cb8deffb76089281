"""Temporal discounting and time-aware state windows.

The discount for an interval ``dt`` is ``b ** (dt / tau)``: ``tau`` is the
action time window and ``b`` the belief that the rewarded event happens
within it.  All evaluation goes through ``exp((dt / tau) * ln b)`` so that
products of discounts over consecutive intervals match the discount of the
summed interval to rounding error.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class TemporalDiscountSpec:
    tau: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise DomainError(f"tau must be a positive finite duration, got {self.tau!r}")
        if not (0.0 < self.b < 1.0):
            raise DomainError(f"belief b must lie in the open interval (0, 1), got {self.b!r}")

    @property
    def log_b(self) -> float:
        return math.log(self.b)


def _discount_scalar(spec: TemporalDiscountSpec, dt: float) -> float:
    if not dt >= 0:  # also rejects NaN
        raise DomainError(f"interval must be >= 0, got {dt!r}")
    return math.exp((dt / spec.tau) * spec.log_b)


def temporal_discount(spec: TemporalDiscountSpec, dt):
    """Discount applied to a value observed ``dt`` time units ahead.

    ``dt`` may be a scalar or an array; arrays are evaluated element by
    element with the same scalar routine so batched and single calls agree
    bit for bit.
    """
    if np.ndim(dt) == 0:
        return _discount_scalar(spec, float(dt))
    arr = np.asarray(dt, dtype=float)
    out = np.fromiter((_discount_scalar(spec, x) for x in arr.ravel()), dtype=float, count=arr.size)
    return out.reshape(arr.shape)


def equivalent_static_discount(spec: TemporalDiscountSpec, mean_dt: float) -> float:
    """Constant per-step discount matching ``spec`` at the average interval."""
    if not mean_dt > 0:
        raise DomainError(f"mean interval must be > 0, got {mean_dt!r}")
    return _discount_scalar(spec, float(mean_dt))


def exponential_rate(spec: TemporalDiscountSpec) -> float:
    """Decay rate ``k`` with ``temporal_discount(spec, dt) == exp(-k * dt)``."""
    return -spec.log_b / spec.tau


@dataclass(frozen=True)
class TimedObservation:
    features: tuple[float, ...]
    dt_prev: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(float(x) for x in self.features))
        if not self.dt_prev >= 0:
            raise DomainError(f"dt_prev must be >= 0, got {self.dt_prev!r}")


@dataclass(frozen=True)
class StateWindow:
    """The ``c`` most recent observations (oldest first) and the interval
    until the next observation is expected."""

    observations: tuple[TimedObservation, ...]
    dt_next: float

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.observations:
            raise DomainError("a state window needs at least one observation")
        d = len(self.observations[0].features)
        if any(len(o.features) != d for o in self.observations):
            raise DomainError("observations in a window must share one dimensionality")
        if not self.dt_next >= 0:
            raise DomainError(f"dt_next must be >= 0, got {self.dt_next!r}")

    @property
    def length(self) -> int:
        return len(self.observations)

    @property
    def feature_dim(self) -> int:
        return len(self.observations[0].features)

    @classmethod
    def padded(cls, history: Sequence[TimedObservation], c: int, dt_next: float) -> "StateWindow":
        """Window over the last ``c`` entries of ``history``.

        Short histories are front-padded with copies of the earliest
        observation carrying ``dt_prev = 0``.
        """
        if c < 1:
            raise DomainError(f"history length must be >= 1, got {c}")
        if not history:
            raise DomainError("cannot build a window from an empty history")
        recent = list(history[-c:])
        if len(recent) < c:
            pad = TimedObservation(recent[0].features, 0.0)
            recent = [pad] * (c - len(recent)) + recent
        return cls(tuple(recent), dt_next)


def state_vector_size(c: int, d: int, time_aware: bool = True) -> int:
    return c * d + c if time_aware else c * d


def build_state_vector(window: StateWindow, time_aware: bool = True) -> np.ndarray:
    """Flatten a window into the network input.

    Layout: features of every observation (oldest first), then the ``c - 1``
    intervals between consecutive observations, then ``dt_next``.  The
    time-unaware layout is the feature block alone.
    """
    if not isinstance(window, StateWindow):
        raise DomainError(f"expected a StateWindow, got {type(window).__name__}")
    obs = window.observations
    parts: list[float] = []
    for o in obs:
        parts.extend(o.features)
    if time_aware:
        parts.extend(o.dt_prev for o in obs[1:])
        parts.append(window.dt_next)
    return np.asarray(parts, dtype=float)


class History:
    """Rolling buffer of recent observations for one episode."""

    def __init__(self, c: int):
        if c < 1:
            raise DomainError(f"history length must be >= 1, got {c}")
        self.c = c
        self._obs: deque[TimedObservation] = deque(maxlen=c)

    def reset(self, first: TimedObservation) -> None:
        self._obs.clear()
        self._obs.append(TimedObservation(first.features, 0.0))

    def push(self, obs: TimedObservation) -> None:
        self._obs.append(obs)

    def window(self, dt_next: float) -> StateWindow:
        return StateWindow.padded(list(self._obs), self.c, dt_next)


def windows_from_log(observations: Iterable[TimedObservation], dts_next: Iterable[float], c: int) -> list[StateWindow]:
    """Rebuild the window seen at each step of a logged observation sequence."""
    hist = History(c)
    out = []
    for i, (o, dt) in enumerate(zip(observations, dts_next)):
        if i == 0:
            hist.reset(o)
        else:
            hist.push(o)
        out.append(hist.window(dt))
    return out
