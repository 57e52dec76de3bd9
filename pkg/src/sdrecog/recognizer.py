"""Threshold recognition of a state-detection error from the sliding raw-key mean."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .stats import EstimatorParams, SlidingEstimator

# Absorbs representation error in mu_nominal +/- t so that values printed as
# the band edge (0.45 for 0.5 - 0.05) stay inside the closed band.
_EDGE_TOL = 1e-12


class Status(enum.Enum):
    NOMINAL = "nominal"
    BELOW = "below"
    ABOVE = "above"

    @property
    def recognized(self) -> bool:
        return self is not Status.NOMINAL


@dataclass(frozen=True)
class RecognizerConfig:
    mu_nominal: float
    threshold_t: float
    params: EstimatorParams

    def __post_init__(self):
        if not 0.0 < self.mu_nominal < 1.0:
            raise ValueError(f"mu_nominal must lie in (0, 1), got {self.mu_nominal}")
        if not self.threshold_t > 0.0:
            raise ValueError(f"threshold_t must be > 0, got {self.threshold_t}")
        if self.threshold_t < self.params.delta_mu:
            raise ValueError(
                f"threshold_t={self.threshold_t} below delta_mu={self.params.delta_mu}: "
                "nominal fluctuations would trigger outside the (delta_mu, epsilon) guarantee")

    @classmethod
    def from_precision(cls, delta_mu: float = 0.05, epsilon: float = 0.001, *,
                       mu_nominal: float = 0.5, threshold_t: Optional[float] = None,
                       window_n: Optional[int] = None) -> "RecognizerConfig":
        """Build a config; ``t`` defaults to ``delta_mu`` and ``n`` to the minimal window."""
        params = EstimatorParams.derive(delta_mu, epsilon, window_n)
        t = params.delta_mu if threshold_t is None else float(threshold_t)
        return cls(float(mu_nominal), t, params)

    def with_window(self, window_n: int) -> "RecognizerConfig":
        params = EstimatorParams(self.params.delta_mu, self.params.epsilon, int(window_n))
        return RecognizerConfig(self.mu_nominal, self.threshold_t, params)

    @property
    def window_n(self) -> int:
        return self.params.window_n

    def count_bounds(self) -> tuple[int, int]:
        """Integer form of the band for a full window.

        Returns ``(below_max, above_min)``: a window holding ``k`` ones is
        recognised iff ``k <= below_max`` or ``k >= above_min``. Derived from
        :func:`check` itself so both views agree bit for bit.
        """
        n = self.window_n
        below_max = math.floor((self.mu_nominal - self.threshold_t) * n) + 1
        below_max = min(max(below_max, -1), n)
        while below_max >= 0 and check(below_max / n, self) is not Status.BELOW:
            below_max -= 1
        while below_max + 1 <= n and check((below_max + 1) / n, self) is Status.BELOW:
            below_max += 1
        above_min = math.ceil((self.mu_nominal + self.threshold_t) * n) - 1
        above_min = min(max(above_min, 0), n + 1)
        while above_min <= n and check(above_min / n, self) is not Status.ABOVE:
            above_min += 1
        while above_min - 1 >= 0 and check((above_min - 1) / n, self) is Status.ABOVE:
            above_min -= 1
        return below_max, above_min


@dataclass(frozen=True)
class RecognitionEvent:
    trigger_index: int
    estimate_at_trigger: float
    direction: Status


def check(mu_hat: float, cfg: RecognizerConfig) -> Status:
    """Classify an estimate against the closed band ``[mu_N - t, mu_N + t]``."""
    if not 0.0 <= mu_hat <= 1.0:
        raise ValueError(f"mu_hat {mu_hat} outside [0, 1]")
    if mu_hat < cfg.mu_nominal - cfg.threshold_t - _EDGE_TOL:
        return Status.BELOW
    if mu_hat > cfg.mu_nominal + cfg.threshold_t + _EDGE_TOL:
        return Status.ABOVE
    return Status.NOMINAL


def expected_recognition_fraction(mu_nominal: float, threshold_t: float,
                                  mu0: float, mu1: float) -> float:
    """Expected share of the window held by post-fault bits when the mean first crosses the band.

    Solves ``mu_N -/+ t = (1 - f) mu0 + f mu1`` for ``f``, taking the lower
    edge when the mean falls and the upper edge when it rises.
    """
    if mu1 == mu0:
        raise ValueError("mu1 equals mu0: a mean that does not move is never recognised")
    lower, upper = mu_nominal - threshold_t, mu_nominal + threshold_t
    if lower <= mu1 <= upper:
        raise ValueError(
            f"unrecognizable shift: mu1={mu1} lies inside the band [{lower}, {upper}]")
    sign = 1.0 if mu1 > mu0 else -1.0
    return (mu_nominal + sign * threshold_t - mu0) / (mu1 - mu0)


def weighted_mean_prediction(mu0: float, mu1: float, n0: float, n1: float) -> float:
    """Expected window mean with ``n0`` bits at mean ``mu0`` and ``n1`` at ``mu1``."""
    if n0 < 0 or n1 < 0:
        raise ValueError("sample counts must be non-negative")
    if n0 + n1 <= 0:
        raise ValueError("empty window: n0 + n1 must be positive")
    return (mu0 * n0 + mu1 * n1) / (n0 + n1)


class Recognizer:
    """Streaming, one-shot recogniser over a raw-key stream.

    Bits are fed in blocks; after the first crossing the recogniser latches
    and ignores further input until :meth:`rearm` is called.
    """

    def __init__(self, cfg: RecognizerConfig):
        self.cfg = cfg
        self.estimator = SlidingEstimator(cfg.window_n)
        self._below_max, self._above_min = cfg.count_bounds()
        self.event: Optional[RecognitionEvent] = None
        self.offset = 0  # raw-key index of the next bit fed

    @property
    def latched(self) -> bool:
        return self.event is not None

    def feed(self, bits) -> Optional[RecognitionEvent]:
        """Consume ``bits``; return the event if this block triggered it.

        Once triggered, bits after the trigger within the block are not
        consumed and :attr:`offset` points just past the trigger.
        """
        if self.latched:
            return None
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        j = self.estimator.scan(bits, self._below_max, self._above_min)
        if j < 0:
            self.offset += bits.shape[0]
            return None
        index = self.offset + j
        self.offset = index + 1
        mu_hat = self.estimator.mean()
        self.event = RecognitionEvent(index, mu_hat, check(mu_hat, self.cfg))
        return self.event

    def rearm(self, mu_nominal: Optional[float] = None, *, reset_window: bool = True) -> None:
        """Clear the latch, optionally moving the nominal mean (e.g. after a protocol switch)."""
        if mu_nominal is not None:
            self.cfg = RecognizerConfig(float(mu_nominal), self.cfg.threshold_t, self.cfg.params)
            self._below_max, self._above_min = self.cfg.count_bounds()
        if reset_window:
            self.estimator = SlidingEstimator(self.cfg.window_n)
        self.event = None


def run_recognition(stream: Iterable[int], cfg: RecognizerConfig) -> Optional[RecognitionEvent]:
    """First bit index at which the sliding estimate leaves the band, or None."""
    return Recognizer(cfg).feed(np.fromiter(stream, dtype=np.uint8)
                                if not isinstance(stream, np.ndarray) else stream)
