"""Entropy measures, Chernoff-Hoeffding window sizing and the sliding mean estimator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _accel


def _check_probability(p: float) -> float:
    p = float(p)
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError(f"probability {p} outside [0, 1]")
    return p


def binary_entropy(p: float) -> float:
    """Shannon entropy in bits of a coin with P(1) = p; 0 log 0 is taken as 0."""
    p = _check_probability(p)
    if p == 0.0 or p == 1.0:
        return 0.0
    q = 1.0 - p
    return -p * math.log2(p) - q * math.log2(q)


def min_entropy_per_bit(p: float) -> float:
    """Per-bit (non-smooth) min-entropy, -log2 of the likelier outcome."""
    p = _check_probability(p)
    return -math.log2(max(p, 1.0 - p)) + 0.0


def skr_cap(p: float) -> float:
    """Best-case secret-key rate per raw-key bit when the raw key has ones-fraction ``p``.

    With Eve's information and Bob's residual uncertainty both ignored the
    Devetak-Winter rate is capped by the entropy of Alice's raw key.
    """
    return binary_entropy(p)


def window_size(delta_mu: float, epsilon: float) -> int:
    """Smallest n with n >= ln(2/epsilon) / (2 delta_mu^2).

    Windows of this size keep the sample mean within ``delta_mu`` of the true
    mean with probability at least ``1 - epsilon``.
    """
    delta_mu, epsilon = float(delta_mu), float(epsilon)
    if not delta_mu > 0.0 or math.isinf(delta_mu):
        raise ValueError(f"delta_mu must be a positive finite number, got {delta_mu}")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    return max(1, math.ceil(math.log(2.0 / epsilon) / (2.0 * delta_mu * delta_mu)))


@dataclass(frozen=True)
class EstimatorParams:
    delta_mu: float
    epsilon: float
    window_n: int

    def __post_init__(self):
        if not self.delta_mu > 0.0:
            raise ValueError(f"delta_mu must be > 0, got {self.delta_mu}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if int(self.window_n) < 1:
            raise ValueError(f"window_n must be positive, got {self.window_n}")
        bound = window_size(self.delta_mu, self.epsilon)
        if self.window_n < bound:
            raise ValueError(
                f"window_n={self.window_n} is below the Chernoff-Hoeffding minimum "
                f"{bound} for delta_mu={self.delta_mu}, epsilon={self.epsilon}")

    @classmethod
    def derive(cls, delta_mu: float, epsilon: float, window_n: Optional[int] = None) -> "EstimatorParams":
        """Params with ``window_n`` defaulting to the minimal admissible window."""
        if window_n is None:
            window_n = window_size(delta_mu, epsilon)
        return cls(float(delta_mu), float(epsilon), int(window_n))


class SlidingEstimator:
    """Mean of the latest ``window_n`` raw-key bits, advanced one bit at a time.

    No mean is reported until the window has been filled once.
    """

    def __init__(self, window_n: int):
        window_n = int(window_n)
        if window_n < 1:
            raise ValueError(f"window_n must be positive, got {window_n}")
        self.window_n = window_n
        self.buffer = np.zeros(window_n, dtype=np.uint8)
        self.head = 0
        self.filled = 0
        self.running_sum = 0
        self.seen = 0

    def push(self, bit: int) -> "SlidingEstimator":
        if bit not in (0, 1):
            raise ValueError(f"bit must be 0 or 1, got {bit!r}")
        if self.filled == self.window_n:
            self.running_sum -= int(self.buffer[self.head])
        else:
            self.filled += 1
        self.buffer[self.head] = bit
        self.running_sum += int(bit)
        self.head = (self.head + 1) % self.window_n
        self.seen += 1
        return self

    def scan(self, bits: np.ndarray, below_max: int = -1, above_min: Optional[int] = None) -> int:
        """Push a block of bits, stopping early once the count leaves ``(below_max, above_min)``.

        Returns the offset of the bit that stopped the scan, or -1 if every
        bit was consumed. With the default bounds the scan never stops early.
        """
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        if above_min is None:
            above_min = self.window_n + 1
        j, self.head, self.filled, self.running_sum = _accel.scan(
            bits, self.buffer, self.head, self.filled, self.running_sum, below_max, above_min)
        self.seen += (j + 1) if j >= 0 else bits.shape[0]
        return j

    def extend(self, bits) -> "SlidingEstimator":
        self.scan(np.asarray(bits))
        return self

    @property
    def ready(self) -> bool:
        return self.filled == self.window_n

    def mean(self) -> Optional[float]:
        """Running mean, or None while the window is still filling."""
        if not self.ready:
            return None
        return self.running_sum / self.window_n

    def contents(self) -> np.ndarray:
        """Window bits, oldest first."""
        if self.ready:
            return np.concatenate((self.buffer[self.head:], self.buffer[:self.head]))
        return self.buffer[:self.filled].copy()


def window_means(bits: np.ndarray, window_n: int) -> np.ndarray:
    """Sliding mean ending at every index; NaN before the first full window."""
    bits = np.asarray(bits, dtype=np.int64)
    out = np.full(bits.shape[0], np.nan)
    if bits.shape[0] >= window_n:
        csum = np.concatenate(([0], np.cumsum(bits)))
        out[window_n - 1:] = (csum[window_n:] - csum[:-window_n]) / window_n
    return out
