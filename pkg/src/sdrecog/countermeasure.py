"""Discarding compromised raw-key bits and falling back from BB84 to 3-state BB84."""
from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .keystream import Basis, DetectorBank, DetectorId
from .recognizer import RecognitionEvent, Status


@dataclass(frozen=True)
class RegressionModel:
    """Recognition-delay regression in the window size ``n``.

    ``linear`` evaluates ``alpha*n - beta`` (mean delay), ``sqrt`` evaluates
    ``sqrt(alpha*n - beta)`` (delay standard deviation).
    """

    kind: str
    alpha: float
    beta: float
    rmse: float = 0.0
    source: str = "published"

    def __post_init__(self):
        if self.kind not in ("linear", "sqrt"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def radicand(self, n: float) -> float:
        return self.alpha * n - self.beta

    def __call__(self, n: float) -> float:
        r = self.radicand(n)
        if self.kind == "linear":
            return r
        if r <= 0.0:
            raise ValueError(f"window too small for sigma model: alpha*n - beta = {r:.6g} <= 0 at n={n}")
        return math.sqrt(r)

    def to_line(self) -> str:
        return f"{self.kind},{self.alpha!r},{self.beta!r},{self.rmse!r}"

    @classmethod
    def from_line(cls, line: str, source: str = "fitted") -> "RegressionModel":
        parts = [p.strip() for p in line.strip().split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected 'kind,alpha,beta,rmse', got {line.strip()!r}")
        kind, alpha, beta, rmse = parts
        return cls(kind, float(alpha), float(beta), float(rmse), source)


# Published calibration (delta_mu = t = 0.05, epsilon = 0.001, mean 1/2 -> 1/3).
PUBLISHED_LINEAR = RegressionModel("linear", 0.300, 5.058, 9.156)
PUBLISHED_SQRT = RegressionModel("sqrt", 8.770, 2332.743, 11.068)

# Rounded n = 50,000 components quoted alongside the models.
PUBLISHED_MEAN_BITS_50K = 14_993
PUBLISHED_STD_BITS_50K = 661


def mean_recognition_bits(model: RegressionModel, n: int) -> int:
    """Expected bits between fault onset and recognition, rounded up."""
    value = model.radicand(n)
    if value <= 0.0:
        raise ValueError(f"window n={n} too small for the mean model (needs n > {model.beta / model.alpha:.4g})")
    return math.ceil(value)


def std_recognition_bits(model: RegressionModel, n: int) -> int:
    """Standard deviation of the recognition delay in bits, rounded up."""
    return math.ceil(model(n))


def discard_from_components(mean_bits: int, std_bits: int, k_sigma: float) -> int:
    if k_sigma < 0:
        raise ValueError(f"k_sigma must be >= 0, got {k_sigma}")
    return int(mean_bits) + math.ceil(k_sigma * std_bits)


def discard_count(n: int, k_sigma: float = 3.0, linear: RegressionModel = PUBLISHED_LINEAR,
                  sqrt: RegressionModel = PUBLISHED_SQRT) -> int:
    """Bits to drop so the insecure region is covered ``k_sigma`` deviations past its mean.

    Each component is rounded up before summing.
    """
    return discard_from_components(mean_recognition_bits(linear, n),
                                   std_recognition_bits(sqrt, n), k_sigma)


def adjusted_rate(raw_len: int, n_discarded: int, base_rate: float = 1.0) -> float:
    """Key rate after dropping ``n_discarded`` of ``raw_len`` raw-key bits."""
    if raw_len <= 0:
        raise ValueError(f"raw key length must be positive, got {raw_len}")
    if not 0 <= n_discarded <= raw_len:
        raise ValueError(f"cannot discard {n_discarded} bits from a {raw_len}-bit raw key")
    return (raw_len - n_discarded) / raw_len * base_rate


@dataclass(frozen=True)
class CountermeasurePlan:
    discard_count: int
    k_sigma: float
    missing_state: DetectorId
    adjusted_rate_factor: float
    provenance: str = "published"


class Protocol(enum.Enum):
    BB84 = "BB84"
    THREE_STATE = "3-state-BB84"


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionState:
    protocol: Protocol = Protocol.BB84
    raw_key_length: int = 0
    discarded: int = 0
    missing: Optional[DetectorId] = None

    @property
    def key_basis(self) -> Optional[Basis]:
        """Basis whose detectors both still work; None under BB84."""
        if self.missing is None:
            return None
        return Basis.X if self.missing.basis is Basis.Z else Basis.Z

    @property
    def estimation_state(self) -> Optional[DetectorId]:
        """Single state Alice still sends in the broken basis, used for parameter estimation."""
        return None if self.missing is None else self.missing.partner

    def grow(self, bits: int) -> "SessionState":
        return replace(self, raw_key_length=self.raw_key_length + int(bits))


_MSG_RE = re.compile(r"^SWITCH3S state=(Z0|Z1|X0|X1) effective=(\d+)$")


@dataclass(frozen=True)
class ClassicalMessage:
    """Bob's public notice to Alice; reveals only which state to drop and from when."""

    missing_state: DetectorId
    effective_index: int
    kind: str = "switch-to-3-state"

    def to_line(self) -> str:
        return f"SWITCH3S state={self.missing_state.name} effective={self.effective_index}"

    @classmethod
    def from_line(cls, line: str) -> "ClassicalMessage":
        m = _MSG_RE.match(line.strip())
        if m is None:
            raise ValueError(f"not a SWITCH3S message: {line.strip()!r}")
        return cls(DetectorId[m.group(1)], int(m.group(2)))


def plan_countermeasure(session: SessionState, missing: DetectorId, n: int, k_sigma: float = 3.0,
                        linear: RegressionModel = PUBLISHED_LINEAR,
                        sqrt: RegressionModel = PUBLISHED_SQRT) -> CountermeasurePlan:
    n_d = min(discard_count(n, k_sigma, linear, sqrt), session.raw_key_length)
    provenance = "published" if linear.source == sqrt.source == "published" else "fitted"
    factor = adjusted_rate(session.raw_key_length, n_d) if session.raw_key_length else 0.0
    return CountermeasurePlan(n_d, k_sigma, DetectorId(missing), factor, provenance)


def apply_countermeasure(session: SessionState, event: RecognitionEvent, missing: DetectorId,
                         plan: CountermeasurePlan) -> tuple[SessionState, ClassicalMessage, range]:
    """Drop the insecure tail of the raw key and switch the session to 3-state BB84.

    The discarded range is the ``plan.discard_count`` bits ending at (and
    including) the trigger index, clipped at the start of the key.

    Returns:
        The new session, the message for Alice and the discarded index range.
    """
    if session.protocol is not Protocol.BB84:
        raise SessionError(f"session already in {session.protocol.value} mode")
    if event.trigger_index < 0 or event.trigger_index >= session.raw_key_length:
        raise ValueError(
            f"trigger index {event.trigger_index} outside the raw key of length {session.raw_key_length}")
    missing = DetectorId(missing)
    start = max(0, event.trigger_index + 1 - plan.discard_count)
    dropped = range(start, event.trigger_index + 1)
    new = SessionState(Protocol.THREE_STATE, session.raw_key_length - len(dropped),
                       session.discarded + len(dropped), missing)
    return new, ClassicalMessage(missing, event.trigger_index + 1), dropped


def post_transition_mean(bank: DetectorBank, session: SessionState) -> float:
    """Ones-fraction of the raw key once only the intact basis produces key bits."""
    if session.protocol is not Protocol.THREE_STATE:
        raise SessionError("post-transition mean is only defined in 3-state mode")
    if session.key_basis is Basis.Z:
        e0, e1 = bank[DetectorId.Z0], bank[DetectorId.Z1]
    else:
        e0, e1 = bank[DetectorId.X0], bank[DetectorId.X1]
    if e0 + e1 <= 0.0:
        raise ValueError("both key-basis detectors are dead")
    return e1 / (e0 + e1)


def identify_missing(detectors, direction) -> DetectorId:
    """Guess the failed detector from per-detector click counts in the recent raw key.

    A falling mean means a bit-1 detector went quiet, a rising one a bit-0
    detector; among those candidates the one with the fewest clicks wins.
    """
    counts = np.bincount(np.asarray(detectors, dtype=np.int64), minlength=4)
    bit = 1 if direction is Status.BELOW else 0
    candidates = [d for d in DetectorId if d.bit == bit]
    return min(candidates, key=lambda d: (counts[int(d)], int(d)))

