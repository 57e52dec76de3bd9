"""Raw-key bit streams for Bob, with state-detection faults injected on a schedule.

Two generators are provided. ``Bernoulli`` draws each raw-key bit directly
from a probability, which is what the recognition simulations need.
``DetectorModel`` simulates the passive four-detector receiver channel use by
channel use: Alice picks a state, the beamsplitter picks Bob's basis, the
matching detector clicks with its efficiency, and only matched-basis clicks
survive sifting. Lost and sifted-out rounds never appear in the raw key, so
all indices count raw-key bits.

Randomness comes from numpy's Philox4x64-10 counter-based generator keyed
through ``SeedSequence``. One double is consumed per Bernoulli bit and three
per detector-model channel use, always in order, so a stream is a prefix of
any longer stream with the same configuration.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _accel

PRNG_NAME = "numpy-philox4x64-10"
_U64_MAX = 2**64 - 1
_LINE_BITS = 64


class Basis(enum.Enum):
    Z = "Z"
    X = "X"


class DetectorId(enum.IntEnum):
    """Detector for each BB84 state: |0>, |1>, |+>, |->."""

    Z0 = 0
    Z1 = 1
    X0 = 2
    X1 = 3

    @property
    def basis(self) -> Basis:
        return Basis.Z if self < 2 else Basis.X

    @property
    def bit(self) -> int:
        return int(self) & 1

    @property
    def partner(self) -> "DetectorId":
        """The other detector of the same basis."""
        return DetectorId(int(self) ^ 1)

    @classmethod
    def parse(cls, text: str) -> "DetectorId":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown detector {text!r}; expected one of Z0, Z1, X0, X1") from None


@dataclass(frozen=True)
class DetectorBank:
    """Click-probability multiplier of each detector, in DetectorId order."""

    z0: float = 1.0
    z1: float = 1.0
    x0: float = 1.0
    x1: float = 1.0

    def __post_init__(self):
        for name, eta in zip(("z0", "z1", "x0", "x1"), self.as_array()):
            if not 0.0 <= eta <= 1.0:
                raise ValueError(f"efficiency {name}={eta} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.z0, self.z1, self.x0, self.x1], dtype=np.float64)

    def __getitem__(self, det: DetectorId) -> float:
        return float(self.as_array()[int(det)])

    def with_efficiency(self, det: DetectorId, eta: float) -> "DetectorBank":
        return replace(self, **{DetectorId(det).name.lower(): float(eta)})

    @classmethod
    def from_sequence(cls, values) -> "DetectorBank":
        z0, z1, x0, x1 = (float(v) for v in values)
        return cls(z0, z1, x0, x1)


def sifted_bit_mean(bank: DetectorBank) -> float:
    """P(raw-key bit = 1) for a BB84 session through ``bank``.

    Alice's four states are equally likely and half of all photons reach the
    matching basis, so each detector contributes in proportion to its
    efficiency.
    """
    eta = bank.as_array()
    total = eta.sum()
    if total <= 0.0:
        raise ValueError("no detectable states: every detector efficiency is 0")
    return float((eta[DetectorId.Z1] + eta[DetectorId.X1]) / total)


@dataclass(frozen=True)
class Bernoulli:
    mean: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.mean <= 1.0:
            raise ValueError(f"mean {self.mean} outside [0, 1]")

    def token(self) -> str:
        return f"bernoulli:{self.mean!r}"


@dataclass(frozen=True)
class DetectorModel:
    bank: DetectorBank = field(default_factory=DetectorBank)

    def __post_init__(self):
        sifted_bit_mean(self.bank)

    def token(self) -> str:
        return "detector:" + ",".join(repr(float(v)) for v in self.bank.as_array())


@dataclass(frozen=True)
class ErrorSchedule:
    """When the fault starts and what it does.

    Detector-model streams use ``detector`` and ``new_efficiency``;
    Bernoulli streams use ``post_mean``.
    """

    onset_index: int
    detector: Optional[DetectorId] = None
    new_efficiency: float = 0.0
    post_mean: Optional[float] = None

    def __post_init__(self):
        if self.onset_index < 0:
            raise ValueError(f"onset_index must be >= 0, got {self.onset_index}")
        if self.post_mean is not None and not 0.0 <= self.post_mean <= 1.0:
            raise ValueError(f"post_mean {self.post_mean} outside [0, 1]")
        if not 0.0 <= self.new_efficiency < 1.0:
            raise ValueError(f"new_efficiency {self.new_efficiency} outside [0, 1)")

    def token(self) -> str:
        return str(self.onset_index)


@dataclass(frozen=True)
class StreamConfig:
    mode: Union[Bernoulli, DetectorModel]
    seed: int = 0
    schedule: Optional[ErrorSchedule] = None

    def __post_init__(self):
        if not 0 <= int(self.seed) <= _U64_MAX:
            raise ValueError(f"seed {self.seed} is not a 64-bit unsigned integer")
        s = self.schedule
        if s is None:
            return
        if isinstance(self.mode, Bernoulli):
            if s.post_mean is None:
                raise ValueError("a Bernoulli schedule needs post_mean")
        else:
            if s.detector is None:
                raise ValueError("a detector-model schedule needs a detector")
            nominal = self.mode.bank[s.detector]
            if not s.new_efficiency < nominal:
                raise ValueError(
                    f"new_efficiency {s.new_efficiency} must be below the nominal "
                    f"efficiency {nominal} of {s.detector.name}")
            sifted_bit_mean(self.degraded_bank())

    def degraded_bank(self) -> DetectorBank:
        s = self.schedule
        return self.mode.bank.with_efficiency(s.detector, s.new_efficiency)

    def header(self) -> str:
        onset = self.schedule.token() if self.schedule else "none"
        extra = ""
        if self.schedule is not None:
            if isinstance(self.mode, Bernoulli):
                extra = f" post={self.schedule.post_mean!r}"
            else:
                extra = f" fault={self.schedule.detector.name}:{self.schedule.new_efficiency!r}"
        return f"# seed={int(self.seed)} mode={self.mode.token()} onset={onset}{extra} prng={PRNG_NAME}"


# Alice's state distribution and which sifted clicks become key bits.
_BB84_CDF = np.array([0.25, 0.5, 0.75, 1.0])
_ALL_STATES = np.ones(4, dtype=np.bool_)


def _three_state_tables(missing: DetectorId):
    """Alice's preparation table after dropping ``missing``.

    Each basis is still picked half the time; the broken basis always sends
    its surviving state, and only the intact basis yields key bits.
    """
    probs = np.full(4, 0.25)
    probs[int(missing)] = 0.0
    probs[int(missing.partner)] = 0.5
    keep = np.zeros(4, dtype=np.bool_)
    for det in DetectorId:
        keep[int(det)] = det.basis != missing.basis
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    return cdf, keep


class KeyStream:
    """Sequential raw-key generator.

    ``take(k)`` returns the next ``k`` bits; consecutive calls concatenate to
    the same sequence a single large call would produce.
    """

    def __init__(self, config: StreamConfig):
        self.config = config
        self.position = 0
        self._rng = np.random.Generator(np.random.Philox(int(config.seed)))
        self._pending = np.empty((0, 3))
        self._cdf = _BB84_CDF
        self._keep = _ALL_STATES
        self.missing: Optional[DetectorId] = None
        self.last_detectors = np.empty(0, dtype=np.int8)

    @property
    def onset(self) -> Optional[int]:
        s = self.config.schedule
        return None if s is None else s.onset_index

    def switch_to_three_state(self, missing: DetectorId) -> None:
        """Alice stops preparing ``missing``; only intact-basis bits are key from here."""
        if isinstance(self.config.mode, Bernoulli):
            raise TypeError("3-state operation needs a detector-model stream")
        self.missing = DetectorId(missing)
        self._cdf, self._keep = _three_state_tables(self.missing)

    def take(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        onset = self.onset
        pieces, dets = [], []
        remaining = count
        while remaining:
            if onset is not None and self.position < onset:
                step, faulty = min(remaining, onset - self.position), False
            else:
                step, faulty = remaining, onset is not None
            if isinstance(self.config.mode, Bernoulli):
                pieces.append(self._bernoulli(step, faulty))
            else:
                d = self._detector(step, faulty)
                dets.append(d)
                pieces.append((d & 1).astype(np.uint8))
            self.position += step
            remaining -= step
        if dets:
            self.last_detectors = np.concatenate(dets)
        elif not isinstance(self.config.mode, Bernoulli):
            self.last_detectors = np.empty(0, dtype=np.int8)
        if not pieces:
            return np.empty(0, dtype=np.uint8)
        return pieces[0] if len(pieces) == 1 else np.concatenate(pieces)

    def _bernoulli(self, count: int, faulty: bool) -> np.ndarray:
        mean = self.config.schedule.post_mean if faulty else self.config.mode.mean
        return (self._rng.random(count) < mean).astype(np.uint8)

    def _detector(self, count: int, faulty: bool) -> np.ndarray:
        bank = self.config.degraded_bank() if faulty else self.config.mode.bank
        eff = bank.as_array()
        if not (eff * self._keep).any():
            raise ValueError("no detectable key states: every key-basis detector is dead")
        # expected channel uses per key bit, padded so one batch usually suffices
        p_key = 0.5 * float(np.dot(np.diff(self._cdf, prepend=0.0), eff * self._keep))
        out = []
        remaining = count
        while remaining:
            if self._pending.shape[0] == 0:
                batch = int(remaining / p_key * 1.05) + 64
                self._pending = self._rng.random((batch, 3))
            states, used = _accel.detector_rounds(self._pending, self._cdf, eff, self._keep, remaining)
            self._pending = self._pending[used:]
            out.append(states)
            remaining -= states.shape[0]
        return out[0] if len(out) == 1 else np.concatenate(out)


def generate(config: StreamConfig, count: int) -> np.ndarray:
    """The first ``count`` raw-key bits of ``config``'s stream, as uint8."""
    return KeyStream(config).take(count)


def write_stream(path, bits: np.ndarray, header: str) -> None:
    """Dump bits as ASCII '0'/'1', 64 per line, after a one-line ``#`` header."""
    text = np.asarray(bits, dtype=np.uint8) + ord("0")
    raw = text.tobytes().decode("ascii")
    with open(path, "w", newline="\n") as fh:
        fh.write(header.rstrip("\n") + "\n")
        for i in range(0, len(raw), _LINE_BITS):
            fh.write(raw[i:i + _LINE_BITS] + "\n")


def read_stream(path) -> tuple[dict, np.ndarray]:
    """Inverse of :func:`write_stream`; returns ``(header fields, bits)``."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError(f"{path}:1: missing '# seed=... mode=... onset=...' header")
    meta = {}
    for tok in lines[0][1:].split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"{path}:1: malformed header token {tok!r}")
        meta[key] = value
    for key in ("seed", "mode", "onset"):
        if key not in meta:
            raise ValueError(f"{path}:1: header lacks {key}=")
    chunks = []
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if set(line) - {"0", "1"}:
            raise ValueError(f"{path}:{lineno}: expected only '0'/'1' characters")
        chunks.append(line)
    raw = "".join(chunks).encode("ascii")
    bits = np.frombuffer(raw, dtype=np.uint8) - ord("0")
    return meta, bits.astype(np.uint8)
