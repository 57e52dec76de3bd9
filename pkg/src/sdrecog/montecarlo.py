"""Monte Carlo calibration of the recognition delay and of the discard margin.

Each trial streams raw-key bits whose mean moves from ``mu0`` to ``mu1``
right after one full warm-up window and records how many bits after the
onset the recogniser fires. Trial ``i`` at window size ``n`` is seeded from
``(master_seed, n, i)`` alone, so results do not depend on execution order
or on the number of worker processes.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .countermeasure import PUBLISHED_LINEAR, PUBLISHED_SQRT, RegressionModel, discard_count
from .keystream import Bernoulli, ErrorSchedule, KeyStream, StreamConfig
from .recognizer import Recognizer, RecognizerConfig
from .stats import window_size

DEFAULT_SIZES = (5_000, 10_000, 20_000, 30_000, 40_000, 50_000, 75_000, 100_000)
CSV_HEADER = ("window_n", "trials", "mean_nr_bits", "std_bits", "failures")
NO_RECOGNITION = np.iinfo(np.int64).min


def trial_seed(master_seed: int, window_n: int, trial: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(window_n), int(trial)])
    return int(ss.generate_state(1, np.uint64)[0])


def recognition_delay(cfg: RecognizerConfig, mu0: float, mu1: float, seed: int,
                      horizon_factor: int = 10) -> int:
    """Bits from onset to recognition for one simulated fault.

    Returns ``NO_RECOGNITION`` when nothing fires within ``horizon_factor``
    windows after the onset, and a negative delay for a false alarm that
    fires before the onset.
    """
    n = cfg.window_n
    onset = n
    stream = KeyStream(StreamConfig(Bernoulli(mu0), seed, ErrorSchedule(onset, post_mean=mu1)))
    rec = Recognizer(cfg)
    horizon = onset + horizon_factor * n
    # first block reaches well past the expected crossing at ~0.3n
    block = onset + n // 2 + 256
    while stream.position < horizon:
        event = rec.feed(stream.take(min(block, horizon - stream.position)))
        if event is not None:
            return event.trigger_index - onset
        block = n
    return int(NO_RECOGNITION)


def _delay_block(args) -> np.ndarray:
    cfg, mu0, mu1, master_seed, start, stop, horizon_factor = args
    n = cfg.window_n
    return np.array([recognition_delay(cfg, mu0, mu1, trial_seed(master_seed, n, i), horizon_factor)
                     for i in range(start, stop)], dtype=np.int64)


def trial_delays(cfg: RecognizerConfig, trials: int, shift=(0.5, 1.0 / 3.0), master_seed: int = 0,
                 horizon_factor: int = 10, workers: int = 1) -> np.ndarray:
    """Raw recognition delays for ``trials`` independent faults at ``cfg.window_n``."""
    mu0, mu1 = shift
    if workers <= 1:
        return _delay_block((cfg, mu0, mu1, master_seed, 0, trials, horizon_factor))
    step = max(1, math.ceil(trials / (4 * workers)))
    jobs = [(cfg, mu0, mu1, master_seed, s, min(s + step, trials), horizon_factor)
            for s in range(0, trials, step)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_delay_block, jobs)))


@dataclass(frozen=True)
class SweepConfig:
    window_sizes: Sequence[int] = DEFAULT_SIZES
    trials_per_size: int = 2500
    recognizer: RecognizerConfig = field(default_factory=RecognizerConfig.from_precision)
    shift: tuple = (0.5, 1.0 / 3.0)
    master_seed: int = 0
    horizon_factor: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.trials_per_size < 2:
            raise ValueError(f"need at least 2 trials per size, got {self.trials_per_size}")
        if not self.window_sizes:
            raise ValueError("window_sizes is empty")
        floor = window_size(self.recognizer.params.delta_mu, self.recognizer.params.epsilon)
        for n in self.window_sizes:
            if int(n) < floor:
                raise ValueError(f"window size {n} below the minimum {floor} for these (delta_mu, epsilon)")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError(f"master_seed {self.master_seed} is not a 64-bit unsigned integer")


@dataclass(frozen=True)
class SweepRow:
    window_n: int
    trials: int
    mean_nr_bits: float
    std_bits: float
    failures: int


@dataclass
class SweepResult:
    rows: list
    delays: dict = field(default_factory=dict, repr=False, compare=False)

    def points(self, column: str = "mean_nr_bits") -> list:
        return [(r.window_n, getattr(r, column)) for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.window_n, r.trials, repr(r.mean_nr_bits), repr(r.std_bits), r.failures])

    @classmethod
    def from_csv(cls, path) -> "SweepResult":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
                raise ValueError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
            for lineno, rec in enumerate(reader, start=2):
                if not rec:
                    continue
                try:
                    if len(rec) != len(CSV_HEADER):
                        raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(rec)}")
                    row = SweepRow(int(rec[0]), int(rec[1]), float(rec[2]), float(rec[3]), int(rec[4]))
                    if row.std_bits < 0 or not math.isfinite(row.mean_nr_bits):
                        raise ValueError("non-finite mean or negative std")
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from None
                rows.append(row)
        if not rows:
            raise ValueError(f"{path}: no data rows")
        return cls(rows)


def summarize(window_n: int, delays: np.ndarray) -> SweepRow:
    """Mean and sample std of the successful trials; failures are counted, not averaged."""
    ok = delays[delays >= 0]
    failures = int(delays.shape[0] - ok.shape[0])
    mean = float(ok.mean()) if ok.size else math.nan
    std = float(ok.std(ddof=1)) if ok.size > 1 else math.nan
    return SweepRow(int(window_n), int(delays.shape[0]), mean, std, failures)


def run_sweep(cfg: SweepConfig) -> SweepResult:
    result = SweepResult([])
    for n in cfg.window_sizes:
        rc = cfg.recognizer.with_window(int(n))
        d = trial_delays(rc, cfg.trials_per_size, cfg.shift, cfg.master_seed, cfg.horizon_factor, cfg.workers)
        result.delays[int(n)] = d
        result.rows.append(summarize(n, d))
    return result


@dataclass(frozen=True)
class FitResult:
    model: RegressionModel

    @property
    def rmse(self) -> float:
        return self.model.rmse

    def to_line(self) -> str:
        return self.model.to_line()


def _affine_ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if np.unique(x).size < 2:
        raise ValueError("need at least 2 distinct window sizes to fit")
    design = np.column_stack((x, np.ones_like(x)))
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(slope), float(intercept)


def _as_xy(points):
    arr = np.asarray(list(points), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be (n, value) pairs")
    return arr[:, 0], arr[:, 1]


def fit_linear(points) -> FitResult:
    """Least-squares fit of ``n_r = alpha*n - beta``."""
    x, y = _as_xy(points)
    alpha, intercept = _affine_ols(x, y)
    resid = y - (alpha * x + intercept)
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    return FitResult(RegressionModel("linear", alpha, -intercept, rmse, "fitted"))


def fit_sqrt(points) -> FitResult:
    """Fit ``sigma = sqrt(alpha*n - beta)`` by least squares on ``sigma**2``.

    The reported rmse is measured in sigma units (bits).
    """
    x, y = _as_xy(points)
    if (y < 0).any():
        raise ValueError("standard deviations must be non-negative")
    alpha, intercept = _affine_ols(x, y ** 2)
    pred = np.sqrt(np.clip(alpha * x + intercept, 0.0, None))
    rmse = float(np.sqrt(np.mean((y - pred) ** 2)))
    return FitResult(RegressionModel("sqrt", alpha, -intercept, rmse, "fitted"))


def coverage_fraction(delays: np.ndarray, n_discard: int) -> float:
    """Share of trials whose whole insecure region lies inside the discard.

    The bits from onset through the trigger number ``delay + 1``. Trials
    that never fired count as uncovered.
    """
    delays = np.asarray(delays)
    covered = (delays >= 0) & (delays + 1 <= n_discard)
    return float(covered.mean())


def coverage_check(n: int, k_sigma: float, trials: int, models=(PUBLISHED_LINEAR, PUBLISHED_SQRT),
                   recognizer: Optional[RecognizerConfig] = None, shift=(0.5, 1.0 / 3.0),
                   master_seed: int = 0, workers: int = 1) -> float:
    """Fraction of simulated faults fully covered by ``discard_count(n, k_sigma)``."""
    if trials < 100:
        raise ValueError(f"coverage needs at least 100 trials, got {trials}")
    rc = (recognizer or RecognizerConfig.from_precision()).with_window(n)
    linear, sqrt = models
    delays = trial_delays(rc, trials, shift, master_seed, workers=workers)
    return coverage_fraction(delays, discard_count(n, k_sigma, linear, sqrt))
