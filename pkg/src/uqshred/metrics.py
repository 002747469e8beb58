"""Calibration coverage, sample CRPS, sharpness, RMSE and energy distance."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from uqshred.inference import column_quantiles, interval_bounds, mc_sample
from uqshred.model import ModelParams

DEFAULT_LEVELS = (0.5, 0.7, 0.9, 0.95, 0.99)


def _check_interval(lower, upper):
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    if lower.shape != upper.shape:
        raise ValueError(f"bound shapes differ: {lower.shape} vs {upper.shape}")
    if np.any(lower > upper):
        raise ValueError("inverted interval: lower bound exceeds upper bound")
    return lower, upper


def coverage(lower, upper, truth) -> tuple[int, int]:
    """Number of cells with ``lower <= truth <= upper``, and the cell count."""
    lower, upper = _check_interval(lower, upper)
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != lower.shape:
        raise ValueError(f"truth shape {truth.shape} does not match bounds {lower.shape}")
    hits = (lower <= truth) & (truth <= upper)
    return int(hits.sum()), int(hits.size)


def sharpness(lower, upper) -> float:
    """Mean interval width."""
    lower, upper = _check_interval(lower, upper)
    return float(np.mean(upper - lower))


def rmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def crps_sample_direct(samples, y: float) -> float:
    """Quadratic-cost CRPS from ``K`` predictive samples (reference form)."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("CRPS needs at least one sample")
    K = x.size
    return float(np.abs(x - y).mean() - np.abs(x[:, None] - x[None, :]).sum() / (2.0 * K * K))


def crps_sample(samples, y: float) -> float:
    """Sample CRPS ``mean|x_k - y| - sum_jk |x_k - x_j| / (2 K^2)``.

    The pair sum uses sorted order: ``sum_jk |x_k - x_j| = 2 sum_i (2i - K - 1) x_(i)``.
    """
    x = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    if x.size == 0:
        raise ValueError("CRPS needs at least one sample")
    K = x.size
    pair = 2.0 * np.dot(2.0 * np.arange(1, K + 1) - K - 1, x)
    return float(np.abs(x - y).mean() - pair / (2.0 * K * K))


def crps_columns(samples: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """:func:`crps_sample` for every column of ``(K, m)`` samples against ``(m,)`` truth."""
    x = np.sort(np.asarray(samples, dtype=np.float64), axis=0)
    K = x.shape[0]
    w = 2.0 * np.arange(1, K + 1) - K - 1
    pair = 2.0 * (w @ x)
    return np.abs(x - truth[None, :]).mean(axis=0) - pair / (2.0 * K * K)


def _mean_pairwise(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> float:
    total = 0.0
    for lo in range(0, len(a), chunk):
        d = a[lo : lo + chunk, None, :] - b[None, :, :]
        total += np.sqrt((d * d).sum(axis=-1)).sum()
    return total / (len(a) * len(b))


def energy_distance(samples_q, samples_p) -> float:
    """V-statistic energy distance ``2E|Z-W| - E|Z-Z'| - E|W-W'|``.

    Equals ``-2`` times ``E|Z-Z'|/2 - E|Z-W| + E|W-W'|/2``; nonnegative and
    zero only for identical laws. 1-D sample vectors are treated as ``m = 1``.
    """
    q = np.asarray(samples_q, dtype=np.float64)
    p = np.asarray(samples_p, dtype=np.float64)
    q = q[:, None] if q.ndim == 1 else q
    p = p[:, None] if p.ndim == 1 else p
    if len(q) < 2 or len(p) < 2:
        raise ValueError("energy distance needs at least two samples per distribution")
    if q.shape[1] != p.shape[1]:
        raise ValueError(f"sample dimensions differ: {q.shape[1]} vs {p.shape[1]}")
    if q.shape[1] == 1:
        cross, wq, wp = _pair_means_1d(q[:, 0], p[:, 0])
    else:
        cross, wq, wp = _mean_pairwise(q, p), _mean_pairwise(q, q), _mean_pairwise(p, p)
    ed = 2.0 * cross - wq - wp
    # the V-statistic is nonnegative; snap summation noise
    if ed <= 1e-13 * (2.0 * cross + wq + wp):
        return 0.0
    return float(ed)


def _sum_abs_within(x_sorted):
    n = x_sorted.size
    return 2.0 * np.dot(2.0 * np.arange(1, n + 1) - n - 1, x_sorted)


def _pair_means_1d(q, p):
    # pairwise |.| sums from sorted order, O(n log n)
    q, p = np.sort(q), np.sort(p)
    both = np.sort(np.concatenate([q, p]))
    sq, sp = _sum_abs_within(q), _sum_abs_within(p)
    cross = (_sum_abs_within(both) - sq - sp) / 2.0
    return cross / (q.size * p.size), sq / q.size**2, sp / p.size**2


# ----------------------------------------------------------------------
# aggregation


@dataclass
class UQReport:
    rmse: float
    coverage: dict[float, float]
    crps: float
    sharpness: dict[float, float]
    n_cells: int
    mc_samples: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_cells <= 0:
            raise ValueError("report needs at least one evaluated cell")

    def calibration_rows(self) -> list[tuple[float, float]]:
        return sorted(self.coverage.items())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coverage"] = {f"{k:g}": v for k, v in sorted(self.coverage.items())}
        d["sharpness"] = {f"{k:g}": v for k, v in sorted(self.sharpness.items())}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def is_finite(self) -> bool:
        vals = [self.rmse, self.crps, *self.coverage.values(), *self.sharpness.values()]
        return all(math.isfinite(v) for v in vals)

    def write_calibration_csv(self, path) -> None:
        write_calibration_csv(path, self.calibration_rows())


def write_calibration_csv(path, rows: Iterable[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "observed"])
        for a, obs in rows:
            w.writerow([f"{a:g}", repr(float(obs))])


class ReportAccumulator:
    """Running sums for a :class:`UQReport`, one ensemble at a time.

    Hit counts are integers and float partials are combined with
    ``math.fsum``, so the report does not depend on window order.
    """

    def __init__(self, levels: Sequence[float] = DEFAULT_LEVELS):
        self.levels = tuple(float(a) for a in levels)
        self.hits = {a: 0 for a in self.levels}
        self._width: dict[float, list[float]] = {a: [] for a in self.levels}
        self._sq_err: list[float] = []
        self._crps: list[float] = []
        self.cells = 0
        self.K = 0

    def add(self, samples: np.ndarray, truth: np.ndarray) -> dict:
        """Score one ``(K, m)`` ensemble in physical units; returns its summary."""
        samples = np.asarray(samples, dtype=np.float64)
        truth = np.asarray(truth, dtype=np.float64)
        median = column_quantiles(samples, 0.5)
        bounds = {}
        for a in self.levels:
            lo, hi = interval_bounds(samples, a)
            h, _ = coverage(lo, hi, truth)
            self.hits[a] += h
            self._width[a].extend((hi - lo).tolist())
            bounds[a] = (lo, hi)
        self._sq_err.extend(((median - truth) ** 2).tolist())
        self._crps.extend(crps_columns(samples, truth).tolist())
        self.cells += truth.size
        self.K = samples.shape[0]
        return {"median": median, "bounds": bounds}

    def report(self, **extra) -> UQReport:
        n = self.cells
        return UQReport(
            rmse=math.sqrt(math.fsum(self._sq_err) / n) if n else float("nan"),
            coverage={a: self.hits[a] / n for a in self.levels} if n else {},
            crps=math.fsum(self._crps) / n if n else float("nan"),
            sharpness={a: math.fsum(self._width[a]) / n for a in self.levels} if n else {},
            n_cells=n,
            mc_samples=self.K,
            extra=extra,
        )


Sampler = Callable[[int, np.ndarray, int, np.random.Generator], np.ndarray]


def model_sampler(params: ModelParams, to_physical: Callable[[np.ndarray], np.ndarray] | None = None) -> Sampler:
    """Wrap a trained model as ``sampler(i, window, K, rng) -> (K, m)``."""

    def sample(i, window, K, rng):
        s = mc_sample(params, window, K, rng, window_id=i).samples
        return to_physical(s) if to_physical is not None else s

    return sample


def calibration_curve(
    sampler,
    windows: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    levels: Sequence[float] = DEFAULT_LEVELS,
    K: int = 200,
    rng: np.random.Generator | None = None,
) -> list[tuple[float, float]]:
    """Observed coverage per nominal level over all cells of all windows.

    ``sampler`` is either trained :class:`ModelParams` or a callable
    ``sampler(i, window, K, rng)`` returning ``(K, m)`` samples, which lets
    an exact conditional-law sampler stand in for the network.
    """
    if isinstance(sampler, ModelParams):
        sampler = model_sampler(sampler)
    rng = rng if rng is not None else np.random.default_rng(0)
    acc = ReportAccumulator(levels)
    for i, (w, y) in enumerate(zip(windows, truths)):
        acc.add(sampler(i, w, K, rng), y)
    return [(a, acc.hits[a] / acc.cells) for a in acc.levels]
