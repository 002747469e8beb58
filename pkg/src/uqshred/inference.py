"""Monte Carlo sampling of the learned conditional law and plug-in summaries."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from uqshred.model import ModelParams, predict

MIN_MC_SAMPLES = 100
DEFAULT_MC_SAMPLES = 200
ENSEMBLE_MAGIC = b"UQPE"


@dataclass
class PredictiveEnsemble:
    samples: np.ndarray  # (K, m)
    window_id: int = -1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"ensemble needs a (K>=1, m) array, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("ensemble contains non-finite values")

    @property
    def K(self) -> int:
        return self.samples.shape[0]


@dataclass
class PredictiveSummary:
    mean: np.ndarray
    variance: np.ndarray
    median: np.ndarray
    intervals: dict[float, tuple[np.ndarray, np.ndarray]]


def warn_if_few_samples(K: int) -> None:
    if K < MIN_MC_SAMPLES:
        warnings.warn(
            f"K={K} Monte Carlo samples is below the guideline of at least {MIN_MC_SAMPLES} "
            "for quantile estimation",
            stacklevel=2,
        )


def noise_for_draws(rng: np.random.Generator, K: int, noise_dim: int) -> np.ndarray:
    """``K`` noise rows, row ``k`` from its own substream keyed by ``(base, k)``.

    One integer is consumed from ``rng``; every row depends only on that base
    key and its index, so rows are reproducible in any evaluation order and a
    smaller ``K`` yields a prefix of a larger one.
    """
    base = int(rng.integers(0, 2**63 - 1))
    out = np.empty((K, noise_dim))
    for k in range(K):
        out[k] = np.random.default_rng([base, k]).standard_normal(noise_dim)
    return out


def mc_sample(params: ModelParams, window, K: int, rng: np.random.Generator, window_id: int = -1) -> PredictiveEnsemble:
    """``K`` decoded states for one window, one independent noise draw each."""
    if K < 1:
        raise ValueError("need at least one Monte Carlo sample")
    cfg = params.config
    noise = noise_for_draws(rng, K, cfg.noise_dim)
    window = np.asarray(window, dtype=np.float64)
    batch = np.broadcast_to(window, (K,) + window.shape)
    return PredictiveEnsemble(predict(params, batch, noise), window_id)


def empirical_quantile(values, alpha: float) -> float:
    """Smallest ``t`` with empirical CDF ``>= alpha``: the ``ceil(alpha*n)``-th order statistic."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("empirical quantile of an empty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {alpha}")
    k = _rank(alpha, v.size)
    return float(np.partition(v, k)[k])


def _rank(alpha: float, n: int) -> int:
    # 0-based index of the smallest k with k/n >= alpha; ceil(alpha*n) alone
    # misfires on products like 0.7*10 = 7.000000000000001
    k = min(max(math.ceil(alpha * n), 1), n)
    while k > 1 and (k - 1) / n >= alpha:
        k -= 1
    while k < n and k / n < alpha:
        k += 1
    return k - 1


def column_quantiles(samples: np.ndarray, alpha: float) -> np.ndarray:
    """:func:`empirical_quantile` applied to each column of a ``(K, m)`` array."""
    s = np.asarray(samples, dtype=np.float64)
    k = _rank(alpha, s.shape[0])
    return np.partition(s, k, axis=0)[k]


def interval_bounds(samples: np.ndarray, level: float) -> tuple[np.ndarray, np.ndarray]:
    """Central ``level`` interval ``[q_{(1-level)/2}, q_{(1+level)/2}]`` per column."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"interval level must lie in (0, 1), got {level}")
    return column_quantiles(samples, (1.0 - level) / 2.0), column_quantiles(samples, (1.0 + level) / 2.0)


def predictive_summary(ens: PredictiveEnsemble, levels: Sequence[float] = (0.5, 0.7, 0.9, 0.95, 0.99)) -> PredictiveSummary:
    s = ens.samples
    if s.shape[0] < 2:
        raise ValueError("variance needs at least two Monte Carlo samples")
    return PredictiveSummary(
        mean=s.mean(axis=0),
        variance=s.var(axis=0, ddof=1),
        median=column_quantiles(s, 0.5),
        intervals={float(a): interval_bounds(s, a) for a in levels},
    )


def write_ensemble(path, ens: PredictiveEnsemble) -> None:
    K, m = ens.samples.shape
    Path(path).write_bytes(
        ENSEMBLE_MAGIC + struct.pack("<QQ", K, m) + np.ascontiguousarray(ens.samples, dtype="<f8").tobytes()
    )


def read_ensemble(path) -> PredictiveEnsemble:
    raw = Path(path).read_bytes()
    if raw[:4] != ENSEMBLE_MAGIC or len(raw) < 20:
        raise ValueError(f"{path}: not a {ENSEMBLE_MAGIC!r} ensemble file")
    K, m = struct.unpack_from("<QQ", raw, 4)
    if len(raw) != 20 + 8 * K * m:
        raise ValueError(f"{path}: payload size does not match {K}x{m}")
    return PredictiveEnsemble(np.frombuffer(raw, dtype="<f8", offset=20).reshape(K, m).astype(np.float64))
