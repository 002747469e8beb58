"""Spatiotemporal fields: synthesis, file I/O, sensors, windows, splits, scaling."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

FIELD_MAGIC = b"UQSF"
FIELD_VERSION = 1

SPLITS = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2


# ----------------------------------------------------------------------
# generators


def gen_wave_field(
    T: int,
    grid_size: int,
    n_modes: int,
    rng: np.random.Generator,
    *,
    dim: int = 1,
    amplitude: float = 1.0,
    dt: float = 0.1,
    max_wavenumber: int = 3,
    freq_range: tuple[float, float] = (0.5, 2.0),
) -> np.ndarray:
    """Superposition of traveling sinusoids on a periodic 1-D or 2-D grid.

    Each mode is ``(amplitude / n_modes) * sin(k . x - w t + phi)`` with an
    integer wavevector ``k`` (times 2 pi), angular frequency ``w`` drawn from
    ``freq_range`` and a uniform phase. Returns a ``(T, grid_size**dim)``
    array; with one mode values stay within ``[-amplitude, amplitude]``.
    """
    if T < 1 or grid_size < 1:
        raise ValueError("T and grid size must be at least 1")
    if dim not in (1, 2):
        raise ValueError("grid dimension must be 1 or 2")
    axis = np.arange(grid_size) / grid_size
    if dim == 1:
        coords = axis[:, None]
    else:
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        coords = np.stack([gx.ravel(), gy.ravel()], axis=1)
    t = np.arange(T)[:, None] * dt
    field = np.zeros((T, coords.shape[0]))
    for _ in range(n_modes):
        k = rng.integers(-max_wavenumber, max_wavenumber + 1, size=dim)
        if not k.any():
            k[0] = 1
        w = rng.uniform(*freq_range)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        phase = 2.0 * math.pi * (coords @ k)[None, :] - w * t + phi
        field += (amplitude / n_modes) * np.sin(phase)
    return field


@dataclass
class LinearGaussianField:
    """Latent AR(1) field with heteroscedastic Gaussian cell noise.

    The first ``p_latent`` cells ("anchor" cells) read the latent state
    exactly; every other cell is ``C z_t`` plus noise with standard deviation
    ``noise_scale * cell_scale[j] * (1 + 0.5 tanh(z_t[0]))``. When the sensors
    include all anchor cells the conditional law of ``y_t`` given the sensor
    window is exactly ``N(C z_t, diag(sigma(z_t)^2))``.
    """

    field: np.ndarray
    latent: np.ndarray
    C: np.ndarray
    ar_coef: float
    noise_scale: float
    cell_scale: np.ndarray

    @property
    def p_latent(self) -> int:
        return self.latent.shape[1]

    @property
    def anchor_cells(self) -> np.ndarray:
        return np.arange(self.p_latent)

    def noise_std(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        s = self.noise_scale * (1.0 + 0.5 * np.tanh(z[:, :1])) * self.cell_scale[None, :]
        s[:, : self.p_latent] = 0.0
        return s

    def conditional_mean(self, t) -> np.ndarray:
        return self.latent[t] @ self.C.T

    def conditional_std(self, t) -> np.ndarray:
        return self.noise_std(self.latent[t]).reshape(np.shape(self.conditional_mean(t)))

    def check_sensors(self, sensors: Sequence[int]) -> None:
        missing = sorted(set(self.anchor_cells.tolist()) - set(int(s) for s in sensors))
        if missing:
            raise ValueError(f"oracle needs every anchor cell among the sensors; missing {missing}")

    def oracle_sample(self, t: int, K: int, rng: np.random.Generator) -> np.ndarray:
        """``K`` draws from the exact conditional law of the state at time ``t``."""
        mu = self.conditional_mean(t)
        sd = self.conditional_std(t)
        return mu[None, :] + sd[None, :] * rng.standard_normal((K, mu.shape[0]))


def gen_linear_gaussian_field(
    T: int,
    m: int,
    p_latent: int,
    noise_scale: float,
    rng: np.random.Generator,
    *,
    ar_coef: float = 0.9,
) -> LinearGaussianField:
    """Generate a :class:`LinearGaussianField` of ``T`` steps and ``m`` cells."""
    if not 1 <= p_latent <= m:
        raise ValueError("need 1 <= p_latent <= m")
    if not -1.0 < ar_coef < 1.0:
        raise ValueError("AR coefficient must lie in (-1, 1)")
    C = np.vstack([np.eye(p_latent), rng.standard_normal((m - p_latent, p_latent)) / math.sqrt(p_latent)])
    cell_scale = rng.uniform(0.5, 1.5, size=m)
    innov = math.sqrt(1.0 - ar_coef**2)
    z = np.empty((T, p_latent))
    z[0] = rng.standard_normal(p_latent)
    for t in range(1, T):
        z[t] = ar_coef * z[t - 1] + innov * rng.standard_normal(p_latent)
    gen = LinearGaussianField(np.empty((T, m)), z, C, ar_coef, float(noise_scale), cell_scale)
    gen.field = z @ C.T + gen.noise_std(z) * rng.standard_normal((T, m))
    return gen


# ----------------------------------------------------------------------
# sensors, windows, splits


def select_sensors(m: int, p: int, mode: str = "random", rng=None, indices=None) -> np.ndarray:
    """Pick ``p`` distinct cells out of ``m``.

    ``mode`` is ``"random"`` (seeded draw without replacement), ``"uniform"``
    (cell ``floor(i*m/p + 1/2)``) or ``"fixed"`` (validate ``indices``).
    """
    if p > m:
        raise ValueError(f"cannot place {p} sensors on {m} cells")
    if p < 1:
        raise ValueError("need at least one sensor")
    if mode == "random":
        if rng is None:
            raise ValueError("random sensor placement needs a generator")
        out = np.sort(rng.choice(m, size=p, replace=False))
    elif mode == "uniform":
        out = np.floor(np.arange(p) * m / p + 0.5).astype(np.int64)
    elif mode == "fixed":
        out = np.asarray(indices, dtype=np.int64)
        if out.shape != (p,):
            raise ValueError(f"expected {p} fixed sensor indices, got {out.size}")
    else:
        raise ValueError(f"unknown sensor mode {mode!r}")
    if len(set(out.tolist())) != p or out.min() < 0 or out.max() >= m:
        raise ValueError(f"sensor indices must be distinct and in [0, {m}): {out.tolist()}")
    return out


@dataclass
class WindowedSample:
    x: np.ndarray
    y: np.ndarray
    t: int


def window_arrays(field: np.ndarray, sensors, L: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked windows ``(n, L, p)``, targets ``(n, m)`` and end times ``(n,)``."""
    field = np.asarray(field, dtype=np.float64)
    T = field.shape[0]
    if L < 1:
        raise ValueError("lag must be positive")
    if T < L:
        raise ValueError(f"field has {T} time steps, fewer than lag {L}")
    sens = field[:, np.asarray(sensors, dtype=np.int64)]
    n = T - L + 1
    X = np.stack([sens[s : s + L] for s in range(n)])
    ts = np.arange(L - 1, T)
    return X, field[ts].copy(), ts


def build_windows(field: np.ndarray, sensors, L: int) -> list[WindowedSample]:
    """One sample per end time ``t`` in ``[L-1, T-1]``, rows oldest first."""
    X, Y, ts = window_arrays(field, sensors, L)
    return [WindowedSample(x, y, int(t)) for x, y, t in zip(X, Y, ts)]


def split_windows(count: int, fractions=(0.8, 0.1, 0.1), mode: str = "random", rng=None) -> np.ndarray:
    """Assign each window to train (0), val (1) or test (2).

    Counts are ``round(f_train * count)`` and ``round(f_val * count)``; test
    takes the rest. ``"temporal"`` mode assigns prefix, middle and suffix.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n_train = int(round(fr[0] * count))
    n_val = min(int(round(fr[1] * count)), count - n_train)
    labels = np.full(count, TEST, dtype=np.int64)
    labels[:n_train] = TRAIN
    labels[n_train : n_train + n_val] = VAL
    if mode in ("temporal", "temporal-contiguous"):
        return labels
    if mode != "random":
        raise ValueError(f"unknown split mode {mode!r}")
    if rng is None:
        raise ValueError("random split needs a generator")
    out = np.empty(count, dtype=np.int64)
    out[rng.permutation(count)] = labels
    return out


# ----------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormStats:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def constant(self) -> np.ndarray:
        return self.span == 0


def fit_norm(rows: np.ndarray) -> NormStats:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[0] == 0:
        raise ValueError("cannot fit normalization on an empty training split")
    return NormStats(rows.min(axis=0), rows.max(axis=0))


def normalize(values, stats: NormStats, cells=None) -> np.ndarray:
    """Min-max map to ``[0, 1]`` per cell; constant cells map to 0.5."""
    lo, span = stats.lo, stats.span
    if cells is not None:
        lo, span = lo[cells], span[cells]
    safe = np.where(span == 0, 1.0, span)
    out = (np.asarray(values, dtype=np.float64) - lo) / safe
    return np.where(span == 0, 0.5, out)


def denormalize(values, stats: NormStats, cells=None) -> np.ndarray:
    """Inverse of :func:`normalize` (constant cells return their value)."""
    lo, span = stats.lo, stats.span
    if cells is not None:
        lo, span = lo[cells], span[cells]
    return np.asarray(values, dtype=np.float64) * span + lo


# ----------------------------------------------------------------------
# dataset


@dataclass
class FieldDataset:
    """A field, its sensors and lag, per-window split labels and train-fit scaling.

    ``split`` holds one label per window (end time ``lag-1+i``). Normalization
    statistics are fitted on the target rows of training windows only.
    """

    field: np.ndarray
    sensors: np.ndarray
    lag: int
    split: np.ndarray
    provenance: str = ""
    stats: NormStats = field(init=False)

    def __post_init__(self):
        self.field = np.asarray(self.field, dtype=np.float64)
        self.sensors = np.asarray(self.sensors, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        T, m = self.field.shape
        select_sensors(m, len(self.sensors), "fixed", indices=self.sensors)
        if len(self.split) != self.n_windows:
            raise ValueError(f"split has {len(self.split)} labels for {self.n_windows} windows")
        self.stats = fit_norm(self.field[self.times(TRAIN)])

    @property
    def n_windows(self) -> int:
        return self.field.shape[0] - self.lag + 1

    @property
    def state_dim(self) -> int:
        return self.field.shape[1]

    def times(self, which) -> np.ndarray:
        code = SPLITS.index(which) if isinstance(which, str) else which
        return np.flatnonzero(self.split == code) + self.lag - 1

    def arrays(self, which, normalized: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Windows ``(n, L, p)`` and targets ``(n, m)`` of one split."""
        field = self.normalized_field() if normalized else self.field
        X, Y, _ = window_arrays(field, self.sensors, self.lag)
        code = SPLITS.index(which) if isinstance(which, str) else which
        mask = self.split == code
        return X[mask], Y[mask]

    def normalized_field(self) -> np.ndarray:
        return normalize(self.field, self.stats)

    def samples(self, which, normalized: bool = True) -> list[WindowedSample]:
        X, Y = self.arrays(which, normalized)
        return [WindowedSample(x, y, int(t)) for x, y, t in zip(X, Y, self.times(which))]


def make_dataset(field, sensors, lag, fractions=(0.8, 0.1, 0.1), split_mode="random", rng=None, provenance="") -> FieldDataset:
    n = np.asarray(field).shape[0] - lag + 1
    if n < 1:
        raise ValueError(f"field has fewer time steps than lag {lag}")
    return FieldDataset(field, sensors, lag, split_windows(n, fractions, split_mode, rng), provenance)


# ----------------------------------------------------------------------
# file I/O


class FieldFormatError(ValueError):
    """Base class for unreadable field files."""


class MalformedHeaderError(FieldFormatError):
    pass


class RaggedRowError(FieldFormatError):
    pass


class NonNumericCellError(FieldFormatError):
    pass


def _fmt(path, fmt):
    if fmt is None:
        fmt = "csv" if str(path).lower().endswith(".csv") else "binary"
    if fmt not in ("csv", "binary"):
        raise ValueError(f"unknown field format {fmt!r}")
    return fmt


def save_field(field: np.ndarray, path, fmt: str | None = None) -> None:
    """Write a ``(T, m)`` field as CSV (17 significant digits) or ``UQSF`` binary."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"field must be 2-D, got shape {field.shape}")
    if _fmt(path, fmt) == "csv":
        with open(path, "w", newline="") as fh:
            for row in field:
                fh.write(",".join(format(v, ".17g") for v in row) + "\n")
        return
    T, m = field.shape
    header = FIELD_MAGIC + struct.pack("<IQQ", FIELD_VERSION, T, m)
    Path(path).write_bytes(header + np.ascontiguousarray(field, dtype="<f8").tobytes())


def load_field(path, fmt: str | None = None) -> np.ndarray:
    """Read a field written by :func:`save_field` (or any numeric CSV grid)."""
    if _fmt(path, fmt) == "csv":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    vals = [float(c) for c in row]
                except ValueError:
                    bad = next(c for c in row if not _is_float(c))
                    raise NonNumericCellError(f"{path}: row {lineno}: non-numeric cell {bad!r}") from None
                if rows and len(vals) != len(rows[0]):
                    raise RaggedRowError(
                        f"{path}: row {lineno} has {len(vals)} cells, expected {len(rows[0])}"
                    )
                rows.append(vals)
        if not rows:
            raise FieldFormatError(f"{path}: no data rows")
        return np.array(rows, dtype=np.float64)

    raw = Path(path).read_bytes()
    if len(raw) < 24 or raw[:4] != FIELD_MAGIC:
        raise MalformedHeaderError(f"{path}: missing {FIELD_MAGIC!r} header")
    version, T, m = struct.unpack_from("<IQQ", raw, 4)
    if version != FIELD_VERSION:
        raise MalformedHeaderError(f"{path}: unsupported field version {version}")
    if len(raw) != 24 + 8 * T * m:
        raise MalformedHeaderError(
            f"{path}: header declares {T}x{m} values but payload has {(len(raw) - 24) // 8}"
        )
    return np.frombuffer(raw, dtype="<f8", offset=24).reshape(T, m).astype(np.float64)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
