"""Energy-score training of the noise-injected network."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from uqshred.autodiff import Graph, ShapeError
from uqshred.model import ModelConfig, ModelParams, bind_params, forward_batch, init_params

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    """Training produced a NaN or infinite loss."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.1
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0 or self.patience < 0:
            raise ValueError("epochs and patience must be nonnegative")

    @property
    def early_stopping(self) -> bool:
        return self.patience > 0


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss"])
            for k, tr in enumerate(self.train_loss):
                va = self.val_loss[k] if k < len(self.val_loss) else float("nan")
                w.writerow([k + 1, repr(tr), repr(va)])


# ----------------------------------------------------------------------
# loss


def energy_score_loss(graph: Graph, y: int, y1: int, y2: int) -> int:
    """Two-draw energy score ``(|y1-y| + |y2-y|)/2 - |y1-y2|/2`` as a scalar node."""
    if not graph.shape(y) == graph.shape(y1) == graph.shape(y2):
        raise ShapeError(
            f"energy score: length mismatch {graph.shape(y)}, {graph.shape(y1)}, {graph.shape(y2)}"
        )
    fit = graph.add(
        graph.smoothed_l2_norm(graph.subtract(y1, y)), graph.smoothed_l2_norm(graph.subtract(y2, y))
    )
    spread = graph.smoothed_l2_norm(graph.subtract(y1, y2))
    # nonnegative by the triangle inequality; relu only removes rounding
    # residue where the exact value (and its gradient) is zero
    return graph.relu(graph.subtract(graph.scale(fit, 0.5), graph.scale(spread, 0.5)))


def energy_score_value(y, y1, y2) -> float:
    """Plain-array evaluation of the two-draw energy score."""
    y, y1, y2 = (np.asarray(a, dtype=np.float64) for a in (y, y1, y2))
    if not y.shape == y1.shape == y2.shape:
        raise ShapeError(f"energy score: length mismatch {y.shape}, {y1.shape}, {y2.shape}")
    v = 0.5 * (np.linalg.norm(y1 - y) + np.linalg.norm(y2 - y)) - 0.5 * np.linalg.norm(y1 - y2)
    return max(float(v), 0.0)


def batch_loss_graph(graph, nodes, config, windows, targets, noise1, noise2) -> int:
    """Mean energy score over a batch given explicit noise draws.

    Both draws run through one stacked forward pass of ``2B`` columns; columns
    ``k`` and ``B + k`` share window ``k``.
    """
    windows = np.asarray(windows, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    B = windows.shape[0]
    if B == 0:
        raise ValueError("batch is empty")
    if targets.shape != (B, config.state_dim):
        raise ShapeError(f"targets must have shape ({B}, {config.state_dim}), got {targets.shape}")
    out = forward_batch(
        graph, nodes, config, np.concatenate([windows, windows]), np.concatenate([noise1, noise2])
    )
    y = graph.leaf(targets.T)
    terms = []
    for k in range(B):
        terms.append(
            energy_score_loss(
                graph,
                graph.slice(y, (slice(None), k)),
                graph.slice(out, (slice(None), k)),
                graph.slice(out, (slice(None), B + k)),
            )
        )
    total = graph.sum(graph.concat([graph.slice(t, (None,)) for t in terms], axis=0))
    return graph.scale(total, 1.0 / B)


def draw_noise(rng: np.random.Generator, n: int, noise_dim: int) -> np.ndarray:
    return rng.standard_normal((n, noise_dim))


@dataclass
class LossEval:
    graph: Graph
    root: int
    nodes: dict[str, int]

    @property
    def value(self) -> float:
        return float(self.graph.value(self.root))

    def gradients(self) -> dict[str, np.ndarray]:
        grads = self.graph.backward(self.root)
        return {k: grads[n] for k, n in self.nodes.items()}


def batch_loss(params: ModelParams, batch: Sequence, rng: np.random.Generator) -> LossEval:
    """Energy-score loss on ``batch`` with two fresh noise draws per sample.

    ``batch`` is a sequence of windowed samples (objects with ``x`` and ``y``).
    """
    if len(batch) == 0:
        raise ValueError("batch is empty")
    cfg = params.config
    windows = np.stack([s.x for s in batch])
    targets = np.stack([s.y for s in batch])
    noise = draw_noise(rng, 2 * len(batch), cfg.noise_dim)
    graph = Graph()
    nodes = bind_params(graph, params)
    root = batch_loss_graph(graph, nodes, cfg, windows, targets, noise[: len(batch)], noise[len(batch) :])
    return LossEval(graph, root, nodes)


# ----------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls(
            {k: np.zeros_like(t) for k, t in params.tensors.items()},
            {k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


def adam_step(
    state: AdamState,
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    if set(grads) != set(params.tensors):
        raise KeyError(
            f"gradient keys {sorted(set(grads) ^ set(params.tensors))} do not match parameters"
        )
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_m, new_v, new_p = {}, {}, {}
    for k, w in params.tensors.items():
        g = grads[k]
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new_m[k], new_v[k] = m, v
        new_p[k] = w - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params.replace(new_p), AdamState(new_m, new_v, t)


# ----------------------------------------------------------------------
# loop


def _mean_loss(params, windows, targets, rng, batch_size) -> float:
    cfg = params.config
    total = 0.0
    for lo in range(0, len(windows), batch_size):
        w, y = windows[lo : lo + batch_size], targets[lo : lo + batch_size]
        noise = draw_noise(rng, 2 * len(w), cfg.noise_dim)
        graph = Graph()
        nodes = bind_params(graph, params)
        root = batch_loss_graph(graph, nodes, cfg, w, y, noise[: len(w)], noise[len(w) :])
        total += float(graph.value(root)) * len(w)
    return total / len(windows)


def fit(
    params: ModelParams,
    train_xy: tuple[np.ndarray, np.ndarray],
    val_xy: tuple[np.ndarray, np.ndarray] | None,
    tcfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Minimize the mean energy score over arrays of windows and targets."""
    rng = rng if rng is not None else np.random.default_rng(tcfg.seed)
    xtr, ytr = (np.asarray(a, dtype=np.float64) for a in train_xy)
    if len(xtr) == 0:
        raise ValueError("training split is empty")
    has_val = val_xy is not None and len(val_xy[0]) > 0
    if tcfg.early_stopping and not has_val:
        raise ValueError("early stopping requires a nonempty validation split")
    cfg = params.config
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best, best_loss, stale = params, math.inf, 0

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(len(xtr))
        total = 0.0
        for b, lo in enumerate(range(0, len(order), tcfg.batch_size)):
            idx = order[lo : lo + tcfg.batch_size]
            noise = draw_noise(rng, 2 * len(idx), cfg.noise_dim)
            graph = Graph()
            nodes = bind_params(graph, params)
            root = batch_loss_graph(graph, nodes, cfg, xtr[idx], ytr[idx], noise[: len(idx)], noise[len(idx) :])
            loss = float(graph.value(root))
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            grads = graph.backward(root)
            params, state = adam_step(
                state, params, {k: grads[n] for k, n in nodes.items()}, tcfg.lr,
                tcfg.beta1, tcfg.beta2, tcfg.adam_eps,
            )
            total += loss * len(idx)
        history.train_loss.append(total / len(xtr))

        if has_val:
            vloss = _mean_loss(params, val_xy[0], val_xy[1], rng, tcfg.batch_size)
            if not math.isfinite(vloss):
                raise NonFiniteLossError(f"non-finite validation loss {vloss} at epoch {epoch}")
            history.val_loss.append(vloss)
            if vloss < best_loss:
                best, best_loss, stale = params, vloss, 0
                history.best_epoch = epoch
            else:
                stale += 1
        log.debug("epoch %d train %.6g val %s", epoch, history.train_loss[-1],
                  history.val_loss[-1] if has_val else "-")
        if tcfg.early_stopping and stale >= tcfg.patience:
            log.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break

    if tcfg.early_stopping:
        return best, history
    return params, history


def train(dataset, mcfg: ModelConfig, tcfg: TrainConfig) -> tuple[ModelParams, TrainHistory]:
    """Initialize and fit a model on a windowed, normalized, split dataset.

    The dataset's train and val splits are used; test windows are never seen.
    """
    rng = np.random.default_rng(tcfg.seed)
    params = init_params(mcfg, rng)
    xtr, ytr = dataset.arrays("train")
    xva, yva = dataset.arrays("val")
    return fit(params, (xtr, ytr), (xva, yva), tcfg, rng)
