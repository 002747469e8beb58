"""Recurrent-encoder / shallow-decoder network with input noise injection.

The network maps a lag window of sensor readings plus one noise vector to a
full state vector. The noise vector is appended to the sensor row at every
lag step, so a single draw is held fixed across the whole window.

Internally activations are laid out column-major: a batch of ``B`` windows
is processed as ``[features, B]`` matrices so that weights keep the
``[out, in]`` convention and bias columns are broadcast with an explicit
``bias @ ones(1, B)`` product.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from uqshred.autodiff import Graph, ShapeError, as_tensor

UNITS = ("gru", "lstm")
ACTIVATIONS = ("relu", "sigmoid", "tanh")

CHECKPOINT_MAGIC = b"UQSM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    lag: int
    sensors: int
    state_dim: int
    noise_dim: int = 32
    hidden_dim: int = 32
    unit: str = "gru"
    decoder_widths: tuple[int, ...] | None = None
    activation: str = "relu"

    def __post_init__(self):
        for name in ("lag", "sensors", "state_dim", "hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"ModelConfig.{name} must be positive")
        if self.noise_dim < 0:
            raise ValueError("ModelConfig.noise_dim must be nonnegative")
        if self.unit not in UNITS:
            raise ValueError(f"unknown temporal unit {self.unit!r}; expected one of {UNITS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown decoder activation {self.activation!r}; expected one of {ACTIVATIONS}"
            )
        if self.decoder_widths is None:
            width = max(64, 2 * self.hidden_dim)
            object.__setattr__(self, "decoder_widths", (width, width))
        widths = tuple(int(w) for w in self.decoder_widths)
        if any(w < 1 for w in widths):
            raise ValueError(f"decoder hidden widths must be positive, got {widths}")
        object.__setattr__(self, "decoder_widths", widths)

    @property
    def input_width(self) -> int:
        return self.sensors + self.noise_dim

    def to_json(self) -> str:
        d = asdict(self)
        d["decoder_widths"] = list(self.decoder_widths)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        d["decoder_widths"] = tuple(d["decoder_widths"])
        return cls(**d)


def _gate_names(unit: str) -> tuple[str, ...]:
    return ("z", "r", "n") if unit == "gru" else ("i", "f", "g", "o")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name and shape of every learnable tensor, in canonical order."""
    dz, din = config.hidden_dim, config.input_width
    shapes: dict[str, tuple[int, ...]] = {}
    u = config.unit
    for g in _gate_names(u):
        shapes[f"{u}.W_i{g}"] = (dz, din)
        shapes[f"{u}.W_h{g}"] = (dz, dz)
        shapes[f"{u}.b_i{g}"] = (dz, 1)
        if u == "gru" and g == "n":
            # candidate keeps a separate hidden bias inside the reset product
            shapes[f"{u}.b_hn"] = (dz, 1)
    widths = (dz,) + config.decoder_widths + (config.state_dim,)
    for k in range(len(widths) - 1):
        shapes[f"dec.{k}.W"] = (widths[k + 1], widths[k])
        shapes[f"dec.{k}.b"] = (widths[k + 1], 1)
    return shapes


@dataclass
class ModelParams:
    """Learnable tensors keyed by name, plus the config fixing their shapes."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.config)
        if set(shapes) != set(self.tensors):
            missing = sorted(set(shapes) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(shapes))
            raise ValueError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
        self.tensors = {k: as_tensor(self.tensors[k]) for k in shapes}
        for k, shape in shapes.items():
            if self.tensors[k].shape != shape:
                raise ShapeError(f"parameter {k} has shape {self.tensors[k].shape}, expected {shape}")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def replace(self, tensors: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.config, dict(tensors))

    def n_values(self) -> int:
        return sum(t.size for t in self.tensors.values())


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` weights, zero biases."""
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.split(".")[-1].startswith("b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[1])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, tensors)


def bind_params(graph: Graph, params: ModelParams) -> dict[str, int]:
    """Place every parameter tensor on ``graph`` as a leaf."""
    return {k: graph.leaf(v) for k, v in params.tensors.items()}


# ----------------------------------------------------------------------
# forward passes


def _as_batch(windows, noise, config):
    windows = np.asarray(windows, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1:] != (config.lag, config.sensors):
        raise ShapeError(
            f"windows must have shape (B, {config.lag}, {config.sensors}), got {windows.shape}"
        )
    B = windows.shape[0]
    if noise.shape != (B, config.noise_dim):
        raise ShapeError(f"noise must have shape ({B}, {config.noise_dim}), got {noise.shape}")
    return windows, noise


def temporal_forward_batch(graph, nodes, config, windows, noise) -> int:
    """Run the recurrent unit over a batch; returns the final hidden state node ``[d_z, B]``."""
    windows, noise = _as_batch(windows, noise, config)
    B = windows.shape[0]
    dz, u = config.hidden_dim, config.unit
    ones = graph.leaf(np.ones((1, B)))
    bias = {
        name: graph.matmul(nodes[f"{u}.{name}"], ones)
        for name in [f"b_i{g}" for g in _gate_names(u)] + (["b_hn"] if u == "gru" else [])
    }
    h = graph.leaf(np.zeros((dz, B)))
    c = graph.leaf(np.zeros((dz, B))) if u == "lstm" else None
    for t in range(config.lag):
        # same noise column at every lag step
        x_t = graph.leaf(np.concatenate([windows[:, t, :].T, noise.T], axis=0))

        def pre(g, with_hidden=True):
            a = graph.add(graph.matmul(nodes[f"{u}.W_i{g}"], x_t), bias[f"b_i{g}"])
            if with_hidden:
                a = graph.add(a, graph.matmul(nodes[f"{u}.W_h{g}"], h))
            return a

        if u == "gru":
            z = graph.sigmoid(pre("z"))
            r = graph.sigmoid(pre("r"))
            hn = graph.add(graph.matmul(nodes[f"{u}.W_hn"], h), bias["b_hn"])
            n = graph.tanh(graph.add(pre("n", with_hidden=False), graph.hadamard(r, hn)))
            # h' = (1 - z) * n + z * h
            h = graph.add(n, graph.hadamard(z, graph.subtract(h, n)))
        else:
            i = graph.sigmoid(pre("i"))
            f = graph.sigmoid(pre("f"))
            gg = graph.tanh(pre("g"))
            o = graph.sigmoid(pre("o"))
            c = graph.add(graph.hadamard(f, c), graph.hadamard(i, gg))
            h = graph.hadamard(o, graph.tanh(c))
    return h


def decode_batch(graph, nodes, config, latent: int) -> int:
    """Feed-forward decoder on ``[d_z, B]`` latents; linear last layer."""
    shape = graph.shape(latent)
    if len(shape) != 2 or shape[0] != config.hidden_dim:
        raise ShapeError(f"decoder expects latent of shape ({config.hidden_dim}, B), got {shape}")
    ones = graph.leaf(np.ones((1, shape[1])))
    act = getattr(graph, config.activation)
    n_layers = len(config.decoder_widths) + 1
    a = latent
    for k in range(n_layers):
        a = graph.add(
            graph.matmul(nodes[f"dec.{k}.W"], a), graph.matmul(nodes[f"dec.{k}.b"], ones)
        )
        if k < n_layers - 1:
            a = act(a)
    return a


def forward_batch(graph, nodes, config, windows, noise) -> int:
    """Decoded states ``[m, B]`` for a batch of windows and matching noise rows."""
    return decode_batch(graph, nodes, config, temporal_forward_batch(graph, nodes, config, windows, noise))


def _single(config, window, noise):
    window = np.asarray(window, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64).reshape(-1)
    if window.shape != (config.lag, config.sensors):
        raise ShapeError(f"window must have shape ({config.lag}, {config.sensors}), got {window.shape}")
    if noise.shape != (config.noise_dim,):
        raise ShapeError(f"noise must have length {config.noise_dim}, got {noise.shape[0]}")
    return window[None], noise[None]


def temporal_forward(params: ModelParams, window, noise, graph: Graph, nodes=None) -> int:
    """Final hidden state (length ``d_z``) for one window and one noise draw."""
    nodes = nodes if nodes is not None else bind_params(graph, params)
    w, e = _single(params.config, window, noise)
    h = temporal_forward_batch(graph, nodes, params.config, w, e)
    return graph.slice(h, (slice(None), 0))


def decode(params: ModelParams, latent: int, graph: Graph, nodes=None) -> int:
    """Decoded state (length ``m``) for a latent vector node of length ``d_z``."""
    nodes = nodes if nodes is not None else bind_params(graph, params)
    if graph.shape(latent) != (params.config.hidden_dim,):
        raise ShapeError(
            f"decoder expects latent of length {params.config.hidden_dim}, got {graph.shape(latent)}"
        )
    col = graph.slice(latent, (slice(None), None))
    out = decode_batch(graph, nodes, params.config, col)
    return graph.slice(out, (slice(None), 0))


def model_forward(params: ModelParams, window, noise, graph: Graph, nodes=None) -> int:
    """Decoded state (length ``m``) for one window and one noise draw."""
    nodes = nodes if nodes is not None else bind_params(graph, params)
    w, e = _single(params.config, window, noise)
    out = forward_batch(graph, nodes, params.config, w, e)
    return graph.slice(out, (slice(None), 0))


def predict(params: ModelParams, windows, noise) -> np.ndarray:
    """Forward values only, as a ``(B, m)`` array."""
    graph = Graph()
    nodes = bind_params(graph, params)
    out = forward_batch(graph, nodes, params.config, windows, noise)
    return np.array(graph.value(out).T)


# ----------------------------------------------------------------------
# checkpoint I/O


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def write_checkpoint(path, params: ModelParams, extras: Mapping[str, np.ndarray] | None = None) -> None:
    """Write ``UQSM`` binary: header, config JSON, then named f64 tensors.

    ``extras`` are stored after the parameters with the same record layout;
    they carry data-side state such as normalization statistics.
    """
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = params.config.to_json().encode("utf-8")
    buf += struct.pack("<I", len(cfg)) + cfg
    items = list(params.tensors.items()) + list((extras or {}).items())
    for name, t in items:
        t = np.ascontiguousarray(t, dtype="<f8")
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb)) + nb
        buf += struct.pack("<I", t.ndim)
        buf += struct.pack(f"<{t.ndim}Q", *t.shape)
        buf += t.tobytes()
    Path(path).write_bytes(bytes(buf))


def read_checkpoint(path) -> tuple[ModelParams, dict[str, np.ndarray]]:
    """Inverse of ``write_checkpoint``; returns params and any extra tensors."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    pos = 4
    try:
        (version,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        config = ModelConfig.from_json(raw[pos : pos + n].decode("utf-8"))
        pos += n
        tensors = {}
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", raw, pos)
            pos += 8 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(raw):
                raise CheckpointError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint") from exc
    names = param_shapes(config)
    params = ModelParams(config, {k: tensors.pop(k) for k in names if k in tensors})
    return params, tensors
