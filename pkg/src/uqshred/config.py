"""Flat ``key = value`` run configuration with typed keys and overrides."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _widths(text: str):
    return None if text.strip().lower() in ("", "auto") else _ints(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt_seq(v) -> str:
    return ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    fmt: Callable[[Any], str] = str


_REQUIRED = object()

KEYS: dict[str, Key] = {
    # data synthesis
    "generator": Key(str, _REQUIRED),
    "T": Key(int, 2000),
    "grid_size": Key(int, 64),
    "grid_dim": Key(int, 1),
    "n_modes": Key(int, 3),
    "m": Key(int, 20),
    "p_latent": Key(int, 3),
    "noise_scale": Key(float, 0.5),
    "ar_coef": Key(float, 0.9),
    "format": Key(str, "binary"),
    # sensing and splits
    "sensors": Key(int, 3),
    "sensor_mode": Key(str, "random"),
    "sensor_list": Key(_ints, (), _fmt_seq),
    "lag": Key(int, 10),
    "split_mode": Key(str, "random"),
    "train_frac": Key(float, 0.8),
    "val_frac": Key(float, 0.1),
    "test_frac": Key(float, 0.1),
    # model
    "noise_dim": Key(int, 32),
    "hidden_dim": Key(int, 32),
    "unit": Key(str, "gru"),
    "decoder_widths": Key(_widths, None, lambda v: "auto" if v is None else _fmt_seq(v)),
    "activation": Key(str, "relu"),
    # training
    "epochs": Key(int, 200),
    "batch_size": Key(int, 32),
    "lr": Key(float, 1e-3),
    "beta1": Key(float, 0.9),
    "beta2": Key(float, 0.999),
    "adam_eps": Key(float, 1e-8),
    "patience": Key(int, 20),
    "early_stopping": Key(_bool, True, lambda v: "true" if v else "false"),
    # inference and metrics
    "mc_samples": Key(int, 200),
    "levels": Key(_floats, (0.5, 0.7, 0.9, 0.95, 0.99), _fmt_seq),
    "seed": Key(int, 0),
}


class RunConfig(Mapping):
    """Resolved configuration: defaults, then file, then overrides (last wins)."""

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    @classmethod
    def resolve(cls, path=None, overrides=()) -> "RunConfig":
        raw: dict[str, str] = {}
        if path is not None:
            raw.update(parse_text(Path(path).read_text(), source=str(path)))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not of the form key=value")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        values = {}
        for k, text in raw.items():
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            try:
                values[k] = KEYS[k].parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {k!r}: {text!r} ({exc})") from None
        for k, spec in KEYS.items():
            values.setdefault(k, spec.default)
        return cls(values)

    def require(self, *keys: str) -> None:
        for k in keys:
            if self._values.get(k) is _REQUIRED:
                raise ConfigError(f"missing required config key {k!r}")

    def with_values(self, **kw) -> "RunConfig":
        for k in kw:
            if k not in KEYS:
                raise ConfigError(f"unknown config key {k!r}")
        return RunConfig({**self._values, **kw})

    def __getitem__(self, k):
        v = self._values[k]
        if v is _REQUIRED:
            raise ConfigError(f"missing required config key {k!r}")
        return v

    def __iter__(self):
        return iter(KEYS)

    def __len__(self):
        return len(KEYS)

    def to_text(self) -> str:
        lines = []
        for k, spec in KEYS.items():
            v = self._values[k]
            if v is _REQUIRED:
                continue
            lines.append(f"{k} = {spec.fmt(v)}")
        return "\n".join(lines) + "\n"


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
