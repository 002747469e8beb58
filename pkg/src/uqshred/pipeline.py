"""End-to-end steps behind the command-line interface.

Every step takes a resolved :class:`RunConfig` and writes into an output
directory that also receives ``config.txt``, the resolved configuration
including the seed, so a run can be repeated from its directory alone.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from uqshred.config import ConfigError, RunConfig
from uqshred.data import (
    FieldDataset,
    TEST,
    denormalize,
    gen_linear_gaussian_field,
    gen_wave_field,
    load_field,
    NormStats,
    save_field,
    select_sensors,
    split_windows,
    window_arrays,
    normalize,
)
from uqshred.inference import interval_bounds, noise_for_draws, warn_if_few_samples
from uqshred.metrics import ReportAccumulator, UQReport
from uqshred.model import ModelConfig, ModelParams, predict, read_checkpoint, write_checkpoint
from uqshred.training import TrainConfig, TrainHistory, fit
from uqshred.model import init_params

log = logging.getLogger(__name__)

BAND_LEVELS = (0.5, 0.7, 0.95)
ABLATION_AXES = ("lag", "sensors", "noise_dim", "mc_samples", "epochs")

# independent seed streams derived from the global seed
_SYNTH, _SENSORS, _SPLIT, _TRAIN, _EVAL = range(5)


def stream(cfg: RunConfig, which: int) -> np.random.Generator:
    return np.random.default_rng([cfg["seed"], which])


def write_config_echo(cfg: RunConfig, out: Path) -> None:
    (out / "config.txt").write_text(cfg.to_text())


# ----------------------------------------------------------------------
# synth


def synthesize(cfg: RunConfig):
    """Generate the configured field; returns ``(field, generator_object_or_None)``."""
    cfg.require("generator")
    rng = stream(cfg, _SYNTH)
    name = cfg["generator"]
    if name == "wave":
        return gen_wave_field(cfg["T"], cfg["grid_size"], cfg["n_modes"], rng, dim=cfg["grid_dim"]), None
    if name in ("linear_gaussian", "linear-gaussian"):
        gen = gen_linear_gaussian_field(cfg["T"], cfg["m"], cfg["p_latent"], cfg["noise_scale"], rng, ar_coef=cfg["ar_coef"])
        return gen.field, gen
    raise ConfigError(f"unknown generator {name!r}; expected 'wave' or 'linear_gaussian'")


def cmd_synth(cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    field, _ = synthesize(cfg)
    fmt = cfg["format"]
    if fmt not in ("binary", "csv"):
        raise ConfigError(f"unknown format {fmt!r}")
    path = out / ("field.csv" if fmt == "csv" else "field.uqsf")
    save_field(field, path, fmt)
    write_config_echo(cfg, out)
    prov = {"generator": cfg["generator"], "seed": cfg["seed"], "T": field.shape[0], "m": field.shape[1]}
    (out / "provenance.json").write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n")
    return path


# ----------------------------------------------------------------------
# train


def build_dataset(cfg: RunConfig, field: np.ndarray, provenance: str = "") -> FieldDataset:
    T, m = field.shape
    mode = cfg["sensor_mode"]
    sensors = select_sensors(
        m, cfg["sensors"], mode, rng=stream(cfg, _SENSORS), indices=cfg["sensor_list"] or None
    )
    fractions = (cfg["train_frac"], cfg["val_frac"], cfg["test_frac"])
    n = T - cfg["lag"] + 1
    if n < 1:
        raise ConfigError(f"lag {cfg['lag']} exceeds the {T} time steps of the field")
    split = split_windows(n, fractions, cfg["split_mode"], stream(cfg, _SPLIT))
    return FieldDataset(field, sensors, cfg["lag"], split, provenance)


def model_config(cfg: RunConfig, state_dim: int) -> ModelConfig:
    return ModelConfig(
        lag=cfg["lag"],
        sensors=cfg["sensors"],
        state_dim=state_dim,
        noise_dim=cfg["noise_dim"],
        hidden_dim=cfg["hidden_dim"],
        unit=cfg["unit"],
        decoder_widths=cfg["decoder_widths"],
        activation=cfg["activation"],
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    if cfg["early_stopping"] and cfg["val_frac"] == 0:
        raise ConfigError("early stopping requires val_frac > 0")
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        adam_eps=cfg["adam_eps"],
        val_fraction=cfg["val_frac"],
        patience=cfg["patience"] if cfg["early_stopping"] else 0,
        seed=cfg["seed"],
    )


def check_noise_dim(mcfg: ModelConfig) -> None:
    if 0 < mcfg.noise_dim < mcfg.sensors:
        warnings.warn(
            f"noise_dim={mcfg.noise_dim} is small next to the {mcfg.sensors} sensor inputs; "
            "the noise dimension should scale with the input size",
            stacklevel=2,
        )


def dataset_extras(ds: FieldDataset) -> dict[str, np.ndarray]:
    return {
        "data.sensors": ds.sensors.astype(np.float64),
        "data.split": ds.split.astype(np.float64),
        "norm.lo": ds.stats.lo,
        "norm.hi": ds.stats.hi,
    }


def train_on(cfg: RunConfig, ds: FieldDataset) -> tuple[ModelParams, TrainHistory]:
    mcfg = model_config(cfg, ds.state_dim)
    check_noise_dim(mcfg)
    tcfg = train_config(cfg)
    rng = stream(cfg, _TRAIN)
    params = init_params(mcfg, rng)
    return fit(params, ds.arrays("train"), ds.arrays("val"), tcfg, rng)


def cmd_train(cfg: RunConfig, data, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    field = load_field(data)
    ds = build_dataset(cfg, field, provenance=str(data))
    params, history = train_on(cfg, ds)
    ckpt = out / "checkpoint.uqsm"
    write_checkpoint(ckpt, params, dataset_extras(ds))
    history.write_csv(out / "history.csv")
    write_config_echo(cfg, out)
    if not all(math.isfinite(v) for v in history.train_loss):
        raise FloatingPointError("training history contains non-finite losses")
    return ckpt


# ----------------------------------------------------------------------
# eval


@dataclass
class EvalContext:
    params: ModelParams
    sensors: np.ndarray
    split: np.ndarray
    stats: NormStats


def load_eval_context(checkpoint, field: np.ndarray) -> EvalContext:
    params, extras = read_checkpoint(checkpoint)
    cfg = params.config
    T, m = field.shape
    if cfg.state_dim != m:
        raise ConfigError(f"checkpoint expects {cfg.state_dim} cells but the data has {m}")
    for k in ("data.sensors", "data.split", "norm.lo", "norm.hi"):
        if k not in extras:
            raise ConfigError(f"checkpoint lacks {k!r}")
    sensors = extras["data.sensors"].astype(np.int64)
    split = extras["data.split"].astype(np.int64)
    if len(sensors) != cfg.sensors or sensors.max() >= m:
        raise ConfigError("checkpoint sensor indices do not fit the data")
    if len(split) != T - cfg.lag + 1:
        raise ConfigError(
            f"checkpoint has {len(split)} window labels but the data yields {T - cfg.lag + 1} windows"
        )
    return EvalContext(params, sensors, split, NormStats(extras["norm.lo"], extras["norm.hi"]))


def evaluate(
    ctx: EvalContext,
    field: np.ndarray,
    K: int,
    levels: Sequence[float],
    rng: np.random.Generator,
    rows: list | None = None,
) -> UQReport:
    """Sample ``K`` states per test window and score them in physical units."""
    warn_if_few_samples(K)
    cfg = ctx.params.config
    X, Y, ts = window_arrays(normalize(field, ctx.stats), ctx.sensors, cfg.lag)
    test = np.flatnonzero(ctx.split == TEST)
    if test.size == 0:
        raise ConfigError("test split is empty")
    acc = ReportAccumulator(levels)
    for i in test:
        noise = noise_for_draws(rng, K, cfg.noise_dim)
        samples = predict(ctx.params, np.broadcast_to(X[i], (K,) + X[i].shape), noise)
        samples = denormalize(samples, ctx.stats)
        truth = field[ts[i]]
        res = acc.add(samples, truth)
        if rows is not None:
            bands = [res["bounds"].get(a) or interval_bounds(samples, a) for a in BAND_LEVELS]
            for j in range(truth.size):
                row = [int(ts[i]), j, truth[j], res["median"][j]]
                for lo, hi in bands:
                    row += [lo[j], hi[j]]
                rows.append(row)
    return acc.report()


def cmd_eval(cfg: RunConfig, checkpoint, data, out) -> UQReport:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    field = load_field(data)
    ctx = load_eval_context(checkpoint, field)
    rows: list = []
    report = evaluate(ctx, field, cfg["mc_samples"], cfg["levels"], stream(cfg, _EVAL), rows)
    report.extra.update({"split_mode": cfg["split_mode"], "seed": cfg["seed"]})
    (out / "report.json").write_text(report.to_json() + "\n")
    report.write_calibration_csv(out / "calibration.csv")
    with open(out / "intervals.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cell", "truth", "median"] + [f"{s}{int(a * 100)}" for a in BAND_LEVELS for s in ("lo", "hi")])
        for r in rows:
            w.writerow(r[:2] + [repr(float(v)) for v in r[2:]])
    write_config_echo(cfg, out)
    if not report.is_finite():
        raise FloatingPointError("evaluation produced non-finite metrics")
    return report


# ----------------------------------------------------------------------
# ablate


def _axis_value(axis: str, text) -> int:
    v = int(text)
    if v < (0 if axis == "noise_dim" else 1):
        raise ConfigError(f"invalid {axis} value {v}")
    return v


def cmd_ablate(cfg: RunConfig, axis: str, grid: Sequence, data, out) -> Path:
    """Vary one axis over ``grid``; one CSV row per point.

    ``mc_samples`` reuses a single trained model; every other axis retrains.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    grid = [_axis_value(axis, g) for g in grid]
    if not grid:
        raise ConfigError("empty ablation grid")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(cfg, out)
    if data is not None:
        field = load_field(data)
    else:
        field, _ = synthesize(cfg)
        save_field(field, out / "field.uqsf")

    levels = tuple(sorted(set(cfg["levels"]) | {0.95}))
    results = []
    shared = None
    for value in grid:
        point = cfg.with_values(**{axis: value})
        sub = out / f"{axis}_{value}"
        sub.mkdir(exist_ok=True)
        write_config_echo(point, sub)
        if axis != "mc_samples" or shared is None:
            ds = build_dataset(point, field)
            params, history = train_on(point, ds)
            history.write_csv(sub / "history.csv")
            shared = EvalContext(params, ds.sensors, ds.split, ds.stats)
            write_checkpoint(sub / "checkpoint.uqsm", params, dataset_extras(ds))
        report = evaluate(shared, field, point["mc_samples"], levels, stream(point, _EVAL))
        (sub / "report.json").write_text(report.to_json() + "\n")
        results.append((value, report))
        log.info("%s=%s rmse=%.4g cov95=%.3f", axis, value, report.rmse, report.coverage[0.95])

    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "rmse", "coverage_95", "width_95", "crps"])
        for value, r in results:
            w.writerow([value, repr(r.rmse), repr(r.coverage[0.95]), repr(r.sharpness[0.95]), repr(r.crps)])
    return path
