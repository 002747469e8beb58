"""Sparse-sensor field reconstruction with distributional (energy-score) training."""

from uqshred.autodiff import Graph, finite_diff_check
from uqshred.data import FieldDataset, WindowedSample, build_windows, make_dataset
from uqshred.inference import PredictiveEnsemble, empirical_quantile, mc_sample, predictive_summary
from uqshred.metrics import UQReport, calibration_curve, crps_sample, energy_distance
from uqshred.model import ModelConfig, ModelParams, init_params, model_forward
from uqshred.training import TrainConfig, TrainHistory, batch_loss, energy_score_loss, train

__version__ = "0.1.0"
