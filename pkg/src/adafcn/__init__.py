"""Adaptive frequency-coupled graph networks for ROI time-series classification."""
from .config import Config, ModelConfig, load_config
from .dataio import Dataset, RoiTimeSeries, load_dataset, split_kfold, synth_band_dataset
from .model import AdaFCN
from .trainer import run_cv, train_fold

__version__ = "0.1.0"

__all__ = ["AdaFCN", "Config", "Dataset", "ModelConfig", "RoiTimeSeries", "load_config",
           "load_dataset", "run_cv", "split_kfold", "synth_band_dataset", "train_fold"]
