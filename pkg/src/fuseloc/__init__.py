"""Multi-modal indoor localization toolkit.

Recurrent multi-stream fusion with learned importance weights, a full
measurement-curation pipeline, classical trilateration/fingerprint
baselines, and a synthetic multi-room data simulator for desk-scale
experiments.
"""

__version__ = "0.1.0"

from .curation import (CurationConfig, CuratedDataset, MultiModalWindow, RawSample,
                       Recording, curate_recording, standardize, window_sequences)
from .fusion import FusionConfig, FusionModel, mse_loss
from .metrics import MetricsSummary, cdf_curve, euclidean_errors, summarize
from .simulator import Floorplan, SimConfig, Trajectory, simulate
from .training import TrainConfig, split_dataset, train

__all__ = [
    "CurationConfig", "CuratedDataset", "MultiModalWindow", "RawSample", "Recording",
    "curate_recording", "standardize", "window_sequences",
    "FusionConfig", "FusionModel", "mse_loss",
    "MetricsSummary", "cdf_curve", "euclidean_errors", "summarize",
    "Floorplan", "SimConfig", "Trajectory", "simulate",
    "TrainConfig", "split_dataset", "train",
    "__version__",
]
