"""Multi-cue boundary detection: chi-square baseline and a trainable metric."""

__version__ = "0.1.0"

from .data import CorpusSpec, DatasetItem, load_dataset, synth_generate
from .detectors import ChiSquareBoundaryDetector, LearnedMetricBoundaryDetector
from .errors import EdgeMetricError
from .features import CueStack, FeatureConfig, ScaleConfig
from .imgproc import MultiChannelImage, add_gaussian_noise, load_image, rgb_to_lab
from .metric import ChiSquareModel, MetricModel, chi_square
from .pipeline import compute_cues, detect_from_cues, detect_image
from .postproc import BoundaryMap, load_boundary_png, save_boundary_png
from .training import TrainConfig, load_model, save_model, train

__all__ = [
    "BoundaryMap",
    "ChiSquareBoundaryDetector",
    "ChiSquareModel",
    "CorpusSpec",
    "CueStack",
    "DatasetItem",
    "EdgeMetricError",
    "FeatureConfig",
    "LearnedMetricBoundaryDetector",
    "MetricModel",
    "MultiChannelImage",
    "ScaleConfig",
    "TrainConfig",
    "add_gaussian_noise",
    "chi_square",
    "compute_cues",
    "detect_from_cues",
    "detect_image",
    "load_boundary_png",
    "load_dataset",
    "load_image",
    "load_model",
    "rgb_to_lab",
    "save_boundary_png",
    "save_model",
    "synth_generate",
    "train",
    "__version__",
]
