"""Estimator-style front end: fit on a labelled corpus, predict boundary maps.

Both detectors follow the sklearn conventions (constructor stores
hyperparameters verbatim, `fit` returns self and sets trailing-underscore
attributes, `get_params`/`set_params` work through BaseEstimator), so they
compose with sklearn tooling such as `clone`.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .features import (
    DEFAULT_LAB_BINS,
    DEFAULT_N_ORIENT,
    DEFAULT_RADII,
    DEFAULT_TEXTON_COUNT,
    FeatureConfig,
)
from .imgproc import COLOR_GRAY, COLOR_RGB, MultiChannelImage
from .metric import ChiSquareModel
from .pipeline import compute_cues, detect_from_cues
from .training import TrainConfig, fit_chi_square_weights, train


def _as_image(x):
    if isinstance(x, MultiChannelImage):
        return x
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return MultiChannelImage(x, COLOR_GRAY)
    if x.ndim == 3 and x.shape[2] == 3:
        return MultiChannelImage(x, COLOR_RGB)
    raise ValueError(f"expected (H, W) gray or (H, W, 3) rgb array, got {x.shape}")


class _BoundaryDetectorBase(BaseEstimator):
    def _feature_config(self):
        radii = tuple(self.radii)
        if self.scale is not None:
            radii = (radii[self.scale],)
        return FeatureConfig(
            lab_bins=tuple(self.lab_bins),
            texton_count=self.texton_count,
            radii=radii,
            n_orient=self.n_orient,
        )

    def _check_fitted(self):
        if getattr(self, "model_", None) is None:
            raise NotFittedError(
                f"{type(self).__name__} must be fitted before calling predict"
            )

    def predict(self, x, seed=0):
        """Thinned boundary map for one image (array or MultiChannelImage)."""
        return self.boundary_maps(x, seed=seed)[1]

    def boundary_maps(self, x, seed=0):
        """(raw, thinned) boundary maps for one image."""
        self._check_fitted()
        img = _as_image(x)
        cues = compute_cues(img, self.model_.feature_config, seed=seed)
        return detect_from_cues(cues, self.model_, self.smoothing_radius)


class ChiSquareBoundaryDetector(_BoundaryDetectorBase):
    """Histogram chi-square boundary detector with equal or fitted cue weights.

    weight_mode 'equal' needs no training data; 'learned' fits the 16 fusion
    weights by logistic regression on annotated images.
    """

    def __init__(
        self,
        weight_mode="equal",
        lab_bins=DEFAULT_LAB_BINS,
        texton_count=DEFAULT_TEXTON_COUNT,
        radii=DEFAULT_RADII,
        n_orient=DEFAULT_N_ORIENT,
        scale=None,
        smoothing_radius=1.0,
        samples_per_image=64,
        seed=0,
    ):
        self.weight_mode = weight_mode
        self.lab_bins = lab_bins
        self.texton_count = texton_count
        self.radii = radii
        self.n_orient = n_orient
        self.scale = scale
        self.smoothing_radius = smoothing_radius
        self.samples_per_image = samples_per_image
        self.seed = seed

    def fit(self, items=None, y=None):
        fc = self._feature_config()
        if self.weight_mode == "equal":
            self.model_ = ChiSquareModel.equal(4, fc.n_scales, fc)
        elif self.weight_mode == "learned":
            if not items:
                raise ValueError("weight_mode='learned' requires dataset items")
            self.model_ = fit_chi_square_weights(
                items, fc, seed=self.seed, samples_per_image=self.samples_per_image
            )
        else:
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        return self


class LearnedMetricBoundaryDetector(_BoundaryDetectorBase):
    """Boundary detector with a trainable metric: per-scale logistic
    transforms plus an RBF (or mean-absolute) distance, fitted by SGD."""

    def __init__(
        self,
        kernel="rbf",
        n_out=16,
        sigma=0.2,
        learning_rate=1e-4,
        init_range=1.0,
        patience=5,
        max_epochs=40,
        epoch_size=20,
        sample_threshold=0.3,
        lab_bins=DEFAULT_LAB_BINS,
        texton_count=DEFAULT_TEXTON_COUNT,
        radii=DEFAULT_RADII,
        n_orient=DEFAULT_N_ORIENT,
        scale=None,
        smoothing_radius=1.0,
        seed=0,
    ):
        self.kernel = kernel
        self.n_out = n_out
        self.sigma = sigma
        self.learning_rate = learning_rate
        self.init_range = init_range
        self.patience = patience
        self.max_epochs = max_epochs
        self.epoch_size = epoch_size
        self.sample_threshold = sample_threshold
        self.lab_bins = lab_bins
        self.texton_count = texton_count
        self.radii = radii
        self.n_orient = n_orient
        self.scale = scale
        self.smoothing_radius = smoothing_radius
        self.seed = seed

    def _train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate,
            n_out=self.n_out,
            sigma=self.sigma,
            kernel=self.kernel,
            init_range=self.init_range,
            patience=self.patience,
            max_epochs=self.max_epochs,
            epoch_size=self.epoch_size,
            sample_threshold=self.sample_threshold,
            smoothing_radius=self.smoothing_radius,
            seed=self.seed,
        )

    def fit(self, items, y=None):
        if not items:
            raise ValueError("fit requires dataset items with train/val splits")
        self.model_, self.training_log_ = train(
            items, self._train_config(), self._feature_config()
        )
        return self
