"""Distance computations: chi-square baseline and the learned boundary metric.

The learned metric maps a concatenated cue histogram U (length M) through a
bank of logistic units,

    t_n = 1 / (1 + exp(-(alpha_n + sum_m beta[n, m] * U_m))),

and measures either an RBF distance 1 - exp(-||tU - tV||^2 / (2 sigma^2))
or a mean absolute difference (the "linear" kernel) between the transformed
vectors.  One (alpha, beta) set exists per pooling scale; the final response
is the mean of the per-scale distances.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .features import FeatureConfig
from .validation import check_histogram, check_pair_lengths

KERNEL_RBF = "rbf"
KERNEL_LINEAR = "linear"

# distances are clamped to [CLAMP_EPS, 1 - CLAMP_EPS] before entering the
# log loss, so saturation cannot produce infinities
CLAMP_EPS = 1e-12


@dataclass
class ChiSquareModel:
    """Per-(cue, scale) fusion weights for the chi-square pipeline."""

    weights: np.ndarray  # (n_cues, n_scales), >= 0
    mode: str = "learned"  # 'learned' | 'equal'
    feature_config: FeatureConfig = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("chi-square weights must be a (cues, scales) grid")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("chi-square weights must be finite and >= 0")
        if self.mode == "equal" and np.ptp(self.weights) != 0:
            raise ValueError("equal mode requires identical weights")

    @classmethod
    def equal(cls, n_cues=4, n_scales=4, feature_config=None):
        w = np.full((n_cues, n_scales), 1.0 / (n_cues * n_scales))
        return cls(weights=w, mode="equal", feature_config=feature_config)


@dataclass
class MetricModel:
    """Per-scale logistic parameters plus the kernel choice.

    alpha: (S, N); beta: (S, N, M).  feature_config echoes the histogram
    layout the model was trained for.
    """

    alpha: np.ndarray
    beta: np.ndarray
    kernel: str = KERNEL_RBF
    sigma: float = 0.2
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.ndim != 2 or self.beta.ndim != 3:
            raise ValueError("alpha must be (S, N) and beta (S, N, M)")
        if self.beta.shape[:2] != self.alpha.shape:
            raise ValueError(
                f"beta shape {self.beta.shape} inconsistent with alpha {self.alpha.shape}"
            )
        if self.kernel not in (KERNEL_RBF, KERNEL_LINEAR):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError("sigma must be positive")
        if not (np.all(np.isfinite(self.alpha)) and np.all(np.isfinite(self.beta))):
            raise ValueError("model parameters must be finite")
        if self.n_out < 1:
            raise ValueError("output dimension must be >= 1")
        if self.feature_config is not None and self.feature_config.total_bins != self.n_in:
            raise ValueError(
                f"beta inner dimension {self.n_in} does not match the feature "
                f"config ({self.feature_config.total_bins} bins)"
            )

    @property
    def n_scales(self):
        return self.alpha.shape[0]

    @property
    def n_out(self):
        return self.alpha.shape[1]

    @property
    def n_in(self):
        return self.beta.shape[2]

    def scale_view(self, s):
        """Single-scale model sharing parameter storage with this one."""
        fc = self.feature_config
        if fc is not None:
            fc = FeatureConfig(
                lab_bins=fc.lab_bins,
                texton_count=fc.texton_count,
                radii=(fc.radii[s],),
                n_orient=fc.n_orient,
                texton_orientations=fc.texton_orientations,
                texton_scales=fc.texton_scales,
            )
        return MetricModel(
            alpha=self.alpha[s : s + 1],
            beta=self.beta[s : s + 1],
            kernel=self.kernel,
            sigma=self.sigma,
            feature_config=fc,
        )

    def copy(self):
        return MetricModel(
            alpha=self.alpha.copy(),
            beta=self.beta.copy(),
            kernel=self.kernel,
            sigma=self.sigma,
            feature_config=self.feature_config,
        )


def chi_square(u, v):
    """0.5 * sum (u - v)^2 / (u + v); empty bins contribute 0.

    In [0, 1] for L1-normalized inputs.
    """
    u = check_histogram(u, "u")
    v = check_histogram(v, "v")
    check_pair_lengths(u, v)
    s = u + v
    d = u - v
    nz = s > 0
    return float(0.5 * np.sum(d[nz] ** 2 / s[nz]))


def combine_chi_square(dists, model):
    """Weighted sum of the per-(cue, scale) chi-square grid."""
    dists = np.asarray(dists, dtype=np.float64)
    if dists.shape != model.weights.shape:
        raise ValueError(
            f"distance grid {dists.shape} does not match weights {model.weights.shape}"
        )
    return float(np.sum(model.weights * dists))


def logistic_transform(u, alpha, beta):
    """Apply the logistic unit bank: expit(alpha + beta @ u).  Saturates
    cleanly without overflow."""
    u = np.asarray(u, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (alpha.shape[0], u.shape[0]):
        raise ValueError(
            f"dimension mismatch: beta {beta.shape}, alpha {alpha.shape}, u {u.shape}"
        )
    return expit(alpha + beta @ u)


def kernel_distance(tu, tv, model):
    """Distance between transformed vectors.

    rbf:    1 - exp(-||tu - tv||^2 / (2 sigma^2)), in [0, 1)
    linear: mean(|tu - tv|), in [0, 1] for inputs in (0, 1)
    """
    tu = np.asarray(tu, dtype=np.float64)
    tv = np.asarray(tv, dtype=np.float64)
    check_pair_lengths(tu, tv)
    diff = tu - tv
    if model.kernel == KERNEL_RBF:
        return float(-np.expm1(-np.dot(diff, diff) / (2.0 * model.sigma**2)))
    return float(np.mean(np.abs(diff)))


def metric_distance(u, v, model, scale=0):
    """Learned distance at one scale: transform both histograms with the
    scale's parameters and apply the kernel."""
    tu = logistic_transform(u, model.alpha[scale], model.beta[scale])
    tv = logistic_transform(v, model.alpha[scale], model.beta[scale])
    return kernel_distance(tu, tv, model)


def mean_scale_distance(per_scale):
    """Arithmetic mean of the per-scale distances."""
    per_scale = np.asarray(per_scale, dtype=np.float64)
    if per_scale.size == 0:
        raise ValueError("at least one per-scale distance is required")
    return float(per_scale.mean())


def combined_distance(sample_u, sample_v, model):
    """Mean learned distance over all scales of a model.

    sample_u/sample_v: (S, M) stacked histograms.
    """
    vals = [
        metric_distance(sample_u[s], sample_v[s], model, s)
        for s in range(model.n_scales)
    ]
    return mean_scale_distance(vals)


def clamp_distance(d):
    """Clamp into [CLAMP_EPS, 1 - CLAMP_EPS] before the log loss."""
    return min(max(d, CLAMP_EPS), 1.0 - CLAMP_EPS)
