"""Small input-validation helpers used across modules."""

import numpy as np


def as_rng(seed):
    """Return a Generator from a seed, an existing Generator, or None."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_histogram(h, name="histogram"):
    """Validate a 1-D nonnegative finite array and return it as float64."""
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(h < 0):
        raise ValueError(f"{name} contains negative entries")
    return h


def check_pair_lengths(u, v):
    if u.shape != v.shape:
        raise ValueError(f"histogram lengths differ: {u.shape} vs {v.shape}")


def check_same_shape(a, b, what="arrays"):
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes: {a.shape} vs {b.shape}")


def check_strength_map(strength):
    """Validate a (H, W) float map with values in [0, 1]."""
    strength = np.asarray(strength, dtype=np.float64)
    if strength.ndim != 2:
        raise ValueError(f"strength map must be 2-D, got shape {strength.shape}")
    if not np.all(np.isfinite(strength)):
        raise ValueError("strength map contains non-finite values")
    if strength.min() < 0.0 or strength.max() > 1.0:
        raise ValueError("strength map values must lie in [0, 1]")
    return strength
