import numpy as np
import pytest

from edgemetric.features import CueStack, FeatureConfig, ScaleConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cue_stack(rng, h, w, bins=(25, 25, 25, 32)):
    labels = np.stack(
        [rng.integers(0, b, size=(h, w)).astype(np.int32) for b in bins]
    )
    return CueStack(labels=labels, bins=tuple(bins))


def random_histogram(rng, m, concentrated=False):
    """Random L1-normalized histogram; optionally sparse."""
    if concentrated:
        h = np.zeros(m)
        idx = rng.choice(m, size=max(1, m // 8), replace=False)
        h[idx] = rng.random(len(idx))
    else:
        h = rng.random(m)
    return h / h.sum()


def random_sample_histograms(rng, n_scales, fc=None):
    """(S, M) stacked histograms with per-cue slices each summing to 1."""
    fc = fc or FeatureConfig()
    m = fc.total_bins
    out = np.zeros((n_scales, m))
    offset = 0
    for b in fc.bins:
        for s in range(n_scales):
            out[s, offset : offset + b] = random_histogram(rng, b)
        offset += b
    return out


@pytest.fixture
def scale_cfg():
    return ScaleConfig(radii=(3, 5, 10, 20), n_orient=8)
