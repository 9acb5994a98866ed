"""Full-image wiring: cues -> per-orientation boundary responses -> maps.

Both response paths pool with the shared half-disk machinery but never
materialize per-pixel histograms:

* chi-square: per-bin pooled counts are accumulated straight into the
  per-(cue, scale) chi-square sums.
* learned metric: because the logistic pre-activation is affine in the
  histogram, beta @ U equals the half-disk mean of a per-pixel projection
  image (one channel per logistic unit).  Pooling therefore happens in the
  N-dimensional transformed space instead of over all histogram bins, which
  is what makes this path several times faster than the chi-square one.

Pixels where either half disk has no in-image pixel produce response 0.
"""

import zlib

import numpy as np
from scipy.special import expit

from .errors import IncompatibleModelError
from .features import (
    CueStack,
    FeatureConfig,
    half_disk_masks,
    pool_correlate,
)
from .imgproc import (
    COLOR_GRAY,
    COLOR_RGB,
    MultiChannelImage,
    compute_textons,
    make_filter_bank,
    rgb_to_gray,
    rgb_to_lab,
)
from .metric import KERNEL_RBF, ChiSquareModel, MetricModel
from .postproc import fuse_orientations, oriented_nms, smooth

_CHUNK_BINS = 8


def texton_seed(image_id, seed):
    """Stable per-image seed for texton clustering."""
    return (zlib.crc32(str(image_id).encode("utf-8")) ^ (seed & 0xFFFFFFFF)) & 0x7FFFFFFF


def compute_cues(img, fc=None, seed=0):
    """Quantized cue stack (L, a, b, texton) for an RGB or gray image."""
    from .features import quantize_cues

    fc = fc or FeatureConfig()
    if img.color_space == COLOR_GRAY:
        rgb = MultiChannelImage(np.repeat(img.data, 3, axis=2), COLOR_RGB)
    elif img.color_space == COLOR_RGB:
        rgb = img
    else:
        raise ValueError(f"cannot compute cues for color space {img.color_space!r}")
    lab = rgb_to_lab(rgb)
    gray = rgb_to_gray(rgb)
    bank = make_filter_bank(fc.texton_orientations, fc.texton_scales)
    textons = compute_textons(gray, bank, k=fc.texton_count, seed=seed)
    return quantize_cues(lab, textons, fc.lab_bins)


def _scale_masks(radius, n_orient):
    full, u_masks, _ = half_disk_masks(radius, n_orient)
    return np.concatenate([full[None], u_masks]).astype(np.float64)


def chi_square_responses(cues, model, cfg):
    """Per-(orientation, pixel) weighted chi-square response, shape (O, H, W)."""
    h, w = cues.shape
    n_o = cfg.n_orient
    if model.weights.shape != (cues.n_cues, cfg.n_scales):
        raise IncompatibleModelError(
            f"weight grid {model.weights.shape} does not match "
            f"{cues.n_cues} cues x {cfg.n_scales} scales"
        )
    out = np.zeros((n_o, h, w))
    for s in range(cfg.n_scales):
        masks = _scale_masks(cfg.radii[s], n_o)
        n_all = np.rint(pool_correlate(np.ones((1, h, w)), masks))[0]
        n_u = n_all[1:]
        n_v = n_all[0][None] - n_all[1:]
        valid = (n_u > 0) & (n_v > 0)
        safe_u = np.where(n_u > 0, n_u, 1.0)
        safe_v = np.where(n_v > 0, n_v, 1.0)
        for c in range(cues.n_cues):
            if model.weights[c, s] == 0.0:
                continue
            acc = np.zeros((n_o, h, w))
            labels = cues.labels[c]
            for b0 in range(0, cues.bins[c], _CHUNK_BINS):
                b1 = min(b0 + _CHUNK_BINS, cues.bins[c])
                ind = np.stack(
                    [(labels == b) for b in range(b0, b1)]
                ).astype(np.float64)
                cnt = np.rint(pool_correlate(ind, masks))  # (chunk, O+1, H, W)
                cu = cnt[:, 1:]
                cv_ = cnt[:, 0][:, None] - cnt[:, 1:]
                hu = cu / safe_u
                hv = cv_ / safe_v
                den = hu + hv
                num = (hu - hv) ** 2
                with np.errstate(invalid="ignore", divide="ignore"):
                    acc += 0.5 * np.where(den > 0, num / den, 0.0).sum(axis=0)
            out += model.weights[c, s] * np.where(valid, acc, 0.0)
    return np.clip(out, 0.0, 1.0)


def learned_metric_responses(cues, model):
    """Mean per-scale learned-metric response, shape (O, H, W).

    Pools the logistic projection images (N channels) rather than per-bin
    indicators; see the module docstring for why this is equivalent.
    """
    fc = model.feature_config
    if fc is None:
        raise IncompatibleModelError("metric model lacks a feature config echo")
    if tuple(fc.bins) != tuple(cues.bins):
        raise IncompatibleModelError(
            f"model bins {fc.bins} do not match cue stack bins {cues.bins}"
        )
    cfg = fc.scale_config()
    h, w = cues.shape
    n_o = cfg.n_orient
    offsets = cues.offsets
    acc = np.zeros((n_o, h, w))
    for s in range(model.n_scales):
        alpha = model.alpha[s]
        beta = model.beta[s]
        n_out = model.n_out
        proj = np.zeros((n_out, h, w))
        for c in range(cues.n_cues):
            block = beta[:, offsets[c] : offsets[c] + cues.bins[c]]
            proj += block[:, cues.labels[c]]
        masks = _scale_masks(cfg.radii[s], n_o)
        pooled = pool_correlate(
            np.concatenate([np.ones((1, h, w)), proj]), masks
        )  # (1 + N, O + 1, H, W)
        n_full = np.rint(pooled[0, 0])
        n_u = np.rint(pooled[0, 1:])
        n_v = n_full[None] - n_u
        valid = (n_u > 0) & (n_v > 0)
        safe_u = np.where(n_u > 0, n_u, 1.0)
        safe_v = np.where(n_v > 0, n_v, 1.0)
        q_full = pooled[1:, 0]
        q_u = pooled[1:, 1:]
        q_v = q_full[:, None] - q_u
        tu = expit(alpha[:, None, None, None] + q_u / safe_u[None])
        tv = expit(alpha[:, None, None, None] + q_v / safe_v[None])
        diff = tu - tv
        if model.kernel == KERNEL_RBF:
            z = np.einsum("nohw,nohw->ohw", diff, diff)
            d = -np.expm1(-z / (2.0 * model.sigma**2))
        else:
            d = np.abs(diff).mean(axis=0)
        acc += np.where(valid, d, 0.0)
    return np.clip(acc / model.n_scales, 0.0, 1.0)


def boundary_responses(cues, model, cfg=None):
    """Dispatch to the chi-square or learned-metric response path."""
    if isinstance(model, ChiSquareModel):
        if cfg is None:
            fc = model.feature_config or FeatureConfig()
            cfg = fc.scale_config()
        return chi_square_responses(cues, model, cfg)
    if isinstance(model, MetricModel):
        return learned_metric_responses(cues, model)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def detect_from_cues(cues, model, smoothing_radius=1.0):
    """Responses -> fused raw map -> smoothed -> oriented NMS.

    Returns (raw, thinned) boundary maps; `raw` is the smoothed fusion.
    """
    responses = boundary_responses(cues, model)
    raw = fuse_orientations(responses)
    raw = smooth(raw, smoothing_radius)
    return raw, oriented_nms(raw)


def detect_image(img, model, seed=0, smoothing_radius=1.0, image_id=None):
    """End-to-end detection on a decoded image."""
    fc = model.feature_config or FeatureConfig()
    cues = compute_cues(img, fc, seed=texton_seed(image_id or "", seed))
    return detect_from_cues(cues, model, smoothing_radius)
