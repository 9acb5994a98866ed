"""Cue quantization and half-disk histogram pooling.

A half-disk pair at pixel (x, y), orientation index o, scale s consists of
two label histograms pooled over the two halves of the disk of radius
``radii[s]``, split by the diameter at angle ``theta = o * pi / n_orient``.

Membership convention (shared by the brute-force oracle in the tests):
a pixel offset (dx, dy) belongs to the disk iff ``dx*dx + dy*dy <= r*r``;
it belongs to the U side iff ``-dx*sin(theta) + dy*cos(theta) >= 0``
(so U is the side whose outward normal points at ``theta + pi/2``, and
pixels exactly on the diameter go to U).  Offsets falling outside the
image are excluded; each cue slice is normalized by the number of pooled
pixels, so slices sum to 1 whenever that count is nonzero and stay all-zero
for a half that is entirely outside the image.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .validation import check_same_shape

DEFAULT_LAB_BINS = (25, 25, 25)
DEFAULT_TEXTON_COUNT = 32
DEFAULT_RADII = (3, 5, 10, 20)
DEFAULT_N_ORIENT = 8

# chunk bound for batched FFT pooling, in output elements (C * K * H * W)
_POOL_CHUNK_ELEMENTS = 6_000_000


@dataclass(frozen=True)
class ScaleConfig:
    """Disk radii (one per scale, strictly increasing, >= 2) and the number
    of evenly spaced orientations in [0, pi)."""

    radii: tuple = DEFAULT_RADII
    n_orient: int = DEFAULT_N_ORIENT

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        if not self.radii:
            raise ValueError("at least one scale radius is required")
        if any(r < 2 for r in self.radii):
            raise ValueError("scale radii must be >= 2")
        if any(b >= a for a, b in zip(self.radii[1:], self.radii)):
            raise ValueError("scale radii must be strictly increasing")
        if self.n_orient < 1:
            raise ValueError("n_orient must be >= 1")

    @property
    def n_scales(self):
        return len(self.radii)

    def angle(self, orient):
        return orient * np.pi / self.n_orient


@dataclass(frozen=True)
class FeatureConfig:
    """Bin counts and pooling geometry for the full cue pipeline; echoed into
    model files for compatibility checks."""

    lab_bins: tuple = DEFAULT_LAB_BINS
    texton_count: int = DEFAULT_TEXTON_COUNT
    radii: tuple = DEFAULT_RADII
    n_orient: int = DEFAULT_N_ORIENT
    texton_orientations: int = 8
    texton_scales: tuple = (1.4, 2.8)

    def __post_init__(self):
        object.__setattr__(self, "lab_bins", tuple(int(b) for b in self.lab_bins))
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        object.__setattr__(self, "texton_scales", tuple(float(s) for s in self.texton_scales))
        ScaleConfig(self.radii, self.n_orient)  # reuse its validation
        if len(self.lab_bins) != 3 or any(b < 1 for b in self.lab_bins):
            raise ValueError("lab_bins must be three positive counts")
        if self.texton_count < 2:
            raise ValueError("texton_count must be >= 2")

    @property
    def bins(self):
        return self.lab_bins + (self.texton_count,)

    @property
    def total_bins(self):
        return sum(self.bins)

    @property
    def n_scales(self):
        return len(self.radii)

    def scale_config(self):
        return ScaleConfig(self.radii, self.n_orient)

    def to_dict(self):
        return {
            "lab_bins": list(self.lab_bins),
            "texton_count": self.texton_count,
            "radii": list(self.radii),
            "n_orient": self.n_orient,
            "texton_orientations": self.texton_orientations,
            "texton_scales": list(self.texton_scales),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            lab_bins=tuple(d["lab_bins"]),
            texton_count=d["texton_count"],
            radii=tuple(d["radii"]),
            n_orient=d["n_orient"],
            texton_orientations=d.get("texton_orientations", 8),
            texton_scales=tuple(d.get("texton_scales", (1.4, 2.8))),
        )


@dataclass
class CueStack:
    """Per-pixel discrete labels for the four cues (L, a, b, texton)."""

    labels: np.ndarray  # (4, H, W) int32
    bins: tuple  # bin count per cue

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 3 or self.labels.shape[0] != len(self.bins):
            raise ValueError("labels must be (n_cues, H, W) matching bins")
        for c, b in enumerate(self.bins):
            lc = self.labels[c]
            if lc.min() < 0 or lc.max() >= b:
                raise ValueError(f"cue {c} labels out of range [0, {b})")

    @property
    def n_cues(self):
        return len(self.bins)

    @property
    def shape(self):
        return self.labels.shape[1:]

    @property
    def total_bins(self):
        return sum(self.bins)

    @property
    def offsets(self):
        """Start index of each cue's slice in the concatenated histogram."""
        return tuple(int(x) for x in np.cumsum((0,) + self.bins[:-1]))


@dataclass
class HalfDiskPair:
    u: np.ndarray  # concatenated histogram, length M
    v: np.ndarray
    n_u: int  # pooled pixel count per side
    n_v: int
    pixel: tuple  # (x, y)
    orient: int
    scale: int


@dataclass
class FeatureStack:
    """Half-disk pairs for every (pixel, orientation, scale).

    u/v have shape (H, W, O, S, M); counts has shape (H, W, O, S, 2).
    Kept in memory only; sizes grow quickly with the image.
    """

    u: np.ndarray
    v: np.ndarray
    counts: np.ndarray
    config: ScaleConfig
    bins: tuple


def quantize_cues(lab, textons, lab_bins=DEFAULT_LAB_BINS):
    """Bin each Lab channel uniformly over [0, 1]; texton labels pass through.

    Value 1.0 maps into the last bin.
    """
    if lab.data.shape[:2] != textons.labels.shape:
        raise ValueError(
            f"lab image {lab.data.shape[:2]} and texton map "
            f"{textons.labels.shape} have different dimensions"
        )
    if lab.data.min() < 0.0 or lab.data.max() > 1.0:
        raise ValueError("lab channels must be rescaled to [0, 1] before binning")
    channels = []
    for c, b in enumerate(lab_bins):
        q = np.minimum((lab.data[:, :, c] * b).astype(np.int32), b - 1)
        channels.append(q)
    channels.append(textons.labels.astype(np.int32))
    return CueStack(
        labels=np.stack(channels), bins=tuple(lab_bins) + (textons.k,)
    )


@lru_cache(maxsize=64)
def half_disk_masks(radius, n_orient):
    """(full, u, v) boolean masks of shape (2r+1, 2r+1); u has one layer per
    orientation.  Builds masks from the documented membership inequalities."""
    r = int(radius)
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    full = (dx * dx + dy * dy) <= r * r
    u = np.empty((n_orient,) + full.shape, dtype=bool)
    for o in range(n_orient):
        theta = o * np.pi / n_orient
        dot = -dx * np.sin(theta) + dy * np.cos(theta)
        u[o] = full & (dot >= 0.0)
    v = full[None, :, :] & ~u
    full.setflags(write=False)
    u.setflags(write=False)
    v.setflags(write=False)
    return full, u, v


def _masked_label_counts(labels, bins, mask, y, x):
    """Integer histogram of `labels` under `mask` centered at (y, x), clipped
    to the image; one row per cue."""
    r = mask.shape[0] // 2
    h, w = labels.shape[1:]
    y0, y1 = max(0, y - r), min(h, y + r + 1)
    x0, x1 = max(0, x - r), min(w, x + r + 1)
    sub = mask[y0 - (y - r) : y1 - (y - r), x0 - (x - r) : x1 - (x - r)]
    counts = []
    for c, b in enumerate(bins):
        vals = labels[c, y0:y1, x0:x1][sub]
        counts.append(np.bincount(vals, minlength=b).astype(np.int64))
    return counts


def _normalize_counts(counts):
    """Concatenate per-cue counts and L1-normalize each slice by the shared
    pooled-pixel count; all-zero when the half is empty."""
    n = int(counts[0].sum())
    hist = np.concatenate(counts).astype(np.float64)
    if n > 0:
        hist = hist / float(n)
    return hist, n


def half_disk_histograms(cues, x, y, orient, scale, cfg):
    """Histogram pair at one (pixel, orientation, scale)."""
    h, w = cues.shape
    if not (0 <= x < w and 0 <= y < h):
        raise ValueError(f"pixel ({x}, {y}) out of bounds for {w}x{h} image")
    if not (0 <= orient < cfg.n_orient):
        raise ValueError(f"orientation index {orient} out of range")
    if not (0 <= scale < cfg.n_scales):
        raise ValueError(f"scale index {scale} out of range")
    _, u_masks, v_masks = half_disk_masks(cfg.radii[scale], cfg.n_orient)
    cu = _masked_label_counts(cues.labels, cues.bins, u_masks[orient], y, x)
    cv_ = _masked_label_counts(cues.labels, cues.bins, v_masks[orient], y, x)
    u, n_u = _normalize_counts(cu)
    v, n_v = _normalize_counts(cv_)
    return HalfDiskPair(u=u, v=v, n_u=n_u, n_v=n_v, pixel=(x, y), orient=orient, scale=scale)


def pool_correlate(channels, masks):
    """Zero-padded correlation of (C, H, W) channels with (K, kh, kw) masks,
    returning (C, K, H, W).  FFT-based; single batched transform per input.
    """
    channels = np.asarray(channels, dtype=np.float64)
    masks = np.asarray(masks, dtype=np.float64)
    c, h, w = channels.shape
    k, kh, kw = masks.shape
    out = np.empty((c, k, h, w), dtype=np.float64)
    # fftconvolve with the flipped kernel is correlation; chunk the channel
    # axis to bound the (C, K, padded) intermediate
    flipped = masks[:, ::-1, ::-1]
    chunk = max(1, _POOL_CHUNK_ELEMENTS // max(1, k * (h + kh) * (w + kw)))
    for i in range(0, c, chunk):
        block = signal.fftconvolve(
            channels[i : i + chunk, None], flipped[None, :], mode="full", axes=(-2, -1)
        )
        out[i : i + chunk] = block[..., kh // 2 : kh // 2 + h, kw // 2 : kw // 2 + w]
    return out


def pooled_label_counts(labels2d, n_bins, masks):
    """Per-bin pooled pixel counts: exact integers, shape (n_bins, K, H, W).

    The FFT result is rounded to the nearest integer, which is exact for 0/1
    indicator inputs at these mask sizes.
    """
    indicators = np.stack([(labels2d == b) for b in range(n_bins)]).astype(np.float64)
    return np.rint(pool_correlate(indicators, masks))


def pooled_pixel_counts(shape, masks):
    """In-image pooled pixel count per mask, shape (K, H, W), exact integers."""
    ones = np.ones((1,) + tuple(shape), dtype=np.float64)
    return np.rint(pool_correlate(ones, masks))[0]


def extract_feature_stack(cues, cfg):
    """All half-disk pairs of a cue stack, computed by accelerated pooling.

    Matches half_disk_histograms bitwise: both paths produce identical
    integer counts and divide by the same pooled-pixel count.
    """
    h, w = cues.shape
    n_o, n_s, m = cfg.n_orient, cfg.n_scales, cues.total_bins
    u = np.zeros((h, w, n_o, n_s, m), dtype=np.float64)
    v = np.zeros((h, w, n_o, n_s, m), dtype=np.float64)
    counts = np.zeros((h, w, n_o, n_s, 2), dtype=np.int64)
    offsets = cues.offsets
    for s in range(n_s):
        _, u_masks, v_masks = half_disk_masks(cfg.radii[s], n_o)
        masks = np.concatenate([u_masks, v_masks]).astype(np.float64)
        n_pool = pooled_pixel_counts((h, w), masks)  # (2*n_o, H, W)
        for c in range(cues.n_cues):
            cnt = pooled_label_counts(cues.labels[c], cues.bins[c], masks)
            sl = slice(offsets[c], offsets[c] + cues.bins[c])
            for o in range(n_o):
                nu = n_pool[o]
                nv = n_pool[n_o + o]
                cu = cnt[:, o]
                cv_ = cnt[:, n_o + o]
                with np.errstate(invalid="ignore", divide="ignore"):
                    hu = np.where(nu > 0, cu / nu, 0.0)
                    hv = np.where(nv > 0, cv_ / nv, 0.0)
                u[:, :, o, s, sl] = np.moveaxis(hu, 0, -1)
                v[:, :, o, s, sl] = np.moveaxis(hv, 0, -1)
        for o in range(n_o):
            counts[:, :, o, s, 0] = n_pool[o].astype(np.int64)
            counts[:, :, o, s, 1] = n_pool[n_o + o].astype(np.int64)
    return FeatureStack(u=u, v=v, counts=counts, config=cfg, bins=cues.bins)


def features_at(cues, pixels, orients, scale, cfg):
    """Histogram pairs for a batch of (pixel, orientation) picks at one scale.

    pixels: (P, 2) array of (x, y); orients: (P,) indices.  Returns
    (u, v, n_u, n_v) with histograms stacked as (P, M).  Loops per pixel via
    half_disk_histograms; intended for sparse training-sample extraction.
    """
    p = len(pixels)
    m = cues.total_bins
    u = np.empty((p, m))
    v = np.empty((p, m))
    n_u = np.empty(p, dtype=np.int64)
    n_v = np.empty(p, dtype=np.int64)
    for i in range(p):
        pair = half_disk_histograms(
            cues, int(pixels[i][0]), int(pixels[i][1]), int(orients[i]), scale, cfg
        )
        u[i], v[i], n_u[i], n_v[i] = pair.u, pair.v, pair.n_u, pair.n_v
    return u, v, n_u, n_v
