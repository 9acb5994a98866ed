"""Boundary-map post-processing: orientation fusion, smoothing, oriented NMS.

Orientation semantics: a pixel's orientation index o encodes the direction
theta = o * pi / n_orient ALONG the boundary; non-maximum suppression
compares against the two neighbors sampled one pixel away along the normal
(-sin theta, cos theta), with bilinear interpolation and zero outside the
image.  Ties are kept, so plateaus survive.
"""

import os
import tempfile
from dataclasses import dataclass

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ImageReadError
from .validation import check_strength_map


@dataclass
class BoundaryMap:
    strength: np.ndarray  # (H, W) float64 in [0, 1]
    orientation: np.ndarray  # (H, W) int32 argmax orientation index
    n_orient: int
    thinned: bool = False

    def __post_init__(self):
        self.strength = check_strength_map(self.strength)
        self.orientation = np.asarray(self.orientation, dtype=np.int32)
        if self.orientation.shape != self.strength.shape:
            raise ValueError("orientation map shape differs from strength map")

    @property
    def shape(self):
        return self.strength.shape


def fuse_orientations(responses):
    """Max over orientations; argmax index recorded (ties -> lowest index)."""
    responses = np.asarray(responses, dtype=np.float64)
    if responses.ndim != 3:
        raise ValueError("responses must be (n_orient, H, W)")
    strength = np.clip(responses.max(axis=0), 0.0, 1.0)
    orientation = responses.argmax(axis=0).astype(np.int32)
    return BoundaryMap(
        strength=strength, orientation=orientation, n_orient=responses.shape[0]
    )


def smooth(bmap, radius=1.0):
    """Isotropic Gaussian smoothing of strengths (sigma = radius / 2);
    the orientation field is untouched."""
    if radius <= 0:
        return BoundaryMap(
            strength=bmap.strength.copy(),
            orientation=bmap.orientation.copy(),
            n_orient=bmap.n_orient,
            thinned=bmap.thinned,
        )
    sm = gaussian_filter(bmap.strength, sigma=radius / 2.0, mode="nearest")
    return BoundaryMap(
        strength=np.clip(sm, 0.0, 1.0),
        orientation=bmap.orientation.copy(),
        n_orient=bmap.n_orient,
        thinned=False,
    )


def _normal_neighbor_samples(strength, orientation, n_orient):
    """Bilinear samples one pixel away along +/- the orientation normal.

    Returns (n_plus, n_minus), each (H, W); samples outside the image are 0.
    """
    h, w = strength.shape
    padded = np.zeros((h + 4, w + 4))
    padded[2 : 2 + h, 2 : 2 + w] = strength
    ys, xs = np.mgrid[0:h, 0:w]
    n_plus = np.empty((n_orient, h, w))
    n_minus = np.empty((n_orient, h, w))
    for o in range(n_orient):
        theta = o * np.pi / n_orient
        nx, ny = -np.sin(theta), np.cos(theta)
        for sign, out in ((1.0, n_plus), (-1.0, n_minus)):
            fx = xs + sign * nx
            fy = ys + sign * ny
            x0 = np.floor(fx).astype(np.int64)
            y0 = np.floor(fy).astype(np.int64)
            wx = fx - x0
            wy = fy - y0
            p00 = padded[y0 + 2, x0 + 2]
            p01 = padded[y0 + 2, x0 + 3]
            p10 = padded[y0 + 3, x0 + 2]
            p11 = padded[y0 + 3, x0 + 3]
            out[o] = (
                (1 - wy) * ((1 - wx) * p00 + wx * p01)
                + wy * ((1 - wx) * p10 + wx * p11)
            )
    idx = orientation[None].astype(np.int64)
    plus = np.take_along_axis(n_plus, idx, axis=0)[0]
    minus = np.take_along_axis(n_minus, idx, axis=0)[0]
    return plus, minus


def oriented_nms(bmap):
    """Keep a pixel only if its strength is >= both interpolated neighbors
    along the orientation normal; suppressed pixels become 0."""
    plus, minus = _normal_neighbor_samples(
        bmap.strength, bmap.orientation, bmap.n_orient
    )
    keep = (bmap.strength >= plus) & (bmap.strength >= minus)
    return BoundaryMap(
        strength=np.where(keep, bmap.strength, 0.0),
        orientation=bmap.orientation.copy(),
        n_orient=bmap.n_orient,
        thinned=True,
    )


def thinning_violations(bmap):
    """Number of retained pixels with a strictly greater interpolated
    neighbor along their orientation normal (0 for a valid thinned map)."""
    plus, minus = _normal_neighbor_samples(
        bmap.strength, bmap.orientation, bmap.n_orient
    )
    retained = bmap.strength > 0
    bad = retained & ((plus > bmap.strength) | (minus > bmap.strength))
    return int(bad.sum())


def save_boundary_png(strength, path):
    """Write a strength map as 16-bit grayscale PNG (value = strength * 65535,
    rounded); the write is atomic (temp file + rename)."""
    strength = check_strength_map(strength)
    encoded = np.rint(strength * 65535.0).astype(np.uint16)
    path = str(path)
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=os.path.dirname(path) or ".")
    os.close(fd)
    try:
        if not cv2.imwrite(tmp, encoded):
            raise ImageReadError(f"failed to encode boundary map {path}")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def load_boundary_png(path):
    """Read a strength map written by save_boundary_png."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"cannot read boundary map: {path}")
    if raw.ndim != 2:
        raise ImageReadError(f"{path}: boundary maps must be single-channel")
    if raw.dtype == np.uint16:
        return raw.astype(np.float64) / 65535.0
    if raw.dtype == np.uint8:
        return raw.astype(np.float64) / 255.0
    raise ImageReadError(f"{path}: unsupported boundary map depth {raw.dtype}")
