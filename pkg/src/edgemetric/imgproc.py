"""Image decoding, color conversion, filter-bank responses, textons, noise.

Coordinate convention used throughout the package: arrays are indexed
``[row, col]`` = ``[y, x]`` with y growing downward.  Angles are measured
from the +x axis toward +y (i.e. clockwise on screen).
"""

import json
import warnings
from dataclasses import dataclass, field

import cv2
import numpy as np

from .errors import ImageReadError, ModelFormatError, UnsupportedImageError
from .ioutil import atomic_write_text
from .validation import as_rng

COLOR_RGB = "rgb"
COLOR_LAB = "lab"
COLOR_GRAY = "gray"
COLOR_GENERIC = "generic"

# Fixed a*/b* range used when rescaling CIELAB to [0, 1]; covers the sRGB
# gamut (a* in [-86.18, 98.25], b* in [-107.86, 94.48] would be the exact
# hull; histograms only need a stable range, so outliers are clamped).
LAB_AB_MIN = -73.0
LAB_AB_MAX = 95.0

TEXTON_CODEBOOK_FORMAT = "edgemetric-texton-codebook"
TEXTON_CODEBOOK_VERSION = 1


@dataclass
class MultiChannelImage:
    """H x W raster with F float64 channels and a color-space tag."""

    data: np.ndarray  # (H, W, C)
    color_space: str = COLOR_GENERIC

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3:
            raise ValueError(f"image data must be (H, W, C), got {self.data.shape}")
        if self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        expected = {COLOR_RGB: 3, COLOR_LAB: 3, COLOR_GRAY: 1}.get(self.color_space)
        if expected is not None and self.data.shape[2] != expected:
            raise ValueError(
                f"{self.color_space} image must have {expected} channels, "
                f"got {self.data.shape[2]}"
            )
        if self.color_space in (COLOR_RGB, COLOR_GRAY):
            if self.data.min() < 0.0 or self.data.max() > 1.0:
                raise ValueError(f"{self.color_space} values must lie in [0, 1]")

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


def load_image(path):
    """Decode an 8- or 16-bit PNG (gray or RGB) into values scaled to [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageReadError(f"cannot read image file: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise UnsupportedImageError(f"{path}: unsupported sample depth {raw.dtype}")
    if raw.ndim == 2:
        return MultiChannelImage(raw.astype(np.float64) / scale, COLOR_GRAY)
    if raw.ndim == 3 and raw.shape[2] == 3:
        rgb = raw[:, :, ::-1].astype(np.float64) / scale  # cv2 decodes BGR
        return MultiChannelImage(rgb, COLOR_RGB)
    raise UnsupportedImageError(
        f"{path}: unsupported channel layout (shape {raw.shape}); "
        "expected single-channel gray or 3-channel RGB"
    )


def srgb_to_lab(rgb):
    """sRGB (D65) to CIELAB, unscaled: L in [0, 100], a/b in native units.

    Accepts any (..., 3) array with values in [0, 1].
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    linear = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    m = np.array(
        [
            [0.4124564, 0.3575761, 0.1804375],
            [0.2126729, 0.7151522, 0.0721750],
            [0.0193339, 0.1191920, 0.9503041],
        ]
    )
    xyz = linear @ m.T
    xyz = xyz / np.array([0.95047, 1.0, 1.08883])
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16.0) / 116.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def rgb_to_lab(img):
    """Convert an RGB image to Lab with every channel rescaled to [0, 1].

    L is divided by 100; a and b are clamped to [LAB_AB_MIN, LAB_AB_MAX]
    and mapped affinely onto [0, 1].
    """
    if img.color_space != COLOR_RGB:
        raise UnsupportedImageError(
            f"rgb_to_lab requires an rgb image, got {img.color_space!r}"
        )
    lab = srgb_to_lab(img.data)
    out = np.empty_like(lab)
    out[..., 0] = np.clip(lab[..., 0] / 100.0, 0.0, 1.0)
    ab = np.clip(lab[..., 1:], LAB_AB_MIN, LAB_AB_MAX)
    out[..., 1:] = (ab - LAB_AB_MIN) / (LAB_AB_MAX - LAB_AB_MIN)
    return MultiChannelImage(out, COLOR_LAB)


def rgb_to_gray(img):
    """Rec. 709 luminance of an RGB image (gray images pass through)."""
    if img.color_space == COLOR_GRAY:
        return img
    if img.color_space != COLOR_RGB:
        raise UnsupportedImageError(
            f"rgb_to_gray requires an rgb or gray image, got {img.color_space!r}"
        )
    lum = img.data @ np.array([0.2126, 0.7152, 0.0722])
    return MultiChannelImage(np.clip(lum, 0.0, 1.0), COLOR_GRAY)


@dataclass(frozen=True)
class KernelSpec:
    orientation: float  # radians; 0.0 for center-surround
    scale: float  # pixels
    kind: str  # 'even' | 'odd' | 'center-surround'


@dataclass
class FilterBank:
    kernels: list = field(default_factory=list)  # list of 2-D float64 arrays
    specs: list = field(default_factory=list)  # parallel list of KernelSpec

    def __len__(self):
        return len(self.kernels)


def _normalize_kernel(k):
    # zero mean, then unit L1 norm
    k = k - k.mean()
    norm = np.abs(k).sum()
    if norm > 0:
        k = k / norm
    return k


def _oriented_kernel(theta, sigma, kind, elongation=3.0):
    """Gaussian-derivative kernel differentiating across the orientation.

    theta is the direction of the structure the filter responds to; the
    derivative is taken along its normal.  The envelope is elongated by
    `elongation` along the structure.
    """
    sigma_across = sigma
    sigma_along = elongation * sigma
    half = int(np.ceil(3.0 * sigma_along))
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    along = xs * np.cos(theta) + ys * np.sin(theta)
    across = -xs * np.sin(theta) + ys * np.cos(theta)
    env = np.exp(-0.5 * (along / sigma_along) ** 2 - 0.5 * (across / sigma_across) ** 2)
    if kind == "even":
        k = (across**2 / sigma_across**4 - 1.0 / sigma_across**2) * env
    elif kind == "odd":
        k = -(across / sigma_across**2) * env
    else:
        raise ValueError(f"unknown oriented kernel kind {kind!r}")
    return _normalize_kernel(k)


def _center_surround_kernel(sigma):
    half = int(np.ceil(3.0 * sigma))
    ys, xs = np.mgrid[-half : half + 1, -half : half + 1].astype(np.float64)
    r2 = xs**2 + ys**2
    k = (r2 / sigma**4 - 2.0 / sigma**2) * np.exp(-0.5 * r2 / sigma**2)
    return _normalize_kernel(k)


def make_filter_bank(n_orient, scales):
    """Even/odd oriented derivative pairs per (orientation, scale) plus one
    center-surround kernel per scale.  All kernels zero-mean with unit L1 norm.
    """
    if n_orient < 1:
        raise ValueError("n_orient must be >= 1")
    scales = tuple(float(s) for s in scales)
    if not scales:
        raise ValueError("scales must be nonempty")
    if any(s <= 0 for s in scales):
        raise ValueError("scales must be positive")
    bank = FilterBank()
    for sigma in scales:
        for o in range(n_orient):
            theta = o * np.pi / n_orient
            for kind in ("even", "odd"):
                bank.kernels.append(_oriented_kernel(theta, sigma, kind))
                bank.specs.append(KernelSpec(theta, sigma, kind))
        bank.kernels.append(_center_surround_kernel(sigma))
        bank.specs.append(KernelSpec(0.0, sigma, "center-surround"))
    return bank


def filter_responses(gray, bank):
    """Stack of filter responses, shape (H, W, len(bank))."""
    data = gray.data[:, :, 0] if gray.data.ndim == 3 else gray.data
    data = np.ascontiguousarray(data, dtype=np.float64)
    out = np.empty(data.shape + (len(bank),), dtype=np.float64)
    for i, k in enumerate(bank.kernels):
        out[:, :, i] = cv2.filter2D(data, -1, k, borderType=cv2.BORDER_REFLECT_101)
    return out


@dataclass
class TextonMap:
    labels: np.ndarray  # (H, W) int32 in [0, K)
    k: int
    codebook: np.ndarray  # (K, F) cluster centers in filter-response space

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.codebook = np.asarray(self.codebook, dtype=np.float64)
        if self.labels.min(initial=0) < 0 or self.labels.max(initial=0) >= self.k:
            raise ValueError("texton labels out of range")
        if not np.all(np.isfinite(self.codebook)):
            raise ValueError("texton codebook contains non-finite centroids")


def compute_textons(gray, bank, k=32, seed=0, max_samples=50000):
    """Cluster per-pixel filter responses into k textons.

    k-means (k-means++ seeding, <= 50 iterations) runs on a random subsample
    of at most `max_samples` pixels; every pixel is then assigned to its
    nearest centroid.  Deterministic for a fixed seed.
    """
    if gray.color_space != COLOR_GRAY:
        raise UnsupportedImageError("compute_textons requires a gray image")
    if k < 2:
        raise ValueError("texton count must be >= 2")
    h, w = gray.height, gray.width
    if k > h * w:
        raise ValueError(f"texton count {k} exceeds pixel count {h * w}")
    responses = filter_responses(gray, bank).reshape(h * w, -1)
    rng = as_rng(seed)
    if h * w > max_samples:
        idx = rng.choice(h * w, size=max_samples, replace=False)
        sample = responses[idx]
    else:
        sample = responses
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    with warnings.catch_warnings():
        # degenerate images (constant => identical response vectors) are valid
        warnings.simplefilter("ignore", ConvergenceWarning)
        km = KMeans(
            n_clusters=k,
            init="k-means++",
            n_init=1,
            max_iter=50,
            random_state=int(rng.integers(0, 2**31 - 1)),
        ).fit(sample)
        labels = km.predict(responses).astype(np.int32).reshape(h, w)
    return TextonMap(labels=labels, k=k, codebook=km.cluster_centers_)


def save_texton_codebook(textons, bank_meta, path):
    """Persist a texton codebook as versioned JSON (same container style as
    metric model files)."""
    payload = {
        "format": TEXTON_CODEBOOK_FORMAT,
        "version": TEXTON_CODEBOOK_VERSION,
        "k": int(textons.k),
        "bank": dict(bank_meta),
        "codebook": textons.codebook.tolist(),
    }
    atomic_write_text(path, json.dumps(payload, indent=1))


def load_texton_codebook(path):
    """Load a codebook saved by save_texton_codebook; returns (codebook, bank_meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != TEXTON_CODEBOOK_FORMAT:
        raise ModelFormatError(f"{path}: not a texton codebook file")
    if payload.get("version") != TEXTON_CODEBOOK_VERSION:
        raise ModelFormatError(f"{path}: unsupported codebook version")
    codebook = np.asarray(payload["codebook"], dtype=np.float64)
    if codebook.ndim != 2 or codebook.shape[0] != payload["k"]:
        raise ModelFormatError(f"{path}: codebook shape inconsistent with k")
    return codebook, payload.get("bank", {})


def assign_textons(gray, bank, codebook):
    """Label pixels by nearest centroid of an existing codebook."""
    h, w = gray.height, gray.width
    responses = filter_responses(gray, bank).reshape(h * w, -1)
    d2 = (
        np.einsum("ij,ij->i", responses, responses)[:, None]
        - 2.0 * responses @ codebook.T
        + np.einsum("ij,ij->i", codebook, codebook)[None, :]
    )
    labels = np.argmin(d2, axis=1).astype(np.int32).reshape(h, w)
    return TextonMap(labels=labels, k=codebook.shape[0], codebook=codebook)


def add_gaussian_noise(img, variance, seed=0):
    """Add i.i.d. zero-mean Gaussian noise per channel value, clamped to [0, 1]."""
    if variance < 0:
        raise ValueError("noise variance must be >= 0")
    if variance == 0:
        return MultiChannelImage(img.data.copy(), img.color_space)
    rng = as_rng(seed)
    noisy = img.data + rng.normal(0.0, np.sqrt(variance), size=img.data.shape)
    return MultiChannelImage(np.clip(noisy, 0.0, 1.0), img.color_space)
