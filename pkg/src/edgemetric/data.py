"""Dataset ingestion and synthetic corpus generation.

Expected directory layout (images and converted annotations):

    root/images/{train,val,test}/<id>.png
    root/groundTruth/{train,val,test}/<id>_<k>.png   (k = 0, 1, ...)

Annotation rasters are binary: any nonzero pixel is a boundary pixel.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import CorpusSpecError, DatasetError
from .imgproc import load_image
from .validation import as_rng

SPLITS = ("train", "val", "test")

VALID_KINDS = (
    "brightness-step",
    "color-step",
    "texture-transition",
    "multi-region",
)

# luminance weights used to build equal-brightness color pairs
_LUM = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class DatasetItem:
    id: str
    split: str
    image_path: Path
    annotation_paths: list

    def load_image(self):
        return load_image(self.image_path)

    def load_annotations(self):
        """Decode annotations as boolean maps (any nonzero = boundary)."""
        out = []
        for p in self.annotation_paths:
            raw = cv2.imread(str(p), cv2.IMREAD_UNCHANGED)
            if raw is None:
                raise DatasetError(f"cannot read annotation file: {p}")
            if raw.ndim != 2:
                raise DatasetError(f"annotation must be single-channel: {p}")
            out.append(raw > 0)
        return out


def _png_size(path):
    with Image.open(path) as im:
        return im.size  # (width, height), header only


def load_dataset(root):
    """Scan the directory layout into DatasetItems, grouped by id.

    Validates that every image has at least one annotation and that all
    annotation rasters match the image dimensions (header check only).
    """
    root = Path(root)
    items = []
    for split in SPLITS:
        img_dir = root / "images" / split
        gt_dir = root / "groundTruth" / split
        if not img_dir.is_dir():
            continue
        for img_path in sorted(img_dir.glob("*.png")):
            iid = img_path.stem
            anns = []
            if gt_dir.is_dir():
                for p in gt_dir.glob(f"{iid}_*.png"):
                    suffix = p.stem[len(iid) + 1 :]
                    if suffix.isdigit():
                        anns.append((int(suffix), p))
            if not anns:
                raise DatasetError(f"image {img_path} has no annotations in {gt_dir}")
            anns.sort()
            try:
                img_size = _png_size(img_path)
            except Exception as exc:
                raise DatasetError(f"cannot decode image {img_path}: {exc}") from exc
            for _, p in anns:
                if _png_size(p) != img_size:
                    raise DatasetError(
                        f"annotation {p} has dimensions {_png_size(p)}, "
                        f"expected {img_size} to match {img_path}"
                    )
            items.append(
                DatasetItem(
                    id=iid,
                    split=split,
                    image_path=img_path,
                    annotation_paths=[p for _, p in anns],
                )
            )
    return items


@dataclass
class CorpusSpec:
    """Declarative description of a synthetic corpus."""

    size: int = 96
    counts: dict = field(
        default_factory=lambda: {"train": 50, "val": 20, "test": 20}
    )
    kinds: tuple = VALID_KINDS
    contrast: float = 0.5
    noise: float = 0.02  # std-dev of fill noise baked into the images
    seed: int = 7

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        for k in self.kinds:
            if k not in VALID_KINDS:
                raise CorpusSpecError(
                    f"unknown image kind {k!r}; valid kinds: {', '.join(VALID_KINDS)}"
                )
        if not self.kinds:
            raise CorpusSpecError("at least one image kind is required")
        if self.size < 32:
            raise CorpusSpecError("corpus images must be at least 32x32")
        if not (0 < self.contrast <= 1):
            raise CorpusSpecError("contrast must lie in (0, 1]")
        if self.noise < 0:
            raise CorpusSpecError("noise std-dev must be >= 0")
        for split in self.counts:
            if split not in SPLITS:
                raise CorpusSpecError(f"unknown split {split!r}")


def parse_corpus_spec(payload):
    """Build a CorpusSpec from a JSON-style dict, rejecting unknown keys."""
    known = {"size", "counts", "kinds", "contrast", "noise", "seed"}
    extra = set(payload) - known
    if extra:
        raise CorpusSpecError(f"unknown corpus spec keys: {sorted(extra)}")
    return CorpusSpec(**payload)


def _random_line(rng, size):
    """Random oriented line through the central third of the image.

    Returns (point, normal) with the normal unit-length.
    """
    phi = rng.uniform(0.0, np.pi)
    normal = np.array([np.cos(phi), np.sin(phi)])
    center = np.array([(size - 1) / 2.0, (size - 1) / 2.0])
    point = center + rng.uniform(-size / 6.0, size / 6.0) * normal
    return point, normal


def _side_mask(size, point, normal):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return (xs - point[0]) * normal[0] + (ys - point[1]) * normal[1] >= 0.0


def _rasterize_line(size, point, normal):
    """1-px-wide raster of the line (p - point) . normal = 0."""
    gt = np.zeros((size, size), dtype=bool)
    nx, ny = normal
    if abs(nx) >= abs(ny):  # line runs mostly vertically; one pixel per row
        for y in range(size):
            x = point[0] - (y - point[1]) * ny / nx
            xi = int(round(x))
            if 0 <= xi < size:
                gt[y, xi] = True
    else:
        for x in range(size):
            y = point[1] - (x - point[0]) * nx / ny
            yi = int(round(y))
            if 0 <= yi < size:
                gt[yi, x] = True
    return gt


def _grating(size, amplitude, horizontal, period=4, phase=0):
    """Two-level square-wave stripes with mean 0.5."""
    coord = np.arange(size) + phase
    wave = np.where(((coord // (period // 2)) % 2) == 0, amplitude, -amplitude)
    if horizontal:  # stripes vary along y
        field2d = np.repeat(wave[:, None], size, axis=1)
    else:
        field2d = np.repeat(wave[None, :], size, axis=0)
    return 0.5 + field2d


def _equal_luminance_pair(rng, contrast):
    """Two RGB fills with matched Rec. 709 luminance but opposite red/green
    balance, so the boundary lives in the chroma channels only."""
    target = rng.uniform(0.42, 0.5)
    delta = 0.2 + 0.3 * contrast
    r1, r2 = 0.5 + delta / 2.0, 0.5 - delta / 2.0
    b = rng.uniform(0.35, 0.6)
    g1 = (target - _LUM[0] * r1 - _LUM[2] * b) / _LUM[1]
    g2 = (target - _LUM[0] * r2 - _LUM[2] * b) / _LUM[1]
    c1 = np.clip([r1, g1, b], 0.0, 1.0)
    c2 = np.clip([r2, g2, b], 0.0, 1.0)
    return c1, c2


def synth_image(kind, size, contrast, noise, rng, line_point=None, line_normal=None):
    """One synthetic image: (rgb (H, W, 3) in [0, 1], gt bool map, meta dict)."""
    if kind not in VALID_KINDS:
        raise CorpusSpecError(f"unknown image kind {kind!r}")
    if line_point is None or line_normal is None:
        point, normal = _random_line(rng, size)
    else:
        point = np.asarray(line_point, dtype=np.float64)
        normal = np.asarray(line_normal, dtype=np.float64)
        normal = normal / np.hypot(*normal)
    side = _side_mask(size, point, normal)
    gt = _rasterize_line(size, point, normal)
    rgb = np.empty((size, size, 3))
    meta = {"kind": kind, "point": point, "normal": normal}

    if kind == "brightness-step":
        lo = 0.5 - contrast / 2.0 + rng.uniform(-0.05, 0.05)
        hi = lo + contrast
        gray = np.where(side, hi, lo)
        rgb[:] = gray[:, :, None]
    elif kind == "color-step":
        c1, c2 = _equal_luminance_pair(rng, contrast)
        rgb[:] = np.where(side[:, :, None], c1, c2)
    elif kind == "texture-transition":
        amp = min(max(contrast / 2.0, 0.1), 0.3)
        a = _grating(size, amp, horizontal=False, phase=int(rng.integers(0, 4)))
        b = _grating(size, amp, horizontal=True, phase=int(rng.integers(0, 4)))
        gray = np.where(side, a, b)
        rgb[:] = gray[:, :, None]
        meta["amplitude"] = amp
    else:  # multi-region: two lines, mixed fills
        point2, normal2 = _random_line(rng, size)
        # keep the two borders from being near-parallel
        while abs(np.dot(normal, normal2)) > 0.9:
            point2, normal2 = _random_line(rng, size)
        side2 = _side_mask(size, point2, normal2)
        gt = gt | _rasterize_line(size, point2, normal2)
        cells = side.astype(int) * 2 + side2.astype(int)
        levels = rng.permutation([0.15, 0.4, 0.65, 0.9]) + rng.uniform(
            -0.04, 0.04, size=4
        )
        gray = np.clip(levels, 0.0, 1.0)[cells]
        rgb[:] = gray[:, :, None]
        if rng.random() < 0.5:  # one cell gets a grating instead of a flat fill
            cell = int(rng.integers(0, 4))
            amp = min(max(contrast / 2.0, 0.1), 0.3)
            tex = _grating(size, amp, horizontal=bool(rng.integers(0, 2)))
            mask = cells == cell
            rgb[mask] = tex[mask, None]
        meta["point2"] = point2
        meta["normal2"] = normal2

    if noise > 0:
        rgb = rgb + rng.normal(0.0, noise, size=rgb.shape)
    return np.clip(rgb, 0.0, 1.0), gt, meta


def _atomic_imwrite(path, array):
    path = str(path)
    fd, tmp = tempfile.mkstemp(suffix=".png", dir=os.path.dirname(path) or ".")
    os.close(fd)
    try:
        if not cv2.imwrite(tmp, array):
            raise DatasetError(f"failed to write {path}")
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def synth_generate(spec, out_dir):
    """Materialize a synthetic dataset directory; returns the DatasetItems.

    Deterministic for a fixed spec (including its seed).
    """
    out_dir = Path(out_dir)
    rng = as_rng(spec.seed)
    for split, count in spec.counts.items():
        img_dir = out_dir / "images" / split
        gt_dir = out_dir / "groundTruth" / split
        img_dir.mkdir(parents=True, exist_ok=True)
        gt_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            kind = spec.kinds[int(rng.integers(0, len(spec.kinds)))]
            rgb, gt, _ = synth_image(kind, spec.size, spec.contrast, spec.noise, rng)
            iid = f"{split}_{i:04d}"
            encoded = np.rint(rgb[:, :, ::-1] * 255.0).astype(np.uint8)  # BGR for cv2
            _atomic_imwrite(img_dir / f"{iid}.png", encoded)
            _atomic_imwrite(gt_dir / f"{iid}_0.png", gt.astype(np.uint8) * 255)
    return load_dataset(out_dir)


def default_corpus_spec(seed=7):
    return CorpusSpec(seed=seed)


def save_corpus_spec(spec, path):
    payload = {
        "size": spec.size,
        "counts": dict(spec.counts),
        "kinds": list(spec.kinds),
        "contrast": spec.contrast,
        "noise": spec.noise,
        "seed": spec.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def load_corpus_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_corpus_spec(json.load(fh))
