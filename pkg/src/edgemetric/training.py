"""Training: sample generation, log loss, analytic gradients, the SGD loop
with validation-based stopping, chi-square weight fitting, and model files.

The per-sample loss is the log loss on the combined (mean-over-scales)
distance d:

    loss = -[y * log(d) + (1 - y) * log(1 - d)],   d clamped away from {0, 1}.

`gradients` differentiates exactly that quantity with respect to every
parameter of every scale (the 1/S factor of the mean included), which is
what the finite-difference oracle checks.  The SGD loop instead trains each
scale's transform separately: every scale receives the gradient of its own
single-scale log loss, so the per-scale metrics are independent classifiers
that are only averaged at inference time.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.special import expit

from .errors import DatasetError, ModelFormatError, TrainingDivergedError
from .evaluation import (
    default_thresholds,
    default_tolerance,
    match_boundaries,
    pr_curve,
    summarize,
)
from .features import FeatureConfig, half_disk_histograms
from .ioutil import atomic_write_text
from .metric import (
    CLAMP_EPS,
    KERNEL_LINEAR,
    KERNEL_RBF,
    ChiSquareModel,
    MetricModel,
)
from .validation import as_rng

MODEL_FILE_VERSION = 1
METRIC_MODEL_FORMAT = "edgemetric-metric-model"
CHI2_MODEL_FORMAT = "edgemetric-chi2-model"


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    n_out: int = 16
    sigma: float = 0.2
    kernel: str = KERNEL_RBF
    init_range: float = 1.0
    patience: int = 5
    max_epochs: int = 40
    epoch_size: int = 20  # images per epoch
    min_delta: float = 1e-3  # "noticeable" validation-F improvement
    sample_threshold: float = 0.3  # detection threshold during sample generation
    balance_classes: bool = True
    max_samples_per_image: int = 256
    smoothing_radius: float = 1.0
    eval_thresholds: int = 33
    tolerance: float = None  # None -> BSDS-style default per image
    val_split: str = "val"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.n_out < 1:
            raise ValueError("n_out must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass
class TrainingSample:
    u: np.ndarray  # (S, M) half-disk histograms, one row per scale
    v: np.ndarray
    label: int  # 1 = boundary, 0 = non-boundary
    source: tuple = ("", (0, 0), 0)  # (image id, (x, y), orientation index)

    def __post_init__(self):
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        self.v = np.atleast_2d(np.asarray(self.v, dtype=np.float64))
        if self.u.shape != self.v.shape:
            raise ValueError("sample u/v shapes differ")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass
class Gradients:
    alpha: np.ndarray  # (S, N)
    beta: np.ndarray  # (S, N, M)


@dataclass
class TrainingLog:
    """Epoch rows plus the raw per-sample loss trace."""

    rows: list = field(default_factory=list)  # (epoch, mean_loss, val_f)
    sample_losses: list = field(default_factory=list)
    epoch_boundaries: list = field(default_factory=list)  # trace index at epoch end
    initial_val_f: float = 0.0
    best_epoch: int = 0
    best_val_f: float = 0.0

    def epoch_losses(self, epoch):
        lo = 0 if epoch == 1 else self.epoch_boundaries[epoch - 2]
        hi = self.epoch_boundaries[epoch - 1]
        return self.sample_losses[lo:hi]

    def to_csv(self, path):
        import io

        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["epoch", "mean_loss", "val_f"])
        writer.writerow([0, "", f"{self.initial_val_f:.6f}"])
        for epoch, mean_loss, val_f in self.rows:
            loss_txt = "" if mean_loss is None else f"{mean_loss:.6f}"
            writer.writerow([epoch, loss_txt, f"{val_f:.6f}"])
        atomic_write_text(path, buf.getvalue())


def init_model(cfg, feature_config=None):
    """Random model: every alpha/beta entry i.i.d. uniform on
    [-init_range, +init_range]; deterministic for a fixed seed."""
    fc = feature_config or FeatureConfig()
    rng = as_rng(cfg.seed)
    s, n, m = fc.n_scales, cfg.n_out, fc.total_bins
    r = cfg.init_range
    alpha = rng.uniform(-r, r, size=(s, n)) if r > 0 else np.zeros((s, n))
    beta = rng.uniform(-r, r, size=(s, n, m)) if r > 0 else np.zeros((s, n, m))
    return MetricModel(
        alpha=alpha, beta=beta, kernel=cfg.kernel, sigma=cfg.sigma, feature_config=fc
    )


def _forward(sample, model):
    """Transformed vectors and per-scale raw distances.

    Returns (tu, tv, d_scales) with tu/tv shaped (S, N).
    """
    pre_u = model.alpha + np.einsum("snm,sm->sn", model.beta, sample.u)
    pre_v = model.alpha + np.einsum("snm,sm->sn", model.beta, sample.v)
    tu = expit(pre_u)
    tv = expit(pre_v)
    diff = tu - tv
    if model.kernel == KERNEL_RBF:
        z = np.einsum("sn,sn->s", diff, diff)
        d = -np.expm1(-z / (2.0 * model.sigma**2))
    else:
        d = np.abs(diff).mean(axis=1)
    return tu, tv, d


def sample_distance(sample, model):
    """Unclamped combined distance (mean over scales)."""
    return float(_forward(sample, model)[2].mean())


def _log_loss(d, label):
    d = min(max(d, CLAMP_EPS), 1.0 - CLAMP_EPS)
    return -math.log(d) if label == 1 else -math.log1p(-d)


def sample_loss(sample, model):
    return _log_loss(sample_distance(sample, model), sample.label)


def loss(samples, model):
    """Summed log loss over a sample list."""
    if not samples:
        raise ValueError("loss requires at least one sample")
    return float(sum(sample_loss(s, model) for s in samples))


def _param_grads(sample, model, tu, tv, outer):
    """Gradients given `outer` = d(loss)/d(D_s) per scale, shape (S,)."""
    diff = tu - tv
    if model.kernel == KERNEL_RBF:
        z = np.einsum("sn,sn->s", diff, diff)
        dddz = np.exp(-z / (2.0 * model.sigma**2)) / (2.0 * model.sigma**2)
        c = (outer * dddz)[:, None] * 2.0 * diff
    else:
        c = outer[:, None] * np.sign(diff) / model.n_out
    su = tu * (1.0 - tu)
    sv = tv * (1.0 - tv)
    g_alpha = c * (su - sv)
    g_beta = (c * su)[:, :, None] * sample.u[:, None, :] - (c * sv)[:, :, None] * sample.v[
        :, None, :
    ]
    return Gradients(alpha=g_alpha, beta=g_beta)


def _loss_outer(d_raw, label):
    """d(loss)/d(distance); 0 when the clamp is active (the loss is flat)."""
    if d_raw <= CLAMP_EPS or d_raw >= 1.0 - CLAMP_EPS:
        return 0.0
    return (d_raw - label) / (d_raw * (1.0 - d_raw))


def gradients(sample, model):
    """Exact gradient of the per-sample combined-distance log loss with
    respect to every alpha and beta, all scales."""
    tu, tv, d = _forward(sample, model)
    s = model.n_scales
    outer = np.full(s, _loss_outer(float(d.mean()), sample.label) / s)
    return _param_grads(sample, model, tu, tv, outer)


def sgd_step(sample, model, learning_rate):
    """One per-scale-separate SGD update, in place.

    Each scale's parameters move along the gradient of that scale's own
    single-scale log loss.  Returns the pre-update combined loss.
    """
    tu, tv, d = _forward(sample, model)
    combined = _log_loss(float(d.mean()), sample.label)
    if learning_rate == 0:
        return combined
    outer = np.array([_loss_outer(float(ds), sample.label) for ds in d])
    g = _param_grads(sample, model, tu, tv, outer)
    model.alpha -= learning_rate * g.alpha
    model.beta -= learning_rate * g.beta
    return combined


def extract_sample(cues, x, y, orient, cfg, label, image_id=""):
    """TrainingSample with half-disk pairs at every scale of `cfg`."""
    scale_cfg = cfg.scale_config() if isinstance(cfg, FeatureConfig) else cfg
    u = np.empty((scale_cfg.n_scales, cues.total_bins))
    v = np.empty_like(u)
    for s in range(scale_cfg.n_scales):
        pair = half_disk_histograms(cues, x, y, orient, s, scale_cfg)
        u[s], v[s] = pair.u, pair.v
    return TrainingSample(u=u, v=v, label=label, source=(image_id, (x, y), orient))


def generate_samples(
    detections,
    annotations,
    cues,
    fc,
    tolerance=None,
    rng=None,
    threshold=0.3,
    balance=True,
    max_samples=256,
    image_id="",
):
    """Label thresholded detection pixels by annotation matching.

    Detection pixels (thinned map, strength > threshold) matched to any
    annotation within `tolerance` become positives, carrying the half-disk
    pair at their argmax orientation; unmatched ones become negatives,
    subsampled to the positive count when `balance` is set.  Returns [] when
    there are no detections or no matched pixels (callers fall back to
    annotation-seeded sampling).
    """
    if not annotations:
        raise DatasetError("sample generation requires at least one annotation")
    rng = as_rng(rng)
    if tolerance is None:
        tolerance = default_tolerance(detections.shape)
    cand = detections.strength > threshold
    if not cand.any():
        return []
    matched_any = np.zeros_like(cand)
    for gt in annotations:
        mc, _ = match_boundaries(cand, gt, tolerance)
        matched_any |= mc
    pos = np.argwhere(cand & matched_any)
    neg = np.argwhere(cand & ~matched_any)
    if len(pos) == 0:
        return []
    cap = max(2, max_samples // 2)
    if len(pos) > cap:
        pos = pos[rng.choice(len(pos), size=cap, replace=False)]
    n_neg = min(len(neg), len(pos)) if balance else min(len(neg), cap)
    if len(neg) > n_neg:
        neg = neg[rng.choice(len(neg), size=n_neg, replace=False)]
    samples = []
    for (yy, xx), label in [(p, 1) for p in pos] + [(n, 0) for n in neg]:
        orient = int(detections.orientation[yy, xx])
        samples.append(
            extract_sample(cues, int(xx), int(yy), orient, fc, label, image_id)
        )
    return samples


def bootstrap_samples(
    raw_map,
    annotations,
    cues,
    fc,
    tolerance=None,
    rng=None,
    max_samples=256,
    image_id="",
):
    """Cold-start sampling when detection yields nothing usable: positives
    at annotation pixels, negatives at random pixels farther than the match
    tolerance from every annotation."""
    rng = as_rng(rng)
    if tolerance is None:
        tolerance = default_tolerance(raw_map.shape)
    gt_union = np.zeros(raw_map.shape, dtype=bool)
    for gt in annotations:
        gt_union |= gt
    if not gt_union.any():
        return []
    dist = distance_transform_edt(~gt_union)
    pos = np.argwhere(gt_union)
    far = np.argwhere(dist > tolerance)
    cap = max(2, max_samples // 2)
    if len(pos) > cap:
        pos = pos[rng.choice(len(pos), size=cap, replace=False)]
    n_neg = min(len(far), len(pos))
    neg = far[rng.choice(len(far), size=n_neg, replace=False)] if n_neg else far[:0]
    samples = []
    for (yy, xx), label in [(p, 1) for p in pos] + [(n, 0) for n in neg]:
        orient = int(raw_map.orientation[yy, xx])
        samples.append(
            extract_sample(cues, int(xx), int(yy), orient, fc, label, image_id)
        )
    return samples


class _CueCache:
    """Per-item cue stacks and annotations, computed once per run."""

    def __init__(self, fc, seed):
        self.fc = fc
        self.seed = seed
        self._cues = {}
        self._anns = {}

    def cues(self, item):
        from .pipeline import compute_cues, texton_seed

        if item.id not in self._cues:
            img = item.load_image()
            self._cues[item.id] = compute_cues(
                img, self.fc, seed=texton_seed(item.id, self.seed)
            )
        return self._cues[item.id]

    def annotations(self, item):
        if item.id not in self._anns:
            self._anns[item.id] = item.load_annotations()
        return self._anns[item.id]


def _validation_f(items, model, cache, cfg):
    from .pipeline import detect_from_cues

    maps, anns = [], []
    for item in items:
        _, thinned = detect_from_cues(cache.cues(item), model, cfg.smoothing_radius)
        maps.append(thinned.strength)
        anns.append(cache.annotations(item))
    table = pr_curve(
        maps,
        anns,
        thresholds=default_thresholds(cfg.eval_thresholds),
        tolerance=cfg.tolerance,
    )
    return summarize(table).ods


def train(items, cfg, feature_config=None):
    """SGD training loop with validation-F stopping.

    Per iteration: pick a random training image, detect with the current
    parameters, generate matched samples, and apply per-sample updates.
    After each epoch (cfg.epoch_size images) the validation ODS-F is
    measured; training stops when it fails to improve by cfg.min_delta for
    cfg.patience consecutive epochs.  Returns (best model, log).
    """
    from .pipeline import detect_from_cues

    fc = feature_config or FeatureConfig()
    train_items = [it for it in items if it.split == "train"]
    val_items = [it for it in items if it.split == cfg.val_split]
    if not train_items:
        raise DatasetError("corpus has no training images")
    if not val_items:
        raise DatasetError(f"corpus has no {cfg.val_split!r} images")
    rng = as_rng(cfg.seed)
    model = init_model(cfg, fc)
    cache = _CueCache(fc, cfg.seed)
    log = TrainingLog()
    log.initial_val_f = _validation_f(val_items, model, cache, cfg)
    best_model = model.copy()
    best_f = log.initial_val_f
    log.best_val_f = best_f
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        epoch_losses = []
        for _ in range(cfg.epoch_size):
            item = train_items[int(rng.integers(len(train_items)))]
            cues = cache.cues(item)
            anns = cache.annotations(item)
            raw, thinned = detect_from_cues(cues, model, cfg.smoothing_radius)
            samples = generate_samples(
                thinned,
                anns,
                cues,
                fc,
                tolerance=cfg.tolerance,
                rng=rng,
                threshold=cfg.sample_threshold,
                balance=cfg.balance_classes,
                max_samples=cfg.max_samples_per_image,
                image_id=item.id,
            )
            if not samples:
                samples = bootstrap_samples(
                    raw,
                    anns,
                    cues,
                    fc,
                    tolerance=cfg.tolerance,
                    rng=rng,
                    max_samples=cfg.max_samples_per_image,
                    image_id=item.id,
                )
            order = rng.permutation(len(samples))
            for idx in order:
                step_loss = sgd_step(samples[idx], model, cfg.learning_rate)
                if not math.isfinite(step_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss at epoch {epoch} on image {item.id}"
                    )
                epoch_losses.append(step_loss)
        log.sample_losses.extend(epoch_losses)
        log.epoch_boundaries.append(len(log.sample_losses))
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else None
        val_f = _validation_f(val_items, model, cache, cfg)
        log.rows.append((epoch, mean_loss, val_f))
        if val_f > best_f:
            best_model = model.copy()
            log.best_epoch = epoch
            log.best_val_f = val_f
        if val_f >= best_f + cfg.min_delta:
            stale = 0
        else:
            stale += 1
        best_f = max(best_f, val_f)
        if stale >= cfg.patience:
            break
    return best_model, log


def fit_weights_from_distances(grids, labels):
    """Logistic regression of boundary labels on per-(cue, scale) chi-square
    distances; coefficients clamped at 0 and renormalized to sum 1."""
    grids = np.asarray(grids, dtype=np.float64)
    labels = np.asarray(labels)
    x = grids.reshape(len(grids), -1)
    if len(np.unique(labels)) < 2:
        raise DatasetError("weight fitting requires both classes present")
    from sklearn.linear_model import LogisticRegression

    lr = LogisticRegression(max_iter=1000)
    lr.fit(x, labels)
    w = np.clip(lr.coef_[0], 0.0, None)
    total = w.sum()
    if total <= 0:
        w = np.full_like(w, 1.0 / w.size)
    else:
        w = w / total
    return w.reshape(grids.shape[1:]) if grids.ndim == 3 else w


def collect_chi_square_samples(
    items, fc, seed=0, samples_per_image=64, tolerance=None
):
    """Per-pixel chi-square distance grids (n, cues, scales) with labels.

    Positives are sampled at annotation pixels, negatives farther than the
    matching tolerance from any annotation; the pooling orientation is the
    argmax of the equal-weight response at the pixel.
    """
    from .metric import chi_square
    from .pipeline import chi_square_responses, texton_seed

    rng = as_rng(seed)
    scale_cfg = fc.scale_config()
    cache = _CueCache(fc, seed)
    grids, labels = [], []
    for item in items:
        cues = cache.cues(item)
        anns = cache.annotations(item)
        tol = tolerance or default_tolerance(cues.shape)
        equal = ChiSquareModel.equal(cues.n_cues, fc.n_scales, fc)
        responses = chi_square_responses(cues, equal, scale_cfg)
        best_orient = responses.argmax(axis=0)
        gt_union = np.zeros(cues.shape, dtype=bool)
        for gt in anns:
            gt_union |= gt
        dist = distance_transform_edt(~gt_union)
        pos = np.argwhere(gt_union)
        far = np.argwhere(dist > tol)
        half = max(1, samples_per_image // 2)
        if len(pos) > half:
            pos = pos[rng.choice(len(pos), size=half, replace=False)]
        n_neg = min(len(far), len(pos))
        neg = far[rng.choice(len(far), size=n_neg, replace=False)] if n_neg else far[:0]
        offsets = cues.offsets
        for (yy, xx), label in [(p, 1) for p in pos] + [(n, 0) for n in neg]:
            orient = int(best_orient[yy, xx])
            grid = np.zeros((cues.n_cues, fc.n_scales))
            for s in range(fc.n_scales):
                pair = half_disk_histograms(cues, int(xx), int(yy), orient, s, scale_cfg)
                for c in range(cues.n_cues):
                    sl = slice(offsets[c], offsets[c] + cues.bins[c])
                    grid[c, s] = chi_square(pair.u[sl], pair.v[sl])
            grids.append(grid)
            labels.append(label)
    return np.asarray(grids), np.asarray(labels)


def fit_chi_square_weights(items, feature_config=None, seed=0, samples_per_image=64):
    """Fit fusion weights on a labelled corpus (train split)."""
    fc = feature_config or FeatureConfig()
    train_items = [it for it in items if it.split == "train"] or list(items)
    grids, labels = collect_chi_square_samples(
        train_items, fc, seed=seed, samples_per_image=samples_per_image
    )
    weights = fit_weights_from_distances(grids, labels)
    return ChiSquareModel(weights=weights, mode="learned", feature_config=fc)


def save_model(model, path):
    """Serialize a metric or chi-square model as versioned JSON; the write
    is atomic."""
    if isinstance(model, MetricModel):
        payload = {
            "format": METRIC_MODEL_FORMAT,
            "version": MODEL_FILE_VERSION,
            "kernel": model.kernel,
            "sigma": model.sigma,
            "n_out": model.n_out,
            "n_in": model.n_in,
            "feature_config": model.feature_config.to_dict(),
            "alpha": model.alpha.tolist(),
            "beta": model.beta.tolist(),
        }
    elif isinstance(model, ChiSquareModel):
        payload = {
            "format": CHI2_MODEL_FORMAT,
            "version": MODEL_FILE_VERSION,
            "mode": model.mode,
            "weights": model.weights.tolist(),
            "feature_config": (
                model.feature_config.to_dict() if model.feature_config else None
            ),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    atomic_write_text(path, json.dumps(payload, indent=1))


def load_model(path):
    """Load a model file, validating format, version, and dimensions."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path} is not valid JSON: {exc}") from exc
    fmt = payload.get("format")
    if payload.get("version") != MODEL_FILE_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported model file version {payload.get('version')!r}"
        )
    if fmt == METRIC_MODEL_FORMAT:
        try:
            fc = FeatureConfig.from_dict(payload["feature_config"])
            alpha = np.asarray(payload["alpha"], dtype=np.float64)
            beta = np.asarray(payload["beta"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"{path}: malformed metric model: {exc}") from exc
        if beta.ndim != 3 or beta.shape[2] != payload.get("n_in"):
            raise ModelFormatError(
                f"{path}: beta dimensions {beta.shape} do not match the declared "
                f"input size {payload.get('n_in')}"
            )
        if beta.shape[2] != fc.total_bins:
            raise ModelFormatError(
                f"{path}: input size {beta.shape[2]} does not match the bin "
                f"layout ({fc.total_bins} bins)"
            )
        if alpha.ndim != 2 or alpha.shape[1] != payload.get("n_out"):
            raise ModelFormatError(f"{path}: alpha dimensions are inconsistent")
        if alpha.shape[0] != len(fc.radii):
            raise ModelFormatError(
                f"{path}: {alpha.shape[0]} scales of parameters for "
                f"{len(fc.radii)} radii"
            )
        try:
            return MetricModel(
                alpha=alpha,
                beta=beta,
                kernel=payload["kernel"],
                sigma=payload["sigma"],
                feature_config=fc,
            )
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: {exc}") from exc
    if fmt == CHI2_MODEL_FORMAT:
        try:
            fc = (
                FeatureConfig.from_dict(payload["feature_config"])
                if payload.get("feature_config")
                else None
            )
            return ChiSquareModel(
                weights=np.asarray(payload["weights"], dtype=np.float64),
                mode=payload.get("mode", "learned"),
                feature_config=fc,
            )
        except (KeyError, ValueError) as exc:
            raise ModelFormatError(f"{path}: malformed weight model: {exc}") from exc
    raise ModelFormatError(f"{path}: unknown model format {fmt!r}")
