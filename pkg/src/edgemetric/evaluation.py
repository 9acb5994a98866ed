"""Precision-recall evaluation against multiple human annotations.

A detection pixel is correct iff it matches at least one annotation; a
ground-truth pixel annotated by several people can be recalled once per
annotation, so recall denominators sum over all annotations.  Matching is
one-to-one per (candidate, annotation) pair: greedy over candidate/gt pixel
pairs sorted by Euclidean distance, with deterministic row-major tie-breaks.
"""

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .ioutil import atomic_write_text


def default_tolerance(shape):
    """BSDS-style matching radius: 0.75% of the image diagonal, >= 1 px."""
    h, w = shape
    return max(1.0, 0.0075 * float(np.hypot(h, w)))


def match_boundaries(candidate, gt, tolerance):
    """Greedy one-to-one matching between candidate and gt boundary pixels.

    Pixel pairs within `tolerance` (Euclidean) are sorted by distance, ties
    broken by row-major candidate then gt index, and matched greedily; each
    pixel participates in at most one match.  Returns boolean masks
    (matched_candidate, matched_gt).
    """
    candidate = np.asarray(candidate, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if candidate.shape != gt.shape:
        raise ValueError(
            f"candidate {candidate.shape} and gt {gt.shape} shapes differ"
        )
    matched_c = np.zeros_like(candidate)
    matched_g = np.zeros_like(gt)
    c_pix = np.argwhere(candidate)  # row-major order
    g_pix = np.argwhere(gt)
    if len(c_pix) == 0 or len(g_pix) == 0:
        return matched_c, matched_g
    tree = cKDTree(g_pix)
    neighbor_lists = tree.query_ball_point(c_pix, r=tolerance + 1e-9)
    pairs = []
    for ci, neighbors in enumerate(neighbor_lists):
        for gi in neighbors:
            d = float(np.hypot(*(c_pix[ci] - g_pix[gi])))
            pairs.append((d, ci, gi))
    pairs.sort()
    c_used = np.zeros(len(c_pix), dtype=bool)
    g_used = np.zeros(len(g_pix), dtype=bool)
    for _, ci, gi in pairs:
        if not c_used[ci] and not g_used[gi]:
            c_used[ci] = True
            g_used[gi] = True
    matched_c[tuple(c_pix[c_used].T)] = True
    matched_g[tuple(g_pix[g_used].T)] = True
    return matched_c, matched_g


@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float
    matched_detections: int
    total_detections: int
    matched_gt: int
    total_gt: int

    @property
    def f_measure(self):
        return f_measure(self.precision, self.recall)


@dataclass
class PRTable:
    """Per-threshold match counts, per image and aggregated."""

    thresholds: np.ndarray  # (T,)
    # per-image counts, each (n_images, T)
    matched_detections: np.ndarray
    total_detections: np.ndarray
    matched_gt: np.ndarray
    total_gt: np.ndarray

    @property
    def n_images(self):
        return self.matched_detections.shape[0]

    def dataset_points(self):
        pts = []
        for t in range(len(self.thresholds)):
            md = int(self.matched_detections[:, t].sum())
            td = int(self.total_detections[:, t].sum())
            mg = int(self.matched_gt[:, t].sum())
            tg = int(self.total_gt[:, t].sum())
            pts.append(
                PRPoint(
                    threshold=float(self.thresholds[t]),
                    precision=md / td if td > 0 else 1.0,
                    recall=mg / tg if tg > 0 else 1.0,
                    matched_detections=md,
                    total_detections=td,
                    matched_gt=mg,
                    total_gt=tg,
                )
            )
        return pts

    def image_points(self, i):
        pts = []
        for t in range(len(self.thresholds)):
            md = int(self.matched_detections[i, t])
            td = int(self.total_detections[i, t])
            mg = int(self.matched_gt[i, t])
            tg = int(self.total_gt[i, t])
            pts.append(
                PRPoint(
                    threshold=float(self.thresholds[t]),
                    precision=md / td if td > 0 else 1.0,
                    recall=mg / tg if tg > 0 else 1.0,
                    matched_detections=md,
                    total_detections=td,
                    matched_gt=mg,
                    total_gt=tg,
                )
            )
        return pts


@dataclass
class EvalReport:
    ods: float
    ods_threshold: float
    ois: float
    ap: float
    dataset_points: list
    per_image_best: list = field(default_factory=list)  # (best_f, best_threshold)


def default_thresholds(n=33):
    """n evenly spaced thresholds strictly inside (0, 1)."""
    if n < 1:
        raise ValueError("at least one threshold is required")
    return np.linspace(0.0, 1.0, n + 2)[1:-1]


def f_measure(p, r):
    return 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0


def pr_curve(maps, annotations, thresholds=None, tolerance=None):
    """Precision-recall counts over a threshold sweep.

    maps: list of real-valued thinned strength maps (binarizing a thinned
    map keeps it thin).  annotations: per image, a list of >= 1 binary maps.
    Per threshold and image, the binarized map is matched against each
    annotation separately; a detection counts as correct if any annotation
    matched it, while recall counts every annotation's matched pixels.
    """
    if len(maps) != len(annotations):
        raise ValueError("need one annotation list per map")
    if any(len(a) == 0 for a in annotations):
        raise ValueError("every image needs at least one annotation")
    if thresholds is None:
        thresholds = default_thresholds()
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.size == 0:
        raise ValueError("threshold list must be nonempty")
    n, t_count = len(maps), len(thresholds)
    md = np.zeros((n, t_count), dtype=np.int64)
    td = np.zeros((n, t_count), dtype=np.int64)
    mg = np.zeros((n, t_count), dtype=np.int64)
    tg = np.zeros((n, t_count), dtype=np.int64)
    for i, (strength, gts) in enumerate(zip(maps, annotations)):
        strength = np.asarray(strength, dtype=np.float64)
        tol = default_tolerance(strength.shape) if tolerance is None else tolerance
        gts = [np.asarray(g, dtype=bool) for g in gts]
        for g in gts:
            if g.shape != strength.shape:
                raise ValueError("annotation dimensions differ from the map")
        total_gt = int(sum(int(g.sum()) for g in gts))
        for t in range(t_count):
            cand = strength > thresholds[t]
            n_cand = int(cand.sum())
            td[i, t] = n_cand
            tg[i, t] = total_gt
            if n_cand == 0:
                continue
            matched_any = np.zeros_like(cand)
            gt_hits = 0
            for g in gts:
                mc, mgt = match_boundaries(cand, g, tol)
                matched_any |= mc
                gt_hits += int(mgt.sum())
            md[i, t] = int(matched_any.sum())
            mg[i, t] = gt_hits
    return PRTable(
        thresholds=thresholds,
        matched_detections=md,
        total_detections=td,
        matched_gt=mg,
        total_gt=tg,
    )


def summarize(table):
    """ODS/OIS/AP from a PR table.

    ODS: best dataset F over thresholds (aggregated counts).  OIS: mean of
    per-image best F.  AP: trapezoidal area under the dataset (recall,
    precision) points sorted by recall.
    """
    pts = table.dataset_points()
    if not pts:
        raise ValueError("empty PR table")
    fs = [p.f_measure for p in pts]
    best = int(np.argmax(fs))
    ods = fs[best]
    ods_threshold = pts[best].threshold
    per_image_best = []
    for i in range(table.n_images):
        ipts = table.image_points(i)
        ifs = [p.f_measure for p in ipts]
        j = int(np.argmax(ifs))
        per_image_best.append((ifs[j], ipts[j].threshold))
    ois = float(np.mean([b for b, _ in per_image_best])) if per_image_best else 0.0
    recalls = np.array([p.recall for p in pts])
    precisions = np.array([p.precision for p in pts])
    order = np.argsort(recalls, kind="stable")
    ap = float(np.trapz(precisions[order], recalls[order]))
    ap = min(max(ap, 0.0), 1.0)
    return EvalReport(
        ods=ods,
        ods_threshold=ods_threshold,
        ois=ois,
        ap=ap,
        dataset_points=pts,
        per_image_best=per_image_best,
    )


def write_pr_csv(points, path):
    """CSV rows (threshold, precision, recall, f) for external plotting."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["threshold", "precision", "recall", "f"])
    for p in points:
        writer.writerow(
            [f"{p.threshold:.6g}", f"{p.precision:.6f}", f"{p.recall:.6f}", f"{p.f_measure:.6f}"]
        )
    atomic_write_text(path, buf.getvalue())


def format_summary(report):
    lines = [
        f"ODS F {report.ods:.4f} (threshold {report.ods_threshold:.4f})",
        f"OIS F {report.ois:.4f}",
        f"AP    {report.ap:.4f}",
    ]
    return "\n".join(lines)
