"""Command-line entry point: detect, train, eval, bench, synth.

Exit codes: 0 success, 1 runtime error, 2 usage error.  Every command is
deterministic given --seed (training additionally requires --threads=1,
although the current backends are schedule-independent anyway).
"""

import argparse
import os
import statistics
import sys
import time
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .data import (
    VALID_KINDS,
    CorpusSpec,
    load_corpus_spec,
    load_dataset,
    save_corpus_spec,
    synth_generate,
)
from .errors import CorpusSpecError, EdgeMetricError
from .evaluation import (
    default_thresholds,
    format_summary,
    pr_curve,
    summarize,
    write_pr_csv,
)
from .features import FeatureConfig
from .imgproc import add_gaussian_noise, load_image
from .ioutil import atomic_write_text
from .metric import ChiSquareModel, MetricModel
from .pipeline import compute_cues, detect_from_cues, learned_metric_responses, texton_seed
from .pipeline import chi_square_responses
from .postproc import fuse_orientations, oriented_nms, save_boundary_png, smooth
from .postproc import load_boundary_png
from .training import TrainConfig, init_model, load_model, save_model, train
from .training import fit_chi_square_weights

MODES = ("chi2-equal", "chi2-learned", "lbm-rbf", "lbm-linear")


class UsageError(Exception):
    """CLI-level misuse; mapped to exit code 2."""


def _threads_default():
    env = os.environ.get("EDGEMETRIC_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _apply_threads(n):
    cv2.setNumThreads(int(n))


def _parse_scale(text, n_scales=len(FeatureConfig().radii)):
    """--scale multi | single | single:IDX -> None or scale index."""
    if text == "multi":
        return None
    if text == "single":
        return 1  # mid-fine radius by default
    if text.startswith("single:"):
        idx = int(text.split(":", 1)[1])
        if not 0 <= idx < n_scales:
            raise UsageError(f"--scale single:{idx} out of range [0, {n_scales})")
        return idx
    raise UsageError(f"--scale must be 'multi', 'single' or 'single:IDX', got {text!r}")


def _feature_config(scale):
    fc = FeatureConfig()
    if scale is None:
        return fc
    return FeatureConfig(
        lab_bins=fc.lab_bins,
        texton_count=fc.texton_count,
        radii=(fc.radii[scale],),
        n_orient=fc.n_orient,
    )


def _load_mode_model(args, fc):
    """Resolve (model, fc) for a detect/eval-style command."""
    mode = args.mode
    if mode == "chi2-equal":
        return ChiSquareModel.equal(4, fc.n_scales, fc)
    if args.model is None:
        raise UsageError(f"--mode {mode} requires --model pointing to a model file")
    model = load_model(args.model)
    if mode == "chi2-learned":
        if not isinstance(model, ChiSquareModel):
            raise UsageError(f"--model {args.model} is not a chi-square weight file")
        scale = _parse_scale(getattr(args, "scale", "multi"))
        if scale is not None and model.weights.shape[1] > 1:
            w = model.weights[:, scale : scale + 1]
            w = w / w.sum() if w.sum() > 0 else np.full_like(w, 1.0 / w.size)
            model = ChiSquareModel(weights=w, mode="learned", feature_config=fc)
    else:
        if not isinstance(model, MetricModel):
            raise UsageError(f"--model {args.model} is not a metric model file")
        want = "rbf" if mode == "lbm-rbf" else "linear"
        if model.kernel != want:
            raise UsageError(
                f"model kernel {model.kernel!r} does not match --mode {mode}"
            )
        if getattr(args, "scale", "multi") != "multi" and model.n_scales > 1:
            model = model.scale_view(_parse_scale(args.scale))
    return model


def cmd_detect(args):
    scale = _parse_scale(args.scale)
    fc = _feature_config(scale)
    model = _load_mode_model(args, fc)
    img = load_image(args.image)
    if args.noise_var > 0:
        img = add_gaussian_noise(img, args.noise_var, seed=args.seed)
    image_id = Path(args.image).stem
    fc_used = model.feature_config or fc
    cues = compute_cues(img, fc_used, seed=texton_seed(image_id, args.seed))
    raw, thinned = detect_from_cues(cues, model, args.smoothing)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_path = out / f"{image_id}_raw.png"
    thin_path = out / f"{image_id}_thinned.png"
    save_boundary_png(raw.strength, raw_path)
    save_boundary_png(thinned.strength, thin_path)
    print(f"wrote {raw_path} and {thin_path}")
    return 0


def cmd_train(args):
    scale = _parse_scale(args.scale)
    fc = _feature_config(scale)
    items = load_dataset(args.data)
    if args.mode == "chi2-learned":
        model = fit_chi_square_weights(items, fc, seed=args.seed)
        save_model(model, args.out)
        print(f"wrote {args.out}")
        return 0
    if args.lr == 0:
        print("warning: --lr 0 leaves the model at its random initialization",
              file=sys.stderr)
    cfg = TrainConfig(
        learning_rate=args.lr,
        kernel="rbf" if args.mode == "lbm-rbf" else "linear",
        n_out=args.n_out,
        sigma=args.sigma,
        patience=args.patience,
        max_epochs=args.epochs,
        epoch_size=args.epoch_size,
        sample_threshold=args.sample_threshold,
        seed=args.seed,
    )
    model, log = train(items, cfg, fc)
    save_model(model, args.out)
    if args.log:
        log.to_csv(args.log)
        print(f"wrote {args.out} and {args.log}")
    else:
        print(f"wrote {args.out}")
    print(f"best validation F {log.best_val_f:.4f} (epoch {log.best_epoch})")
    return 0


def _eval_detections(args, items, fc, model):
    maps = []
    for item in items:
        img = item.load_image()
        if args.noise_var > 0:
            img = add_gaussian_noise(
                img, args.noise_var, seed=texton_seed(item.id + ":noise", args.seed)
            )
        cues = compute_cues(img, fc, seed=texton_seed(item.id, args.seed))
        _, thinned = detect_from_cues(cues, model, args.smoothing)
        maps.append(thinned.strength)
    return maps


def cmd_eval(args):
    items = [it for it in load_dataset(args.data) if it.split == args.split]
    if not items:
        raise UsageError(f"no images in split {args.split!r} under {args.data}")
    annotations = [it.load_annotations() for it in items]
    if args.detections:
        if args.noise_var > 0:
            raise UsageError("--noise-var cannot be combined with --detections")
        det_dir = Path(args.detections)
        maps = []
        for it in items:
            p = det_dir / f"{it.id}.png"
            if not p.exists():
                raise UsageError(f"--detections {det_dir} is missing {p.name}")
            maps.append(load_boundary_png(p))
    else:
        scale = _parse_scale(args.scale)
        fc = _feature_config(scale)
        model = _load_mode_model(args, fc)
        fc = model.feature_config or fc
        maps = _eval_detections(args, items, fc, model)
    table = pr_curve(
        maps,
        annotations,
        thresholds=default_thresholds(args.thresholds),
        tolerance=args.tolerance,
    )
    report = summarize(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pr_csv(report.dataset_points, out / "pr.csv")
    summary = format_summary(report)
    atomic_write_text(out / "summary.txt", summary + "\n")
    print(summary)
    return 0


def cmd_bench(args):
    img = load_image(args.image)
    fc = FeatureConfig()
    image_id = Path(args.image).stem

    t0 = time.perf_counter()
    cues = compute_cues(img, fc, seed=texton_seed(image_id, args.seed))
    t_features = time.perf_counter() - t0

    chi_model = ChiSquareModel.equal(4, fc.n_scales, fc)
    if args.model:
        metric_model = load_model(args.model)
        if not isinstance(metric_model, MetricModel):
            raise UsageError(f"--model {args.model} is not a metric model file")
    else:
        # distance-stage timing does not depend on the trained values
        metric_model = init_model(TrainConfig(seed=args.seed), fc)

    scfg = fc.scale_config()
    chi_times, lbm_times = [], []
    for _ in range(args.runs):
        t0 = time.perf_counter()
        responses = chi_square_responses(cues, chi_model, scfg)
        chi_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        learned_metric_responses(cues, metric_model)
        lbm_times.append(time.perf_counter() - t0)

    t0 = time.perf_counter()
    raw = smooth(fuse_orientations(responses), args.smoothing)
    oriented_nms(raw)
    t_post = time.perf_counter() - t0

    chi_med = statistics.median(chi_times)
    lbm_med = statistics.median(lbm_times)
    print(f"image {args.image} ({img.width}x{img.height}), {args.runs} runs")
    print(f"features       {t_features:9.3f} s")
    print(f"distance chi2  {chi_med:9.3f} s (median)")
    print(f"distance lbm   {lbm_med:9.3f} s (median)")
    print(f"postproc       {t_post:9.3f} s")
    print(f"speedup chi2/lbm {chi_med / lbm_med:7.2f}x")
    return 0


def cmd_synth(args):
    if args.spec:
        spec = load_corpus_spec(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = CorpusSpec(seed=args.seed if args.seed is not None else 7)
    items = synth_generate(spec, args.out)
    save_corpus_spec(spec, Path(args.out) / "corpus_spec.json")
    print(f"wrote {len(items)} images under {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="edgemetric",
        description="Boundary detection with chi-square or learned-metric distances",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: EDGEMETRIC_THREADS or all cores)")

    p = sub.add_parser("detect", help="detect boundaries in one image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="chi2-equal")
    p.add_argument("--model", default=None)
    p.add_argument("--scale", default="multi")
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--smoothing", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="CSV training log path")
    p.add_argument("--mode", choices=("lbm-rbf", "lbm-linear", "chi2-learned"),
                   default="lbm-rbf")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--n-out", type=int, default=16)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--epoch-size", type=int, default=20)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--sample-threshold", type=float, default=0.3)
    p.add_argument("--scale", default="multi")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate detections against annotations")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default="chi2-equal")
    p.add_argument("--model", default=None)
    p.add_argument("--detections", default=None,
                   help="directory of precomputed thinned maps (<id>.png)")
    p.add_argument("--scale", default="multi")
    p.add_argument("--thresholds", type=int, default=33)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--noise-var", type=float, default=0.0)
    p.add_argument("--smoothing", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time the distance stage of both metrics")
    p.add_argument("--image", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--smoothing", type=float, default=1.0)
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--spec", default=None, help="corpus spec JSON file")
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads if args.threads else _threads_default())
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CorpusSpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EdgeMetricError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
