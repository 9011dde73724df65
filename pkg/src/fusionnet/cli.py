"""Command-line entry points: train, predict, evaluate, augment, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .augment import ORIENTATIONS, elastic_warp, enrich, sample_elastic_field
from .data import load_dataset, load_images, parse_manifest, read_image, write_image
from .gradcheck import run_suite
from .metrics import EvalConfig, ScoreReport, evaluate
from .pipeline import (
    TrainConfig,
    TrainingDiverged,
    cross_validate,
    load_checkpoint,
    predict,
    train,
)

__all__ = ["main"]


def _cmd_train(args) -> int:
    config = TrainConfig.from_ini(args.config)
    dataset = load_dataset(args.data)
    if args.cross_validate:
        if config.folds < 2:
            print("cross-validation requested but folds < 2 in config", file=sys.stderr)
            return 2
        reports = cross_validate(config, dataset)
        for i, rep in enumerate(reports):
            print(rep.line(f"fold {i}"))
    try:
        resume = load_checkpoint(args.resume) if args.resume else None
        ckpt, history = train(config, dataset, out_path=args.out, resume=resume)
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    steps_per_epoch = max(1, len(history) // max(1, config.epochs))
    for epoch in range(config.epochs):
        chunk = history[epoch * steps_per_epoch : (epoch + 1) * steps_per_epoch]
        if chunk:
            print(f"epoch {epoch}: mean loss {float(np.mean(chunk)):.6f}")
    print(f"saved checkpoint to {args.out} ({ckpt.step} steps)")
    return 0


def _cmd_predict(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    images = load_images(args.input)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = predict(
        ckpt,
        [img for _, img in images],
        tta=not args.no_tta,
        pad_radius=args.pad,
    )
    for (stem, _), prob in zip(images, maps):
        target = out_dir / f"{stem}.png"
        write_image(target, prob)
        print(f"wrote {target}")
    return 0


def _cmd_evaluate(args) -> int:
    manifest = parse_manifest(args.truth)
    config = EvalConfig(threshold=args.threshold, median_radius=args.median_radius, thin=not args.no_thin)
    pred_dir = Path(args.pred)
    reports: list[tuple[str, ScoreReport]] = []
    for image_path, label_path in manifest.entries:
        if label_path is None:
            raise ValueError(f"{image_path}: truth manifest entry has no label")
        pred_path = pred_dir / f"{image_path.stem}.png"
        prob = read_image(pred_path)
        truth = (read_image(label_path) >= 0.5).astype(np.uint8)
        rep = evaluate(prob, truth, config)
        reports.append((image_path.stem, rep))
        print(rep.line(image_path.stem))
    if not reports:
        print("no entries to evaluate", file=sys.stderr)
        return 2
    mean = ScoreReport(
        v_rand=float(np.mean([r.v_rand for _, r in reports])),
        v_info=float(np.mean([r.v_info for _, r in reports])),
        v_dice=float(np.mean([r.v_dice for _, r in reports])),
        pixels=int(sum(r.pixels for _, r in reports)),
    )
    print(mean.line("mean"))
    if args.report:
        payload = {
            "slices": {name: vars(r) for name, r in reports},
            "mean": vars(mean),
            "config": {
                "threshold": config.threshold,
                "median_radius": config.median_radius,
                "thin": config.thin,
            },
        }
        Path(args.report).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.report}")
    return 0


def _cmd_augment(args) -> int:
    dataset = load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    enriched = enrich(dataset)
    per_source = len(ORIENTATIONS)
    for i, pair in enumerate(enriched):
        if args.amplitude > 0:
            rng = np.random.default_rng((args.seed, i))
            pair = elastic_warp(pair, sample_elastic_field(rng, args.amplitude))
        src, variant = divmod(i, per_source)
        write_image(out_dir / f"sample{src:03d}_var{variant}_image.png", pair.image)
        write_image(out_dir / f"sample{src:03d}_var{variant}_label.png", pair.label.astype(np.float32))
    print(f"wrote {2 * len(enriched)} files to {out_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_suite(trials=args.trials, seed=args.seed)
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.op}: worst relative error {r.worst_error:.3e} over {r.trials} trials (tol {r.tolerance:g})")
        failed = failed or not r.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionnet",
        description="Train, deploy, and score the fully residual encoder-decoder segmenter.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a network on a dataset manifest")
    p.add_argument("--config", required=True, help="INI-style training configuration")
    p.add_argument("--data", required=True, help="manifest of image/label pairs")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--cross-validate", action="store_true", help="report per-fold scores before the final fit")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="write probability maps for images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help="image file or manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-tta", action="store_true", help="single forward instead of 8-orientation averaging")
    p.add_argument("--pad", type=int, default=None, help="mirror-pad radius (default: from checkpoint)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against a truth manifest")
    p.add_argument("--pred", required=True, help="directory of predicted maps named <image stem>.png")
    p.add_argument("--truth", required=True, help="manifest of image/label pairs")
    p.add_argument("--median-radius", type=int, default=2)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-thin", action="store_true", help="skip boundary thinning of the reference")
    p.add_argument("--report", help="also write a JSON report here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("augment", help="materialize the enriched/warped dataset for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=10.0, help="elastic displacement bound in pixels")
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("gradcheck", help="finite-difference check of every engine gradient")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
