"""Command-line entry point: ``signsynth {filter-bg,generate,noise-bg,augment,eval}``.

Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from signsynth import background as bg
from signsynth.annotations import IMAGE_DIR, read_detections, read_ground_truth, write_dataset
from signsynth.errors import DataError
from signsynth.evaluation import evaluate, export_pr_plot_data, write_report
from signsynth.generator import augment_real, derive_sample_rng, generate_dataset, load_config
from signsynth.images import read_image, write_png
from signsynth.templates import load_template_set

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_IO = 0, 1, 2, 3
DEFAULT_CLASS_LIST = "classes.txt"

log = logging.getLogger("signsynth")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or TOML file with generation parameters")
    p.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override one config key; repeatable, wins over --config",
    )
    p.add_argument("--seed", type=int, default=None, help="master seed (default: config value, else 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="signsynth", description="Synthetic traffic-sign detection datasets.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("filter-bg", help="filter a COCO-style background corpus into a manifest")
    p.add_argument("--index", required=True, help="COCO-style JSON annotation index")
    p.add_argument("--images-root", default="", help="directory the index's file names are relative to")
    p.add_argument(
        "--exclude", default=None,
        help="comma-separated categories to exclude (default: driving-domain COCO classes; '' for none)",
    )
    p.add_argument("--min-width", type=int, default=bg.DEFAULT_MIN_WIDTH, help="minimum width in px")
    p.add_argument("--min-height", type=int, default=bg.DEFAULT_MIN_HEIGHT, help="minimum height in px")
    p.add_argument("--standardize-to", default=None, help="write square standardized PNGs to this directory")
    p.add_argument("--canvas-side", type=int, default=bg.DEFAULT_CANVAS_SIDE, help="side of standardized images")
    p.add_argument("--out", required=True, help="output manifest path")

    p = sub.add_parser("generate", help="generate a synthetic annotated dataset")
    _config_flags(p)
    p.add_argument("--templates", required=True, help="template image directory")
    p.add_argument("--class-list", default=None, help=f"class list file (default: TEMPLATES/{DEFAULT_CLASS_LIST})")
    p.add_argument("--backgrounds", required=True, help="background manifest from filter-bg or noise-bg")
    p.add_argument("-n", "--num-samples", type=int, default=None, help="number of samples (overrides config)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes")

    p = sub.add_parser("noise-bg", help="write uniform-noise backgrounds and their manifest")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--canvas-side", type=int, default=bg.DEFAULT_CANVAS_SIDE, help="image side in px")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("augment", help="brightness/contrast/blur augmentation of a real annotated set")
    _config_flags(p)
    p.add_argument("--gt", required=True, help="annotation file of the real images")
    p.add_argument("--images-root", default=None, help=f"image directory (default: GT_DIR/{IMAGE_DIR})")
    p.add_argument("--copies", type=int, default=1, help="augmented copies per input image")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("eval", help="score detections against ground truth (VOC 2012 AP)")
    p.add_argument("--gt", required=True, help="ground-truth annotation file")
    p.add_argument("--detections", required=True, help="detection results JSON")
    p.add_argument("--iou", type=float, default=0.5, help="IoU threshold for a match")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--pr-csv", default=None, help="PR plot data CSV (default: report path with .csv)")
    return parser


def _params(args, num_samples=None):
    params = load_config(args.config, args.overrides)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if num_samples is not None:
        changes["num_samples"] = num_samples
    return params.replace(**changes) if changes else params


def cmd_filter_bg(args) -> int:
    with open(args.index, "rb") as fh:
        records = bg.parse_annotation_index(fh, args.images_root)
    excluded = (
        bg.DEFAULT_EXCLUDED_CATEGORIES
        if args.exclude is None
        else frozenset(c.strip() for c in args.exclude.split(",") if c.strip())
    )
    policy = bg.FilterPolicy(excluded, args.min_width, args.min_height)
    result = bg.filter_backgrounds(records, policy)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = [r.file_path for r in result.accepted]
    extra = {}
    if args.standardize_to:
        target = Path(args.standardize_to)
        target.mkdir(parents=True, exist_ok=True)
        spec = bg.CanvasSpec(args.canvas_side)
        paths = []
        for record in result.accepted:
            dest = target / f"{Path(record.file_path).stem}.png"
            write_png(dest, bg.standardize_background(read_image(record.file_path), spec))
            paths.append(os.fspath(dest))
        extra["canvas_side"] = args.canvas_side
    paths = [os.path.relpath(os.path.abspath(p), os.path.abspath(out.parent)) for p in paths]
    bg.write_background_manifest(out, paths, policy, result, extra)
    print(f"accepted={len(result.accepted)} rejected={len(result.rejected)}")
    for reason, count in result.reason_counts().items():
        print(f"  {reason}: {count}")
    return EXIT_OK


def cmd_generate(args) -> int:
    params = _params(args, args.num_samples)
    class_list = args.class_list or os.path.join(args.templates, DEFAULT_CLASS_LIST)
    templates = load_template_set(args.templates, class_list)
    backgrounds = bg.load_background_manifest(args.backgrounds)
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    manifest = generate_dataset(params, backgrounds, templates, args.out, workers=args.workers)
    counts = " ".join(f"{name}={n}" for name, n in manifest["per_class_counts"].items())
    print(f"samples={manifest['num_samples']} instances={manifest['total_instances']} {counts}".rstrip())
    return EXIT_OK


def cmd_noise_bg(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = bg.CanvasSpec(args.canvas_side)
    names = []
    for i in range(args.count):
        seed = int(np.random.SeedSequence([args.seed & ((1 << 64) - 1), i]).generate_state(1, np.uint64)[0])
        name = f"noise_{i:06d}.png"
        write_png(out / name, bg.synth_noise_background(spec, seed))
        names.append(name)
    bg.write_background_manifest(out / "manifest.json", names, None, extra={"canvas_side": args.canvas_side, "seed": args.seed})
    print(f"wrote {len(names)} noise backgrounds to {out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.copies < 1:
        raise UsageError("--copies must be >= 1")
    params = _params(args)
    gt = read_ground_truth(args.gt)
    root = Path(args.images_root) if args.images_root else Path(args.gt).parent / IMAGE_DIR
    samples = []
    index = 0
    for image_id, anns in gt.images.items():
        image = read_image(root / gt.file_names[image_id])
        for _ in range(args.copies):
            rng = derive_sample_rng(params.master_seed, index)
            samples.append(augment_real(image, anns, rng, params, sample_index=index))
            index += 1
    path = write_dataset(samples, gt.class_names, args.out)
    print(f"wrote {len(samples)} augmented images; annotations in {path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    gt = read_ground_truth(args.gt)
    dets = read_detections(args.detections)
    report = evaluate(gt, dets, args.iou)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, out)
    export_pr_plot_data(report, args.pr_csv or out.with_suffix(".csv"))
    for cid in sorted(report.ap):
        print(f"AP[{report.name(cid)}] = {report.ap[cid]:.4f}")
    if report.excluded:
        print("excluded (no ground truth): " + ", ".join(report.name(c) for c in report.excluded))
    print(f"mAP: {report.mAP:.4f}")
    return EXIT_OK


COMMANDS = {
    "filter-bg": cmd_filter_bg,
    "generate": cmd_generate,
    "noise-bg": cmd_noise_bg,
    "augment": cmd_augment,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"signsynth: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"signsynth: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DataError, ValueError, KeyError) as exc:
        print(f"signsynth: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
