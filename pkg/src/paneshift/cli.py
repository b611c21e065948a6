"""Command line interface: ``paneshift {distort,augment,eval,report}``.

Exit status: 0 success, 1 some entries failed, 2 invalid arguments or
configuration, 3 fatal I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DatasetError,
    DistortionConfig,
    LabeledPair,
    LabelMask,
    default_jobs,
    distort_dataset,
    distort_pair,
    scan_dataset,
    write_sidecar,
)
from .distortion import SigmaRangeError
from .grid import GridLayoutError, check_strip_width, patch_layout
from .imageio import image_size, read_image, read_labels, write_image, write_labels
from .metrics import MetricsError, PairingError, RobustnessReport, compare_reports, evaluate_run
from .warp import DEFAULT_IGNORE_LABEL, FillPolicy

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("paneshift")


class UsageError(Exception):
    pass


def _fill(text):
    try:
        return FillPolicy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_version(p):
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")


def _add_distortion_flags(p):
    p.add_argument("--config", type=Path, help="JSON file with default values for these flags")
    p.add_argument("--model", choices=("global", "grid"), default="grid")
    p.add_argument("--sigma", type=float, default=None, help="distortion intensity (global: 0-0.4, grid: 0-0.5)")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed; a random one is drawn and recorded if omitted")
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--strip-width", type=int, default=10)
    p.add_argument("--fill", type=_fill, default=FillPolicy(), help="image fill: clamp or constant:<v>")
    p.add_argument("--crop-valid", action="store_true", help="center-crop outputs to the region with in-image sources")
    p.add_argument("--ignore-label", type=int, default=DEFAULT_IGNORE_LABEL)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="paneshift", description=__doc__.splitlines()[0])
    _add_version(parser)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distort", help="distort one image and optional mask")
    _add_version(p)
    _add_distortion_flags(p)
    p.add_argument("image", type=Path)
    p.add_argument("--mask", type=Path)
    p.add_argument("-o", "--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("augment", help="distort a whole image/annotation dataset")
    _add_version(p)
    _add_distortion_flags(p)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--masks", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: $PANESHIFT_JOBS or CPU count)")
    p.add_argument("--fail-fast", action="store_true")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("eval", help="score prediction masks against ground truth")
    _add_version(p)
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--ignore-label", type=int, default=DEFAULT_IGNORE_LABEL)
    p.add_argument("--sigma", type=float, default=None, help="intensity tag (default: read from the run summary next to --gt)")
    p.add_argument("--label", default=None)
    p.add_argument("-o", "--out", type=Path, required=True, help="report path; a .csv is written alongside")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="IoU decrease with bootstrap CIs from eval reports")
    _add_version(p)
    p.add_argument("baseline", type=Path)
    p.add_argument("distorted", type=Path, nargs="+")
    p.add_argument("--seed", type=int, default=0, help="bootstrap seed")
    p.add_argument("--resamples", type=int, default=10_000)
    p.add_argument("-o", "--out", type=Path, required=True, help="output path prefix for .csv and .json")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv):
    """Re-parse with ``--config`` values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if cfg_path is None:
        return args
    try:
        cfg = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {cfg_path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {cfg_path} must hold a JSON object")
    sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
    subparser = sub.choices[args.command]
    known = {a.dest for a in subparser._actions}
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    if "fill" in cfg:
        cfg["fill"] = FillPolicy.parse(str(cfg["fill"]))
    for path_key in ("images", "masks", "out", "mask", "image"):
        if path_key in cfg:
            cfg[path_key] = Path(cfg[path_key])
    subparser.set_defaults(**cfg)
    return parser.parse_args(argv)


def _config_from_args(args) -> DistortionConfig:
    if args.sigma is None:
        raise UsageError("--sigma is required")
    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        log.info("no --seed given, using %d", seed)
    try:
        return DistortionConfig(
            model=args.model,
            sigma=args.sigma,
            master_seed=seed,
            rows=args.rows,
            cols=args.cols,
            strip_width=args.strip_width,
            fill=args.fill,
            crop_valid=args.crop_valid,
        )
    except (SigmaRangeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _emit(payload):
    print(json.dumps(payload, sort_keys=True))


def cmd_distort(args) -> int:
    config = _config_from_args(args)
    try:
        image = read_image(args.image)
        labels = read_labels(args.mask) if args.mask else None
    except OSError as exc:
        log.error("cannot read input: %s", exc)
        return EXIT_IO
    if labels is None:
        labels = np.full(image.shape[:2], args.ignore_label, dtype=np.uint8 if args.ignore_label <= 255 else np.uint16)
    try:
        pair = LabeledPair(image, LabelMask(labels, args.ignore_label))
        out, sidecar = distort_pair(pair, config, config.master_seed, args.image.stem)
    except (GridLayoutError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    stem = args.image.stem
    paths = {"image": args.out / f"{stem}.png", "sidecar": args.out / f"{stem}.distortion.json"}
    try:
        write_image(paths["image"], out.image)
        if args.mask:
            paths["mask"] = args.out / f"{stem}.mask.png"
            write_labels(paths["mask"], out.mask.labels)
        write_sidecar(paths["sidecar"], sidecar)
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_IO
    _emit({k: str(v) for k, v in paths.items()} | {"seed": config.master_seed, "mean_pixel_shift": sidecar["mean_pixel_shift"]})
    return EXIT_OK


def cmd_augment(args) -> int:
    config = _config_from_args(args)
    try:
        manifest = scan_dataset(args.images, args.masks, args.ignore_label, fail_fast=args.fail_fast)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except DatasetError as exc:
        for problem in exc.problems:
            log.error("%s", problem)
        return EXIT_USAGE
    if config.model == "grid":
        # Validate grid geometry for every image before writing anything.
        try:
            for entry in manifest.entries:
                w, h = image_size(entry.image_path)
                check_strip_width(config.strip_width, patch_layout(w, h, config.rows, config.cols))
        except GridLayoutError as exc:
            raise UsageError(f"{entry.id}: {exc}") from None
    jobs = args.jobs if args.jobs is not None else default_jobs()
    try:
        summary = distort_dataset(manifest, config, args.out, jobs=jobs, fail_fast=args.fail_fast)
    except OSError as exc:
        log.error("cannot write output: %s", exc)
        return EXIT_IO
    _emit({"summary": str(args.out / "run_summary.json"), "succeeded": summary.succeeded, "failed": summary.failed})
    return EXIT_PARTIAL if summary.failed else EXIT_OK


def _sigma_from_summary(gt_dir: Path):
    for candidate in (gt_dir / "run_summary.json", gt_dir.parent / "run_summary.json"):
        if candidate.is_file():
            try:
                return json.loads(candidate.read_text(encoding="utf-8"))["config"]["sigma"]
            except (ValueError, KeyError):
                return None
    return None


def cmd_eval(args) -> int:
    sigma = args.sigma if args.sigma is not None else _sigma_from_summary(args.gt)
    try:
        report = evaluate_run(args.pred, args.gt, args.classes, args.ignore_label, sigma=sigma, label=args.label)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except MetricsError as exc:
        raise UsageError(str(exc)) from None
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        report.to_json(args.out)
        args.out.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_IO
    _emit({"report": str(args.out), "miou": report.miou, "n_images": report.n_images})
    return EXIT_OK


REPORT_COLUMNS = ["label", "sigma", "miou", "miou_decrease", "iou_decrease", "ci_lo", "ci_hi", "n_images", "classes_per_image_pred"]


def cmd_report(args) -> int:
    try:
        baseline = RobustnessReport.from_json(args.baseline)
        runs = [RobustnessReport.from_json(p) for p in args.distorted]
    except OSError as exc:
        log.error("cannot read report: %s", exc)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed report: {exc}") from None

    rows = []
    try:
        base_row = compare_reports(baseline, baseline, args.resamples, args.seed)
        base_row["sigma"] = 0.0 if baseline.sigma is None else baseline.sigma
        base_row["label"] = baseline.label or "baseline"
        rows.append(base_row)
        for path, run in zip(args.distorted, runs):
            row = compare_reports(baseline, run, args.resamples, args.seed)
            row["label"] = run.label or path.stem
            rows.append(row)
    except PairingError as exc:
        raise UsageError(str(exc)) from None
    rows[1:] = sorted(rows[1:], key=lambda r: (r["sigma"] is None, r["sigma"] or 0.0, r["label"]))

    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, REPORT_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        args.out.with_suffix(".json").write_text(
            json.dumps({"bootstrap_seed": args.seed, "resamples": args.resamples, "rows": rows}, indent=2) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        log.error("cannot write report: %s", exc)
        return EXIT_IO
    _emit({"csv": str(args.out.with_suffix(".csv")), "rows": len(rows)})
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s: %(message)s",
        )
        return args.func(args)
    except UsageError as exc:
        print(f"paneshift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
