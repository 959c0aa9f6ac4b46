"""Command-line entry point: plan / augment / merge / preview / validate."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import BgforgeError
from .pipeline import (
    MERGED_FILE,
    SNAPSHOT_FILE,
    PipelineConfig,
    run_augment,
    run_merge,
    run_plan,
    run_preview,
    run_validate,
)

logger = logging.getLogger(__name__)

_DEFAULTS = {
    "annotations": None,
    "images_dir": None,
    "out_dir": None,
    "subset_fraction": None,
    "alpha": 1,
    "sampling": "uniform",
    "max_steps": 50,
    "freedom": 0.5,
    "erosion_kernel": 7,
    "guidance_scale": 7.5,
    "inpaint_size": 512,
    "backend": "stub:noise",
    "remote_url": None,
    "seed": 0,
    "workers": 1,
    "resume": False,
    "timeout": 60.0,
    "retries": 3,
}


def _common_flags(parser: argparse.ArgumentParser):
    # every value defaults to None so the CLI > config file > defaults ordering
    # can tell "flag not given" apart from "flag given its default value"
    parser.add_argument("--config", type=Path, default=None, help="TOML config file")
    parser.add_argument("--annotations", type=Path, default=None, help="COCO-style JSON")
    parser.add_argument("--images-dir", type=Path, default=None, help="root of source images")
    parser.add_argument("--out-dir", type=Path, default=None, help="output directory")
    parser.add_argument("--subset-fraction", type=float, default=None, help="sample this fraction of images")
    parser.add_argument("--alpha", type=int, default=None, help="augmented copies per image")
    parser.add_argument("--sampling", choices=["uniform", "nonuniform"], default=None)
    parser.add_argument("--max-steps", type=int, default=None, help="full denoising budget")
    parser.add_argument("--freedom", type=float, default=None, help="step-budget reduction strength, in (0,1)")
    parser.add_argument("--erosion-kernel", type=int, default=None, help="odd minimum-filter size")
    parser.add_argument("--guidance-scale", type=float, default=None)
    parser.add_argument("--inpaint-size", type=int, default=None, help="square working resolution")
    parser.add_argument("--backend", default=None, help="stub:oracle | stub:noise | stub:constant | remote")
    parser.add_argument("--remote-url", default=None, help="endpoint for --backend remote")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--resume", action="store_const", const=True, default=None,
                        help="skip entries already done in the manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bgforge",
        description="Expand detection/segmentation datasets by regenerating image backgrounds "
        "while keeping every annotated object and its annotations intact.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("plan", "compute background ratios and per-image step budgets; write the plan"),
        ("augment", "generate images for every plan entry; write the manifest"),
        ("merge", "fold generated images into an expanded annotation file"),
        ("preview", "render a grid of original / mask / augmented triplets"),
        ("validate", "check a merged dataset against disk and manifest"),
    ]:
        p = sub.add_parser(name, help=text)
        _common_flags(p)
        if name == "preview":
            p.add_argument("--count", type=int, default=4, help="rows in the preview grid")
    return parser


def _load_config_file(path: Path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise BgforgeError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    merged = dict(_DEFAULTS)
    if args.config is not None:
        merged.update(_load_config_file(args.config))
    for key in _DEFAULTS:
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value

    if merged["out_dir"] is None:
        raise BgforgeError("--out-dir is required")
    out_dir = Path(merged["out_dir"])
    if merged["annotations"] is None:
        snapshot = out_dir / SNAPSHOT_FILE
        if args.command in ("augment", "merge", "preview") and snapshot.exists():
            merged["annotations"] = snapshot
        elif args.command == "validate" and (out_dir / MERGED_FILE).exists():
            merged["annotations"] = out_dir / MERGED_FILE
        else:
            raise BgforgeError("--annotations is required")
    if merged["images_dir"] is None:
        raise BgforgeError("--images-dir is required")
    return PipelineConfig(**merged)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "plan":
            plan, summary = run_plan(cfg)
            for key in sorted(summary):
                print(f"{key}: {summary[key]}")
        elif args.command == "augment":
            counters = run_augment(cfg)
            print(
                "planned {planned}  skipped {skipped}  done {done}  failed {failed}".format(**counters)
            )
        elif args.command == "merge":
            info = run_merge(cfg)
            print(
                "merged {generated} generated images into {merged_images} total "
                "({merged_annotations} annotations) -> {output}".format(**info)
            )
        elif args.command == "preview":
            path = run_preview(cfg, count=args.count)
            print(f"preview written to {path}")
        elif args.command == "validate":
            report = run_validate(cfg)
            for finding in report.findings:
                print(f"{finding.level}: [{finding.code}] {finding.message}")
            print(f"{len(report.errors)} errors, {len(report.findings) - len(report.errors)} warnings")
            return 0 if report.ok else 1
    except BgforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
