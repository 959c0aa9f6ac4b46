"""End-to-end orchestration: plan -> augment -> merge -> preview -> validate.

The augment stage runs a fixed thread pool over a pre-ordered job list and
appends manifest entries strictly in plan order (a watermark holds back
out-of-order completions), so outputs and manifests are reproducible for any
worker count and across crash/resume boundaries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import coco
from .errors import (
    BgforgeError,
    MissingImageFile,
    NonTerminalManifest,
    NothingToPreview,
)
from .imaging import (
    compose_grid,
    decode_png,
    encode_png,
    letterbox_image,
    letterbox_mask,
    load_image,
    mask_overlay,
    restore_image,
    save_png,
)
from .inpaint import inpaint, linear_schedule, make_stub_backend
from .masks import area_ratio, background_mask, erode, mask_to_png_bytes
from .policy import AugmentationPlan, PolicyConfig, build_sampling_plan
from .remote import InpaintJob, RemoteBackend

logger = logging.getLogger(__name__)

PLAN_FILE = "plan.jsonl"
PLAN_SUMMARY_FILE = "plan_summary.json"
SNAPSHOT_FILE = "source_annotations.json"
MANIFEST_FILE = "manifest.jsonl"
MERGED_FILE = "merged_annotations.json"
PREVIEW_FILE = "preview.png"
IMAGES_SUBDIR = "images"


@dataclass
class PipelineConfig:
    annotations: Path
    images_dir: Path
    out_dir: Path
    subset_fraction: float | None = None
    alpha: int = 1
    sampling: str = "uniform"
    max_steps: int = 50
    freedom: float = 0.5
    erosion_kernel: int = 7
    guidance_scale: float = 7.5
    inpaint_size: int = 512
    backend: str = "stub:noise"
    remote_url: str | None = None
    seed: int = 0
    workers: int = 1
    resume: bool = False
    timeout: float = 60.0
    retries: int = 3
    crash_after_writes: int | None = None  # test hook: abort after N manifest appends

    def __post_init__(self):
        self.annotations = Path(self.annotations)
        self.images_dir = Path(self.images_dir)
        self.out_dir = Path(self.out_dir)

    def policy(self) -> PolicyConfig:
        return PolicyConfig(
            max_steps=self.max_steps,
            freedom=self.freedom,
            alpha=self.alpha,
            sampling_mode=self.sampling,
            guidance_scale=self.guidance_scale,
            erosion_kernel=self.erosion_kernel,
        )

    def header_dict(self) -> dict:
        return {
            "annotations": str(self.annotations),
            "images_dir": str(self.images_dir),
            "out_dir": str(self.out_dir),
            "subset_fraction": self.subset_fraction,
            "alpha": self.alpha,
            "sampling": self.sampling,
            "max_steps": self.max_steps,
            "freedom": self.freedom,
            "erosion_kernel": self.erosion_kernel,
            "guidance_scale": self.guidance_scale,
            "inpaint_size": self.inpaint_size,
            "backend": self.backend,
            "remote_url": self.remote_url,
            "seed": self.seed,
            "workers": self.workers,
        }


class InjectedCrash(RuntimeError):
    """Raised by the crash_after_writes test hook."""


def output_name(source_image_id: int, copy_index: int) -> str:
    return f"aug_{source_image_id:08d}_{copy_index:03d}.png"


def _entry_key(record) -> tuple:
    if isinstance(record, dict):
        return (record["source_image_id"], record["copy_index"])
    return (record.source_image_id, record.copy_index)


# ---------------------------------------------------------------------------
# manifest I/O


def read_manifest(path: Path):
    """Replay a manifest: (headers, last-wins entry map, entries in file order)."""
    headers, replay, ordered = [], {}, []
    if not Path(path).exists():
        return headers, replay, ordered
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                logger.warning("skipping undecodable manifest line")
                continue
            if record.get("record") == "header":
                headers.append(record)
            elif record.get("record") == "entry":
                replay[_entry_key(record)] = record
                ordered.append(record)
    return headers, replay, ordered


def _manifest_header(cfg: PipelineConfig, backend_descriptor: dict, plan_entries: int) -> dict:
    return {
        "record": "header",
        "created": datetime.now(timezone.utc).isoformat(),
        "config": cfg.header_dict(),
        "backend": backend_descriptor,
        "plan_entries": plan_entries,
    }


def _write_record(fh, record: dict):
    fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    fh.flush()


# ---------------------------------------------------------------------------
# plan


def _load_dataset(cfg: PipelineConfig) -> coco.AnnotatedDataset:
    ds = coco.parse_dataset(cfg.annotations.read_bytes())
    if cfg.subset_fraction is not None and cfg.subset_fraction < 1.0:
        ds = coco.sample_subset(ds, cfg.subset_fraction, cfg.seed)
    return ds


def run_plan(cfg: PipelineConfig):
    """Compute per-image background ratios and step budgets; emit plan + snapshot + summary."""
    ds = _load_dataset(cfg)
    ratios = []
    pairs = []
    for im in ds.images:
        src = cfg.images_dir / im.file_name
        if not src.exists():
            raise MissingImageFile(str(src))
        fg = coco.image_foreground(ds, im.id)
        bg = background_mask(fg)
        ratio = area_ratio(erode(bg, cfg.erosion_kernel))
        ratios.append(ratio)
        pairs.append((im.id, ratio))

    plan = build_sampling_plan(pairs, cfg.policy(), cfg.seed)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / PLAN_FILE).write_text(plan.to_jsonl(), encoding="utf-8")
    (cfg.out_dir / SNAPSHOT_FILE).write_bytes(coco.serialize_dataset(ds))
    summary = {
        "images": len(ds.images),
        "annotations": len(ds.annotations),
        "plan_entries": len(plan.entries),
        "mean_objects_per_image": (len(ds.annotations) / len(ds.images)) if ds.images else 0.0,
        "mean_background_ratio": float(np.mean(ratios)) if ratios else 0.0,
        "mean_step_budget": (
            float(np.mean([e.step_budget for e in plan.entries])) if plan.entries else 0.0
        ),
    }
    (cfg.out_dir / PLAN_SUMMARY_FILE).write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return plan, summary


# ---------------------------------------------------------------------------
# augment


class _AugmentContext:
    def __init__(self, cfg: PipelineConfig, ds: coco.AnnotatedDataset):
        self.cfg = cfg
        self.ds = ds
        self.schedule = linear_schedule(cfg.max_steps)
        self.out_images = cfg.out_dir / IMAGES_SUBDIR
        if cfg.backend.startswith("stub:"):
            self.stub = make_stub_backend(cfg.backend.split(":", 1)[1])
            self.remote = None
            self.descriptor = self.stub.metadata()
        elif cfg.backend == "remote":
            if not cfg.remote_url:
                raise BgforgeError("--remote-url is required with the remote backend")
            self.stub = None
            self.remote = RemoteBackend(cfg.remote_url, timeout=cfg.timeout, retries=cfg.retries)
            self.descriptor = self.remote.metadata()  # healthcheck; fails fast when down
        else:
            raise BgforgeError(f"unknown backend {cfg.backend!r}")


def _process_entry(ctx: _AugmentContext, entry) -> dict:
    cfg = ctx.cfg
    started = time.perf_counter()
    name = output_name(entry.source_image_id, entry.copy_index)
    record = {
        "record": "entry",
        "source_image_id": entry.source_image_id,
        "copy_index": entry.copy_index,
        "seed": entry.seed,
        "prompt": entry.prompt,
        "step_budget": entry.step_budget,
        "background_ratio": entry.background_ratio,
        "freedom": cfg.freedom,
        "guidance_scale": cfg.guidance_scale,
        "erosion_kernel": cfg.erosion_kernel,
        "backend": ctx.descriptor,
        "output_file": name,
    }
    try:
        image_rec = ctx.ds.image_by_id(entry.source_image_id)
        src_path = cfg.images_dir / image_rec.file_name
        if not src_path.exists():
            raise MissingImageFile(str(src_path))
        image = load_image(src_path)
        background = background_mask(coco.image_foreground(ctx.ds, entry.source_image_id))
        canvas, geometry = letterbox_image(image, cfg.inpaint_size)
        working_mask = erode(letterbox_mask(background, geometry), cfg.erosion_kernel)

        if working_mask.is_empty():
            out = image.copy()
            noop = True
        else:
            if ctx.stub is not None:
                out_canvas = inpaint(
                    ctx.stub,
                    canvas,
                    working_mask,
                    entry.prompt,
                    entry.step_budget,
                    cfg.guidance_scale,
                    entry.seed,
                    ctx.schedule,
                )
            else:
                job = InpaintJob(
                    image=encode_png(canvas),
                    mask=mask_to_png_bytes(working_mask),
                    prompt=entry.prompt,
                    steps=entry.step_budget,
                    guidance_scale=cfg.guidance_scale,
                    seed=entry.seed,
                    width=cfg.inpaint_size,
                    height=cfg.inpaint_size,
                )
                out_canvas = decode_png(ctx.remote.run(job).image)
            out = restore_image(out_canvas, geometry)
            noop = False

        png = encode_png(out)
        (ctx.out_images / name).write_bytes(png)
        record.update(
            status="done",
            noop=noop,
            checksum=hashlib.sha256(png).hexdigest(),
            wall_ms=round((time.perf_counter() - started) * 1000.0, 3),
        )
    except Exception as exc:  # per-entry failures are recorded, not fatal
        logger.warning("entry %s failed: %s", _entry_key(record), exc)
        record.update(
            status="failed",
            reason=f"{type(exc).__name__}: {exc}",
            wall_ms=round((time.perf_counter() - started) * 1000.0, 3),
        )
    return record


def run_augment(cfg: PipelineConfig) -> dict:
    """Generate every plan entry not already done; returns counters."""
    plan_path = cfg.out_dir / PLAN_FILE
    plan = AugmentationPlan.from_jsonl(plan_path.read_text(encoding="utf-8"))
    snapshot = cfg.out_dir / SNAPSHOT_FILE
    annotations_path = snapshot if snapshot.exists() else cfg.annotations
    ds = coco.parse_dataset(annotations_path.read_bytes())
    ctx = _AugmentContext(cfg, ds)
    ctx.out_images.mkdir(parents=True, exist_ok=True)

    manifest_path = cfg.out_dir / MANIFEST_FILE
    done_keys = set()
    if cfg.resume:
        _, replay, _ = read_manifest(manifest_path)
        done_keys = {k for k, rec in replay.items() if rec.get("status") == "done"}
    pending = [e for e in plan.entries if _entry_key(e) not in done_keys]

    counters = {"planned": len(plan.entries), "skipped": len(done_keys), "done": 0, "failed": 0}
    mode = "a" if cfg.resume else "w"
    pool = ThreadPoolExecutor(max_workers=max(1, cfg.workers))
    writes = 0
    try:
        with open(manifest_path, mode, encoding="utf-8") as mf:
            _write_record(mf, _manifest_header(cfg, ctx.descriptor, len(plan.entries)))
            futures = {
                pool.submit(_process_entry, ctx, entry): idx for idx, entry in enumerate(pending)
            }
            results: dict = {}
            watermark = 0
            for fut in as_completed(futures):
                results[futures[fut]] = fut.result()
                while watermark in results:
                    record = results.pop(watermark)
                    _write_record(mf, record)
                    watermark += 1
                    writes += 1
                    counters["done" if record["status"] == "done" else "failed"] += 1
                    if cfg.crash_after_writes is not None and writes >= cfg.crash_after_writes:
                        raise InjectedCrash(f"crash hook fired after {writes} writes")
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
    return counters


# ---------------------------------------------------------------------------
# merge


def run_merge(cfg: PipelineConfig):
    """Fold done manifest entries into the source dataset as new images + cloned annotations."""
    snapshot = cfg.out_dir / SNAPSHOT_FILE
    annotations_path = snapshot if snapshot.exists() else cfg.annotations
    ds = coco.parse_dataset(annotations_path.read_bytes())
    plan = AugmentationPlan.from_jsonl((cfg.out_dir / PLAN_FILE).read_text(encoding="utf-8"))
    _, replay, _ = read_manifest(cfg.out_dir / MANIFEST_FILE)

    missing = [k for k in map(_entry_key, plan.entries) if k not in replay]
    if missing:
        raise NonTerminalManifest(
            f"{len(missing)} plan entries have no manifest record (first: {missing[0]}); "
            "run augment (with --resume) to completion first"
        )
    generated = [
        (e.source_image_id, replay[_entry_key(e)]["output_file"])
        for e in plan.entries
        if replay[_entry_key(e)]["status"] == "done"
    ]
    merged = coco.merge_augmented(ds, generated)
    out_path = cfg.out_dir / MERGED_FILE
    out_path.write_bytes(coco.serialize_dataset(merged))
    return {
        "source_images": len(ds.images),
        "generated": len(generated),
        "merged_images": len(merged.images),
        "merged_annotations": len(merged.annotations),
        "output": str(out_path),
    }


# ---------------------------------------------------------------------------
# preview


def run_preview(cfg: PipelineConfig, count: int = 4) -> Path:
    """Grid of (original | regenerate-mask overlay | augmented) rows for sampled done entries."""
    snapshot = cfg.out_dir / SNAPSHOT_FILE
    annotations_path = snapshot if snapshot.exists() else cfg.annotations
    ds = coco.parse_dataset(annotations_path.read_bytes())
    _, replay, _ = read_manifest(cfg.out_dir / MANIFEST_FILE)
    done = sorted(
        (rec for rec in replay.values() if rec.get("status") == "done"),
        key=_entry_key,
    )
    if not done:
        raise NothingToPreview("no done entries in the manifest")

    rng = np.random.default_rng(cfg.seed)
    k = min(count, len(done))
    chosen = sorted(rng.choice(len(done), size=k, replace=False).tolist())
    rows = []
    for idx in chosen:
        rec = done[idx]
        out_file = cfg.out_dir / IMAGES_SUBDIR / rec["output_file"]
        if not out_file.exists():
            logger.warning("preview: %s missing on disk, skipping", out_file)
            continue
        image_rec = ds.image_by_id(rec["source_image_id"])
        original = load_image(cfg.images_dir / image_rec.file_name)
        background = background_mask(coco.image_foreground(ds, image_rec.id))
        overlay = mask_overlay(original, erode(background, cfg.erosion_kernel))
        rows.append([original, overlay, load_image(out_file)])
    if not rows:
        raise NothingToPreview("every sampled entry was missing its output file")
    grid = compose_grid(rows)
    out_path = cfg.out_dir / PREVIEW_FILE
    save_png(out_path, grid)
    return out_path


# ---------------------------------------------------------------------------
# validate


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)

    def add(self, level: str, code: str, message: str):
        self.findings.append(coco.Finding(level, code, message))

    @property
    def errors(self):
        return [f for f in self.findings if f.level == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors


def run_validate(cfg: PipelineConfig, check_areas: bool = False) -> ValidationReport:
    """Structural + on-disk checks over a merged dataset; never raises for findings."""
    report = ValidationReport()
    merged_path = cfg.annotations
    if not merged_path.exists():
        report.add("error", "missing-annotations", f"{merged_path} does not exist")
        return report
    try:
        ds = coco.parse_dataset(merged_path.read_bytes())
    except BgforgeError as exc:
        report.add("error", "unparseable", f"{type(exc).__name__}: {exc}")
        return report

    report.findings.extend(coco.validate_dataset(ds, check_areas=check_areas))

    roots = [cfg.out_dir / IMAGES_SUBDIR, cfg.images_dir]
    for im in ds.images:
        path = next((r / im.file_name for r in roots if (r / im.file_name).exists()), None)
        if path is None:
            report.add("error", "missing-file", f"image {im.id}: {im.file_name} not found")
            continue
        with Image.open(path) as handle:
            w, h = handle.size
        if (w, h) != (im.width, im.height):
            report.add(
                "error",
                "dimension-mismatch",
                f"image {im.id}: file is {w}x{h}, record says {im.width}x{im.height}",
            )

    manifest_path = cfg.out_dir / MANIFEST_FILE
    if manifest_path.exists():
        _, replay, _ = read_manifest(manifest_path)
        for key, rec in sorted(replay.items()):
            if rec.get("status") != "done":
                continue
            path = cfg.out_dir / IMAGES_SUBDIR / rec["output_file"]
            if not path.exists():
                report.add("error", "missing-file", f"manifest entry {key}: {rec['output_file']} not found")
                continue
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != rec.get("checksum"):
                report.add(
                    "error",
                    "checksum-mismatch",
                    f"manifest entry {key}: {rec['output_file']} changed since generation",
                )
    return report
