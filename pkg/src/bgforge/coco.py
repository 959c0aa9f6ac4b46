"""COCO-style dataset store: parse, validate, sample, merge, serialize.

Segmentations are kept in their wire form (polygon vertex lists or
uncompressed integer-counts RLE) and only rasterized on demand.  Unknown
JSON keys — top-level and per-record — ride along untouched so that
parse → serialize round-trips external files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from ._kernels import fill_rings_u8
from .errors import (
    DanglingReference,
    DegenerateRing,
    EmptyDataset,
    LengthMismatch,
    MalformedJson,
    UnknownSource,
    UnsupportedSegmentation,
)
from .masks import BinaryMask, foreground_union

_IMAGE_KEYS = ("id", "file_name", "width", "height")
_ANN_KEYS = ("id", "image_id", "category_id", "bbox", "area", "segmentation", "iscrowd")
_CAT_KEYS = ("id", "name")


@dataclass(frozen=True)
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    extras: dict = field(default_factory=dict, compare=True)


@dataclass(frozen=True)
class AnnotationRecord:
    id: int
    image_id: int
    category_id: int
    bbox: tuple  # (x, y, w, h) in pixels
    area: float
    segmentation: Any  # list of polygon rings, or {"size": [h, w], "counts": [...]}
    iscrowd: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def is_rle(self) -> bool:
        return isinstance(self.segmentation, dict)


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AnnotatedDataset:
    images: tuple
    annotations: tuple
    categories: tuple
    extras: dict = field(default_factory=dict)

    def image_by_id(self, image_id: int) -> ImageRecord:
        try:
            return self._image_index[image_id]
        except AttributeError:
            object.__setattr__(self, "_image_index", {im.id: im for im in self.images})
            return self._image_index[image_id]

    def annotations_for(self, image_id: int) -> list:
        try:
            idx = self._ann_index
        except AttributeError:
            idx = {}
            for a in self.annotations:
                idx.setdefault(a.image_id, []).append(a)
            object.__setattr__(self, "_ann_index", idx)
        return idx.get(image_id, [])


# ---------------------------------------------------------------------------
# parsing / serialization


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise MalformedJson(f"{where} is missing required key {key!r}")
    return record[key]


def _classify_segmentation(seg, ann_id: int):
    """Normalize a segmentation payload, rejecting the compressed-RLE variant."""
    if isinstance(seg, list):
        if not all(isinstance(ring, (list, tuple)) for ring in seg):
            raise UnsupportedSegmentation(f"annotation {ann_id}: polygon list must contain vertex lists")
        return [[float(v) for v in ring] for ring in seg]
    if isinstance(seg, dict):
        counts = seg.get("counts")
        if not isinstance(counts, list) or not all(isinstance(c, int) for c in counts):
            raise UnsupportedSegmentation(
                f"annotation {ann_id}: only uncompressed integer-counts RLE is supported"
            )
        size = seg.get("size")
        if not (isinstance(size, list) and len(size) == 2):
            raise MalformedJson(f"annotation {ann_id}: RLE segmentation lacks a [h, w] size")
        return {"size": [int(size[0]), int(size[1])], "counts": [int(c) for c in counts]}
    raise UnsupportedSegmentation(f"annotation {ann_id}: segmentation of type {type(seg).__name__}")


def parse_dataset(data) -> AnnotatedDataset:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise MalformedJson("top level must be a JSON object")

    images = []
    for raw in payload.get("images", []):
        width = int(_require(raw, "width", "image record"))
        height = int(_require(raw, "height", "image record"))
        if width < 1 or height < 1:
            raise MalformedJson(f"image {raw.get('id')}: non-positive dimensions {width}x{height}")
        images.append(
            ImageRecord(
                id=int(_require(raw, "id", "image record")),
                file_name=str(_require(raw, "file_name", "image record")),
                width=width,
                height=height,
                extras={k: v for k, v in raw.items() if k not in _IMAGE_KEYS},
            )
        )
    ids = [im.id for im in images]
    if len(set(ids)) != len(ids):
        raise MalformedJson("duplicate image ids")

    categories = []
    for raw in payload.get("categories", []):
        categories.append(
            Category(
                id=int(_require(raw, "id", "category record")),
                name=str(_require(raw, "name", "category record")),
                extras={k: v for k, v in raw.items() if k not in _CAT_KEYS},
            )
        )

    image_ids = set(ids)
    category_ids = {c.id for c in categories}
    annotations = []
    for raw in payload.get("annotations", []):
        ann_id = int(_require(raw, "id", "annotation record"))
        image_id = int(_require(raw, "image_id", "annotation record"))
        category_id = int(_require(raw, "category_id", "annotation record"))
        if image_id not in image_ids:
            raise DanglingReference(f"annotation {ann_id} references absent image {image_id}")
        if category_id not in category_ids:
            raise DanglingReference(f"annotation {ann_id} references absent category {category_id}")
        bbox = tuple(float(v) for v in _require(raw, "bbox", "annotation record"))
        if len(bbox) != 4:
            raise MalformedJson(f"annotation {ann_id}: bbox must have 4 entries")
        seg = _classify_segmentation(_require(raw, "segmentation", "annotation record"), ann_id)
        area = float(raw.get("area", bbox[2] * bbox[3]))
        annotations.append(
            AnnotationRecord(
                id=ann_id,
                image_id=image_id,
                category_id=category_id,
                bbox=bbox,
                area=area,
                segmentation=seg,
                iscrowd=int(raw.get("iscrowd", 0)),
                extras={k: v for k, v in raw.items() if k not in _ANN_KEYS},
            )
        )

    extras = {k: v for k, v in payload.items() if k not in ("images", "annotations", "categories")}
    return AnnotatedDataset(tuple(images), tuple(annotations), tuple(categories), extras)


def _record_dict(known: dict, extras: dict) -> dict:
    out = dict(known)
    for k in sorted(extras):
        out[k] = extras[k]
    return out


def serialize_dataset(ds: AnnotatedDataset) -> bytes:
    """Canonical form: fixed field order, extras sorted; stable for byte comparison."""
    payload: dict = {
        "images": [
            _record_dict(
                {"id": im.id, "file_name": im.file_name, "width": im.width, "height": im.height},
                im.extras,
            )
            for im in ds.images
        ],
        "annotations": [
            _record_dict(
                {
                    "id": a.id,
                    "image_id": a.image_id,
                    "category_id": a.category_id,
                    "bbox": list(a.bbox),
                    "area": a.area,
                    "segmentation": a.segmentation
                    if isinstance(a.segmentation, list)
                    else {"size": a.segmentation["size"], "counts": a.segmentation["counts"]},
                    "iscrowd": a.iscrowd,
                },
                a.extras,
            )
            for a in ds.annotations
        ],
        "categories": [
            _record_dict({"id": c.id, "name": c.name}, c.extras) for c in ds.categories
        ],
    }
    for k in sorted(ds.extras):
        payload[k] = ds.extras[k]
    return json.dumps(payload, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# segmentation codecs


def rle_decode(counts: Sequence[int], height: int, width: int) -> BinaryMask:
    """Column-major uncompressed RLE; counts alternate 0-runs / 1-runs starting with zeros."""
    arr = np.asarray(counts, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise LengthMismatch("counts must be a non-empty 1-D sequence")
    if np.any(arr < 0):
        raise LengthMismatch("counts must be non-negative")
    total = int(arr.sum())
    if total != height * width:
        raise LengthMismatch(f"counts sum to {total}, expected {height * width}")
    values = np.zeros(arr.size, np.uint8)
    values[1::2] = 1
    flat = np.repeat(values, arr)
    return BinaryMask.from_array(flat.reshape((height, width), order="F"))


def rle_encode(mask: BinaryMask) -> list:
    flat = mask.to_array().ravel(order="F")
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    counts = np.diff(edges).tolist()
    if flat[0] == 1:
        counts.insert(0, 0)  # convention: first run is always the zero-run
    return [int(c) for c in counts]


def rasterize_polygons(rings: Iterable[Sequence[float]], height: int, width: int) -> BinaryMask:
    """Nonzero-winding fill sampled at pixel centers; out-of-bounds geometry is clipped."""
    vx, vy, starts = [], [], [0]
    for i, ring in enumerate(rings):
        if len(ring) < 6 or len(ring) % 2 != 0:
            raise DegenerateRing(f"ring {i} has {len(ring)} coordinates; need >= 3 (x, y) pairs")
        vx.extend(ring[0::2])
        vy.extend(ring[1::2])
        starts.append(len(vx))
    if len(starts) == 1:
        return BinaryMask.zeros(height, width)
    filled = fill_rings_u8(
        np.asarray(vx, np.float64),
        np.asarray(vy, np.float64),
        np.asarray(starts, np.int64),
        height,
        width,
    )
    return BinaryMask.from_array(filled)


def annotation_mask(ann: AnnotationRecord, height: int, width: int) -> BinaryMask:
    if ann.is_rle:
        size = ann.segmentation["size"]
        if size != [height, width]:
            raise LengthMismatch(
                f"annotation {ann.id}: RLE size {size} disagrees with image {[height, width]}"
            )
        return rle_decode(ann.segmentation["counts"], height, width)
    return rasterize_polygons(ann.segmentation, height, width)


def image_foreground(ds: AnnotatedDataset, image_id: int) -> BinaryMask:
    """Union of every object mask on the image; crowd regions count as foreground too."""
    image = ds.image_by_id(image_id)
    anns = ds.annotations_for(image_id)
    if not anns:
        return BinaryMask.zeros(image.height, image.width)
    return foreground_union([annotation_mask(a, image.height, image.width) for a in anns])


# ---------------------------------------------------------------------------
# sampling / merging


def sample_subset(ds: AnnotatedDataset, fraction: float, seed: int) -> AnnotatedDataset:
    if not ds.images:
        raise EmptyDataset("cannot sample from a dataset with no images")
    if not (0.0 < fraction <= 1.0):
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = len(ds.images)
    k = math.ceil(fraction * n)
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    images = tuple(ds.images[int(i)] for i in chosen)
    keep = {im.id for im in images}
    annotations = tuple(a for a in ds.annotations if a.image_id in keep)
    return AnnotatedDataset(images, annotations, ds.categories, dict(ds.extras))


def merge_augmented(original: AnnotatedDataset, generated: Sequence[tuple]) -> AnnotatedDataset:
    """Add one ImageRecord per (source_image_id, new_file_name), cloning the source's annotations."""
    if not generated:
        return original
    by_id = {im.id: im for im in original.images}
    next_image = max(by_id) + 1 if by_id else 1
    next_ann = max((a.id for a in original.annotations), default=0) + 1
    new_images, new_annotations = [], []
    for source_image_id, new_file_name in generated:
        src = by_id.get(source_image_id)
        if src is None:
            raise UnknownSource(f"no image with id {source_image_id}")
        new_id = next_image
        next_image += 1
        new_images.append(replace(src, id=new_id, file_name=str(new_file_name), extras=dict(src.extras)))
        for a in original.annotations_for(source_image_id):
            new_annotations.append(replace(a, id=next_ann, image_id=new_id, extras=dict(a.extras)))
            next_ann += 1
    return AnnotatedDataset(
        original.images + tuple(new_images),
        original.annotations + tuple(new_annotations),
        original.categories,
        dict(original.extras),
    )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    level: str  # "error" | "warning"
    code: str
    message: str


def validate_dataset(ds: AnnotatedDataset, check_areas: bool = True) -> list:
    """Structural findings only; file-level checks live in the pipeline layer."""
    findings = []
    image_ids = {im.id for im in ds.images}
    if len(image_ids) != len(ds.images):
        findings.append(Finding("error", "duplicate-image-id", "image ids are not unique"))
    ann_ids = [a.id for a in ds.annotations]
    if len(set(ann_ids)) != len(ann_ids):
        findings.append(Finding("error", "duplicate-annotation-id", "annotation ids are not unique"))
    category_ids = {c.id for c in ds.categories}
    for a in ds.annotations:
        if a.image_id not in image_ids:
            findings.append(
                Finding("error", "dangling-image", f"annotation {a.id} references absent image {a.image_id}")
            )
            continue
        if a.category_id not in category_ids:
            findings.append(
                Finding(
                    "error", "dangling-category", f"annotation {a.id} references absent category {a.category_id}"
                )
            )
        im = ds.image_by_id(a.image_id)
        x, y, w, h = a.bbox
        if w < 0 or h < 0:
            findings.append(Finding("error", "negative-bbox", f"annotation {a.id} has negative bbox extent"))
        elif x < 0 or y < 0 or x + w > im.width or y + h > im.height:
            findings.append(
                Finding(
                    "error",
                    "bbox-out-of-bounds",
                    f"annotation {a.id} bbox {list(a.bbox)} exceeds image {im.width}x{im.height}",
                )
            )
        if check_areas and a.area > 0:
            try:
                raster = annotation_mask(a, im.height, im.width).count()
            except Exception as exc:  # malformed geometry is its own finding
                findings.append(Finding("error", "bad-segmentation", f"annotation {a.id}: {exc}"))
                continue
            if raster and abs(raster - a.area) > 0.10 * a.area:
                findings.append(
                    Finding(
                        "warning",
                        "area-mismatch",
                        f"annotation {a.id}: rasterized area {raster} vs stored {a.area:g}",
                    )
                )
    return findings
