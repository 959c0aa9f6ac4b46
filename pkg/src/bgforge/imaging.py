"""Raster I/O and geometry: PNG codecs, aspect-preserving letterboxing, previews.

All functions deal in uint8 numpy arrays, (H, W, 3) for images.  Letterboxing
scales the content to fit a square working canvas and pads the rest; masks
are padded with 0 ("preserve") so padding is never regenerated.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .masks import BinaryMask


def load_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, "RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("RGB"))


def save_png(path, arr: np.ndarray):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, "RGB").save(path, format="PNG")


@dataclass(frozen=True)
class LetterboxGeometry:
    source_width: int
    source_height: int
    canvas_size: int
    content_width: int
    content_height: int
    offset_x: int
    offset_y: int


def letterbox_geometry(width: int, height: int, size: int) -> LetterboxGeometry:
    scale = min(size / width, size / height)
    cw = max(1, min(size, round(width * scale)))
    ch = max(1, min(size, round(height * scale)))
    return LetterboxGeometry(
        source_width=width,
        source_height=height,
        canvas_size=size,
        content_width=cw,
        content_height=ch,
        offset_x=(size - cw) // 2,
        offset_y=(size - ch) // 2,
    )


def letterbox_image(arr: np.ndarray, size: int) -> tuple:
    h, w = arr.shape[:2]
    geo = letterbox_geometry(w, h, size)
    resized = Image.fromarray(arr, "RGB").resize(
        (geo.content_width, geo.content_height), Image.BILINEAR
    )
    canvas = np.zeros((size, size, 3), np.uint8)
    canvas[
        geo.offset_y : geo.offset_y + geo.content_height,
        geo.offset_x : geo.offset_x + geo.content_width,
    ] = np.asarray(resized)
    return canvas, geo


def letterbox_mask(mask: BinaryMask, geo: LetterboxGeometry) -> BinaryMask:
    resized = Image.fromarray(mask.to_array() * np.uint8(255), "L").resize(
        (geo.content_width, geo.content_height), Image.NEAREST
    )
    canvas = np.zeros((geo.canvas_size, geo.canvas_size), np.uint8)
    canvas[
        geo.offset_y : geo.offset_y + geo.content_height,
        geo.offset_x : geo.offset_x + geo.content_width,
    ] = np.asarray(resized) >= 128
    return BinaryMask.from_array(canvas)


def restore_image(canvas: np.ndarray, geo: LetterboxGeometry) -> np.ndarray:
    content = canvas[
        geo.offset_y : geo.offset_y + geo.content_height,
        geo.offset_x : geo.offset_x + geo.content_width,
    ]
    restored = Image.fromarray(content, "RGB").resize(
        (geo.source_width, geo.source_height), Image.BILINEAR
    )
    return np.asarray(restored)


def mask_overlay(image: np.ndarray, mask: BinaryMask, color=(255, 0, 96), alpha=0.45) -> np.ndarray:
    out = image.astype(np.float64)
    hot = mask.to_array().astype(bool)
    tint = np.asarray(color, np.float64)
    out[hot] = (1.0 - alpha) * out[hot] + alpha * tint
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def compose_grid(rows, pad: int = 6, background: int = 255) -> np.ndarray:
    """Paste rows of equally-important cells onto one canvas; cells may differ in size."""
    if not rows or not any(rows):
        raise ValueError("nothing to compose")
    cell_h = max(cell.shape[0] for row in rows for cell in row)
    cell_w = max(cell.shape[1] for row in rows for cell in row)
    n_cols = max(len(row) for row in rows)
    grid = np.full(
        (len(rows) * (cell_h + pad) + pad, n_cols * (cell_w + pad) + pad, 3),
        background,
        np.uint8,
    )
    for r, row in enumerate(rows):
        for c, cell in enumerate(row):
            y = pad + r * (cell_h + pad)
            x = pad + c * (cell_w + pad)
            grid[y : y + cell.shape[0], x : x + cell.shape[1]] = cell
    return grid
