"""Request parsing and validation for POST /v1/inpaint.

Validation is by hand rather than through a framework model so that every
violation maps to a 400 with a message naming the offending field, and so
the raw base64 image string survives untouched for mirror-mode echoing.
"""

from __future__ import annotations

import base64
import binascii
import io
import json
from dataclasses import dataclass

import numpy as np
from PIL import Image


class BadRequest(ValueError):
    """Maps to a 400 response with the message as the error body."""


# field -> accepted JSON types (bool is excluded from the int fields below)
REQUEST_FIELDS = {
    "guidance_scale": (int, float),
    "height": (int,),
    "image": (str,),
    "mask": (str,),
    "prompt": (str,),
    "seed": (int,),
    "steps": (int,),
    "width": (int,),
}


@dataclass(frozen=True)
class ParsedJob:
    prompt: str
    steps: int
    guidance_scale: float
    seed: int
    width: int
    height: int
    image_b64: str  # verbatim request string, for byte-exact echoing
    image: Image.Image  # RGB
    regenerate: np.ndarray  # bool (height, width); True = regenerate


def _decode_png(b64: str, field: str) -> Image.Image:
    try:
        raw = base64.b64decode(b64, validate=True)
    except binascii.Error as exc:
        raise BadRequest(f"{field} is not valid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise BadRequest(f"{field} is not a decodable image: {exc}") from exc
    return img


def parse_job(body: bytes, max_steps: int) -> ParsedJob:
    try:
        payload = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadRequest(f"body is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise BadRequest("body must be a JSON object")

    unknown = sorted(set(payload) - set(REQUEST_FIELDS))
    if unknown:
        raise BadRequest(f"unknown fields: {', '.join(unknown)}")
    missing = sorted(set(REQUEST_FIELDS) - set(payload))
    if missing:
        raise BadRequest(f"missing fields: {', '.join(missing)}")
    for name, types in REQUEST_FIELDS.items():
        value = payload[name]
        if isinstance(value, bool) or not isinstance(value, types):
            raise BadRequest(f"{name} has the wrong type")

    steps = payload["steps"]
    if not 1 <= steps <= max_steps:
        raise BadRequest(f"steps must be within [1, {max_steps}], got {steps}")
    width, height = payload["width"], payload["height"]
    if width < 1 or height < 1:
        raise BadRequest(f"width and height must be >= 1, got {width}x{height}")

    image = _decode_png(payload["image"], "image")
    if image.size != (width, height):
        raise BadRequest(
            f"image is {image.size[0]}x{image.size[1]}, request says {width}x{height}"
        )
    mask = _decode_png(payload["mask"], "mask")
    if mask.size != image.size:
        raise BadRequest(
            f"mask {mask.size[0]}x{mask.size[1]} does not match image {width}x{height}"
        )
    # >= 128 counts as "regenerate" in case a lossy upstream produced grays
    regenerate = np.asarray(mask.convert("L")) >= 128

    return ParsedJob(
        prompt=payload["prompt"],
        steps=steps,
        guidance_scale=float(payload["guidance_scale"]),
        seed=payload["seed"],
        width=width,
        height=height,
        image_b64=payload["image"],
        image=image.convert("RGB"),
        regenerate=regenerate,
    )


def canonical_json(payload: dict) -> bytes:
    """Sorted keys, compact separators: the byte form frozen in the golden fixtures."""
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
