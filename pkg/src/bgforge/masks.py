"""Bit-packed binary masks and the algebra the pipeline needs.

A mask stores one bit per pixel, row-major, packed big-endian into a
uint8 payload with zeroed tail padding. Union and complement operate on
the packed words; erosion and block-resize unpack, run the raster
kernel, and repack.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyMaskList, EvenKernel, NotDivisible


def _packed_len(npix: int) -> int:
    return (npix + 7) // 8


def _tail_mask(npix: int, nbytes: int) -> np.ndarray:
    """0xFF per byte, with unused trailing bits of the last byte cleared."""
    out = np.full(nbytes, 0xFF, np.uint8)
    rem = npix % 8
    if rem:
        out[-1] = (0xFF << (8 - rem)) & 0xFF
    return out


@dataclass(frozen=True)
class BinaryMask:
    height: int
    width: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise DimensionMismatch(f"mask dimensions must be positive, got {self.height}x{self.width}")
        expect = _packed_len(self.height * self.width)
        if self.bits.dtype != np.uint8 or self.bits.shape != (expect,):
            raise DimensionMismatch("payload does not match mask dimensions")

    def __eq__(self, other):
        return (
            isinstance(other, BinaryMask)
            and self.height == other.height
            and self.width == other.width
            and np.array_equal(self.bits, other.bits)
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BinaryMask":
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise DimensionMismatch(f"expected 2-d array, got shape {arr.shape}")
        h, w = arr.shape
        return cls(h, w, np.packbits(arr.astype(bool).ravel()))

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, np.zeros(_packed_len(height * width), np.uint8))

    @classmethod
    def ones(cls, height: int, width: int) -> "BinaryMask":
        return cls(height, width, _tail_mask(height * width, _packed_len(height * width)))

    def to_array(self) -> np.ndarray:
        """Unpack to a {0,1} uint8 array of shape (height, width)."""
        n = self.height * self.width
        return np.unpackbits(self.bits, count=n).reshape(self.height, self.width)

    def count(self) -> int:
        """Number of set pixels."""
        return int(np.bitwise_count(self.bits).sum())

    def is_empty(self) -> bool:
        return not self.bits.any()


def _check_same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.height != b.height or a.width != b.width:
        raise DimensionMismatch(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def foreground_union(masks: list[BinaryMask]) -> BinaryMask:
    """Per-pixel OR over all instance masks; overlaps saturate to 1."""
    if not masks:
        raise EmptyMaskList("foreground_union needs at least one mask")
    first = masks[0]
    acc = first.bits.copy()
    for m in masks[1:]:
        _check_same_dims(first, m)
        np.bitwise_or(acc, m.bits, out=acc)
    return BinaryMask(first.height, first.width, acc)


def background_mask(foreground: BinaryMask) -> BinaryMask:
    """Exact per-pixel complement of the foreground."""
    npix = foreground.height * foreground.width
    inv = np.bitwise_xor(foreground.bits, _tail_mask(npix, foreground.bits.shape[0]))
    return BinaryMask(foreground.height, foreground.width, inv)


def erode(mask: BinaryMask, kernel: int) -> BinaryMask:
    """Minimum filter with a kernel-by-kernel window and replicate borders."""
    if kernel < 1 or kernel % 2 == 0:
        raise EvenKernel(f"kernel must be odd and >= 1, got {kernel}")
    if kernel == 1:
        return mask
    return BinaryMask.from_array(_kernels.erode_u8(mask.to_array(), kernel))


def resize_to_latent(mask: BinaryMask, factor: int, threshold: float = 0.5) -> BinaryMask:
    """Block-reduce by `factor`: block becomes 1 iff mean coverage >= threshold."""
    if factor < 1:
        raise NotDivisible(f"factor must be positive, got {factor}")
    if mask.height % factor or mask.width % factor:
        raise NotDivisible(
            f"{mask.height}x{mask.width} mask not divisible by factor {factor}"
        )
    if factor == 1:
        return mask
    arr = mask.to_array()
    oh, ow = mask.height // factor, mask.width // factor
    sums = arr.reshape(oh, factor, ow, factor).sum(axis=(1, 3), dtype=np.int64)
    coarse = (sums >= threshold * factor * factor).astype(np.uint8)
    return BinaryMask.from_array(coarse)


def area_ratio(mask: BinaryMask) -> float:
    """Fraction of set pixels, as a double."""
    return mask.count() / (mask.height * mask.width)


def mask_to_png_bytes(mask: BinaryMask) -> bytes:
    """Debug export: 8-bit grayscale PNG, 0 -> black, 1 -> white."""
    from PIL import Image

    arr = mask.to_array() * np.uint8(255)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
