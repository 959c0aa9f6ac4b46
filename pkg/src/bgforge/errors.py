"""Exception types raised across the toolchain."""

from __future__ import annotations


class BgforgeError(Exception):
    """Base class for all bgforge errors."""


# --- annotation store ---

class MalformedJson(BgforgeError):
    pass


class DanglingReference(BgforgeError):
    pass


class UnsupportedSegmentation(BgforgeError):
    pass


class LengthMismatch(BgforgeError):
    pass


class DegenerateRing(BgforgeError):
    pass


class EmptyDataset(BgforgeError):
    pass


class UnknownSource(BgforgeError):
    pass


# --- mask kernels ---

class DimensionMismatch(BgforgeError):
    pass


class EmptyMaskList(BgforgeError):
    pass


class EvenKernel(BgforgeError):
    pass


class NotDivisible(BgforgeError):
    pass


# --- policy ---

class DomainError(BgforgeError):
    pass


class AllZeroRatios(BgforgeError):
    pass


# --- inpaint core ---

class ShapeMismatch(BgforgeError):
    pass


class NonFinite(BgforgeError):
    pass


class MaskShapeMismatch(BgforgeError):
    pass


class BackendFailure(BgforgeError):
    pass


class NonFiniteLatent(BgforgeError):
    def __init__(self, step: int):
        super().__init__(f"latent became non-finite at step {step}")
        self.step = step


# --- remote backend ---

class Timeout(BgforgeError):
    pass


class ProtocolError(BgforgeError):
    def __init__(self, status: int, body: str):
        super().__init__(f"protocol error: status={status} body={body[:200]!r}")
        self.status = status
        self.body = body


class DimensionViolation(BgforgeError):
    pass


class Unreachable(BgforgeError):
    pass


# --- pipeline ---

class MissingImageFile(BgforgeError):
    pass


class NothingToPreview(BgforgeError):
    pass


class NonTerminalManifest(BgforgeError):
    pass


class NonTerminalManifest(BgforgeError):
    pass
