"""Masked denoising loop over pluggable denoiser backends.

Latents are float64 arrays shaped (channels, height, width).  The loop owns
the guidance combination, the per-step foreground/background blending, and
the adaptive starting step; everything model-specific lives behind the
backend capability.  Stub backends (identity codec, latent factor 1) make the
loop testable without any model weights.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import (
    BackendFailure,
    DomainError,
    MaskShapeMismatch,
    NonFinite,
    NonFiniteLatent,
    ShapeMismatch,
)
from .masks import BinaryMask


@dataclass(frozen=True)
class NoiseSchedule:
    """Noise level per step; level 0 is the clean signal."""

    max_steps: int
    levels: np.ndarray  # shape (max_steps + 1,), strictly increasing from 0

    def __post_init__(self):
        levels = np.asarray(self.levels, np.float64)
        if levels.shape != (self.max_steps + 1,):
            raise DomainError(f"schedule needs {self.max_steps + 1} levels, got {levels.shape}")
        if levels[0] != 0.0:
            raise DomainError("schedule must start at level 0")
        if not np.all(np.diff(levels) > 0):
            raise DomainError("schedule levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return self.max_steps == other.max_steps and np.array_equal(self.levels, other.levels)


def linear_schedule(max_steps: int, sigma_max: float = 1.0) -> NoiseSchedule:
    if max_steps < 1:
        raise DomainError(f"max_steps must be >= 1, got {max_steps}")
    if sigma_max <= 0:
        raise DomainError(f"sigma_max must be positive, got {sigma_max}")
    levels = sigma_max * np.arange(max_steps + 1, dtype=np.float64) / max_steps
    return NoiseSchedule(max_steps, levels)


def job_noise(seed: int, shape: tuple) -> np.ndarray:
    """The forward-process noise field for one job; pure function of the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF]))
    return rng.standard_normal(shape)


def guided_noise(cond: np.ndarray, uncond: np.ndarray, w: float) -> np.ndarray:
    """w*cond + (1-w)*uncond, computed so the w=0/w=1 collapses are exact."""
    if cond.shape != uncond.shape:
        raise ShapeMismatch(f"cond {cond.shape} vs uncond {uncond.shape}")
    if not np.isfinite(cond).all() or not np.isfinite(uncond).all():
        raise NonFinite("guidance inputs must be finite")
    if w == 0.0:
        return uncond.copy()
    if w == 1.0:
        return cond.copy()
    # difference form: exact identity when cond == uncond, equal to the
    # literal combination within float rounding otherwise
    return uncond + w * (cond - uncond)


@runtime_checkable
class DenoiserBackend(Protocol):
    def predict_noise(self, latent: np.ndarray, step: int, prompt: str, conditional: bool) -> np.ndarray: ...

    def encode(self, image: np.ndarray) -> np.ndarray: ...

    def decode(self, latent: np.ndarray) -> np.ndarray: ...

    def metadata(self) -> dict: ...


def inpaint(
    backend,
    image: np.ndarray,
    latent_mask: BinaryMask,
    prompt: str,
    steps: int,
    guidance_scale: float,
    seed: int,
    schedule: NoiseSchedule,
) -> np.ndarray:
    """Regenerate the masked region of `image`, walking `steps` levels down the schedule.

    The full latent starts as the forward-noised original at the starting
    step; after every solver update the unmasked entries are overwritten with
    the original's forward trajectory at the new step, so they land exactly on
    the clean latent at step 0.
    """
    if not (1 <= steps <= schedule.max_steps):
        raise DomainError(f"steps must lie in [1, {schedule.max_steps}], got {steps}")
    if latent_mask.is_empty():
        return image.copy()

    try:
        x0 = backend.encode(image)
    except Exception as exc:
        raise BackendFailure(f"encode failed: {exc}") from exc
    if x0.ndim != 3:
        raise BackendFailure(f"encode must return (channels, h, w), got shape {x0.shape}")
    if not np.isfinite(x0).all():
        raise NonFiniteLatent(steps)
    if latent_mask.height != x0.shape[1] or latent_mask.width != x0.shape[2]:
        raise MaskShapeMismatch(
            f"mask {latent_mask.height}x{latent_mask.width} vs latent {x0.shape[1]}x{x0.shape[2]}"
        )

    noise = job_noise(seed, x0.shape)
    if hasattr(backend, "on_job_start"):
        backend.on_job_start(seed, noise)

    regenerate = latent_mask.to_array().astype(bool)[None, :, :]
    sigma = schedule.levels
    x = x0 + sigma[steps] * noise
    for t in range(steps, 0, -1):
        try:
            eps_cond = backend.predict_noise(x, t, prompt, True)
            eps_uncond = backend.predict_noise(x, t, prompt, False)
        except Exception as exc:
            raise BackendFailure(f"predict_noise failed at step {t}: {exc}") from exc
        if eps_cond.shape != x.shape or eps_uncond.shape != x.shape:
            raise BackendFailure(f"noise prediction shape mismatch at step {t}")
        guided = guided_noise(eps_cond, eps_uncond, guidance_scale)
        x = x - (sigma[t] - sigma[t - 1]) * guided
        # background follows the solver; foreground is pinned to the original's
        # forward trajectory, exactly the clean latent once t-1 hits 0
        reference = x0 if t == 1 else x0 + sigma[t - 1] * noise
        x = np.where(regenerate, x, reference)
        if not np.isfinite(x).all():
            raise NonFiniteLatent(t - 1)

    try:
        out = backend.decode(x)
    except Exception as exc:
        raise BackendFailure(f"decode failed: {exc}") from exc
    if out.shape != image.shape:
        raise BackendFailure(f"decode returned shape {out.shape}, expected {image.shape}")
    return out


# ---------------------------------------------------------------------------
# stub backends: identity codec, latent factor 1


class _IdentityCodec:
    """uint8 HxWx3 image <-> float64 3xHxW latent in [0, 1]; exact round-trip."""

    def encode(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) image, got {image.shape}")
        return np.transpose(image, (2, 0, 1)).astype(np.float64) / 255.0

    def decode(self, latent: np.ndarray) -> np.ndarray:
        pixels = np.rint(np.clip(latent, 0.0, 1.0) * 255.0).astype(np.uint8)
        return np.transpose(pixels, (1, 2, 0))


class OracleBackend(_IdentityCodec):
    """Predicts exactly the noise the loop injected; denoising inverts the forward process.

    The per-job noise field arrives through on_job_start and is kept
    thread-local, so concurrent jobs may share one instance.  Every answered
    (seed, step) pair is also recorded for inspection.
    """

    def __init__(self):
        self._current = threading.local()
        self._lock = threading.Lock()
        self.served: dict = {}  # (seed, step) -> noise field

    def on_job_start(self, seed: int, noise: np.ndarray):
        self._current.seed = seed
        self._current.noise = noise

    def predict_noise(self, latent, step, prompt, conditional):
        noise = getattr(self._current, "noise", None)
        if noise is None or noise.shape != latent.shape:
            raise RuntimeError("oracle backend used outside a job context")
        with self._lock:
            self.served[(self._current.seed, step)] = noise
        return noise.copy()

    def metadata(self):
        return {"kind": "oracle", "latent_factor": 1}


class ConstantBackend(_IdentityCodec):
    """Predicts an all-0.1 field regardless of input; useful for blending tests."""

    LEVEL = 0.1

    def predict_noise(self, latent, step, prompt, conditional):
        return np.full_like(latent, self.LEVEL)

    def metadata(self):
        return {"kind": "constant", "latent_factor": 1}


class SeededNoiseBackend(_IdentityCodec):
    """Deterministic pseudo-denoiser: fresh noise per (job seed, step, branch)."""

    def __init__(self):
        self._current = threading.local()

    def on_job_start(self, seed: int, noise: np.ndarray):
        self._current.seed = seed

    def predict_noise(self, latent, step, prompt, conditional):
        seed = getattr(self._current, "seed", None)
        if seed is None:
            raise RuntimeError("seeded-noise backend used outside a job context")
        rng = np.random.default_rng(
            np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, step, int(conditional)])
        )
        return rng.standard_normal(latent.shape)

    def metadata(self):
        return {"kind": "seeded-noise", "latent_factor": 1}


_STUB_KINDS = {
    "oracle": OracleBackend,
    "constant": ConstantBackend,
    "noise": SeededNoiseBackend,
}


def make_stub_backend(kind: str):
    try:
        factory = _STUB_KINDS[kind]
    except KeyError:
        raise DomainError(f"unknown stub backend {kind!r}; choose from {sorted(_STUB_KINDS)}") from None
    return factory()
