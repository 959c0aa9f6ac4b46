"""The two inpainting engines behind the service.

MirrorEngine answers instantly and deterministically; RealEngine wraps a
latent-diffusion inpainting pipeline and is only importable with the `real`
extra installed.  Both return the response payload dict for canonical
serialization by the app layer.
"""

from __future__ import annotations

import base64
import io
import threading
import time

import numpy as np

from .config import ServerConfig
from .protocol import ParsedJob


class MirrorEngine:
    """Echo engine: deterministic down to the byte, no weights needed."""

    def run(self, job: ParsedJob) -> dict:
        # wall_ms is pinned to 0 so repeated identical requests produce
        # byte-identical responses (the golden-fixture contract)
        return {"backend_info": "mirror", "image": job.image_b64, "wall_ms": 0}


class RealEngine:
    """Latent-diffusion inpainting with pixel-space compositing of the preserved region.

    The model owns classifier-free guidance and masked latent blending; the
    final composite guarantees preserved pixels match the input up to codec
    round-trip error, declared by the `+pixelspace` suffix in backend_info.
    One pipeline instance, serialized access (single GPU).
    """

    def __init__(self, config: ServerConfig):
        try:
            import torch
            from diffusers import AutoPipelineForInpainting
        except ImportError as exc:
            raise RuntimeError(
                "real mode needs the 'real' extra (torch, diffusers, transformers)"
            ) from exc
        self._torch = torch
        self._config = config
        self._lock = threading.Lock()
        dtype = torch.float16 if config.device.startswith("cuda") else torch.float32
        self._pipe = AutoPipelineForInpainting.from_pretrained(
            config.model, torch_dtype=dtype
        ).to(config.device)

    def run(self, job: ParsedJob) -> dict:
        from PIL import Image

        started = time.perf_counter()
        mask_img = Image.fromarray(job.regenerate.astype(np.uint8) * 255, "L")
        with self._lock:
            generator = self._torch.Generator(self._config.device).manual_seed(
                job.seed & 0xFFFFFFFF
            )
            out = self._pipe(
                prompt=job.prompt,
                image=job.image,
                mask_image=mask_img,
                width=job.width,
                height=job.height,
                num_inference_steps=job.steps,
                guidance_scale=job.guidance_scale,
                generator=generator,
            ).images[0]

        generated = np.asarray(out.convert("RGB").resize(job.image.size))
        original = np.asarray(job.image)
        composite = np.where(job.regenerate[:, :, None], generated, original)
        buf = io.BytesIO()
        Image.fromarray(composite.astype(np.uint8), "RGB").save(buf, "PNG")
        return {
            "backend_info": f"{self._config.model}+pixelspace",
            "image": base64.b64encode(buf.getvalue()).decode("ascii"),
            "wall_ms": round((time.perf_counter() - started) * 1000.0, 3),
        }


def make_engine(config: ServerConfig):
    if config.mode == "mirror":
        return MirrorEngine()
    return RealEngine(config)
