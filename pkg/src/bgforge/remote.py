"""HTTP client for remote inpainting services speaking the wire protocol.

See docs/protocol.md for the schema.  Payloads are canonical (sorted keys,
compact separators) so identical jobs always serialize to identical bytes —
request logs double as reproducibility records.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import time
from dataclasses import dataclass

import requests
from PIL import Image

from .errors import DimensionViolation, ProtocolError, Timeout, Unreachable

logger = logging.getLogger(__name__)

TOKEN_ENV = "BGFORGE_REMOTE_TOKEN"
INPAINT_PATH = "/v1/inpaint"
HEALTH_PATH = "/v1/health"


@dataclass(frozen=True)
class InpaintJob:
    image: bytes  # PNG
    mask: bytes  # PNG, 8-bit gray; 255 = regenerate, 0 = preserve
    prompt: str
    steps: int
    guidance_scale: float
    seed: int
    width: int
    height: int


@dataclass(frozen=True)
class InpaintResult:
    image: bytes  # PNG
    backend_info: str
    wall_time_ms: float


@dataclass(frozen=True)
class BackendDescriptor:
    model: str
    latent_factor: int
    max_steps: int


def _png_size(data: bytes) -> tuple:
    with Image.open(io.BytesIO(data)) as img:
        return img.size  # (width, height)


def validate_job(job: InpaintJob):
    if job.steps < 1:
        raise DimensionViolation(f"steps must be >= 1, got {job.steps}")
    iw, ih = _png_size(job.image)
    mw, mh = _png_size(job.mask)
    if (iw, ih) != (job.width, job.height):
        raise DimensionViolation(f"image is {iw}x{ih}, job says {job.width}x{job.height}")
    if (mw, mh) != (iw, ih):
        raise DimensionViolation(f"mask {mw}x{mh} does not match image {iw}x{ih}")


def encode_request(job: InpaintJob) -> bytes:
    payload = {
        "guidance_scale": job.guidance_scale,
        "height": job.height,
        "image": base64.b64encode(job.image).decode("ascii"),
        "mask": base64.b64encode(job.mask).decode("ascii"),
        "prompt": job.prompt,
        "seed": job.seed,
        "steps": job.steps,
        "width": job.width,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _headers() -> dict:
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    return headers


def _parse_result(body: bytes, job: InpaintJob) -> InpaintResult:
    try:
        payload = json.loads(body)
        image_b64 = payload["image"]
        backend_info = str(payload["backend_info"])
        wall_ms = float(payload.get("wall_ms", 0.0))
        image = base64.b64decode(image_b64, validate=True)
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(200, f"unparseable success body: {exc}") from exc
    w, h = _png_size(image)
    if (w, h) != (job.width, job.height):
        raise DimensionViolation(f"result is {w}x{h}, expected {job.width}x{job.height}")
    return InpaintResult(image=image, backend_info=backend_info, wall_time_ms=wall_ms)


def submit(
    job: InpaintJob,
    endpoint: str,
    timeout: float = 60.0,
    retries: int = 3,
    backoff: float = 0.5,
    session: requests.Session | None = None,
) -> InpaintResult:
    """POST the job; retry transient failures (5xx, connection trouble) with exponential backoff."""
    validate_job(job)
    body = encode_request(job)
    url = endpoint.rstrip("/") + INPAINT_PATH
    http = session or requests.Session()
    last_transient = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff * 2 ** (attempt - 1))
        try:
            response = http.post(url, data=body, headers=_headers(), timeout=timeout)
        except requests.Timeout as exc:
            last_transient = Timeout(f"no response from {url} within {timeout}s")
            last_transient.__cause__ = exc
            continue
        except requests.ConnectionError as exc:
            last_transient = Unreachable(f"cannot reach {url}: {exc}")
            last_transient.__cause__ = exc
            continue
        if 500 <= response.status_code < 600:
            logger.warning("transient %d from %s (attempt %d)", response.status_code, url, attempt + 1)
            last_transient = ProtocolError(response.status_code, response.text)
            continue
        if response.status_code != 200:
            raise ProtocolError(response.status_code, response.text)
        return _parse_result(response.content, job)
    raise last_transient


def healthcheck(endpoint: str, timeout: float = 10.0, session: requests.Session | None = None) -> BackendDescriptor:
    url = endpoint.rstrip("/") + HEALTH_PATH
    http = session or requests.Session()
    try:
        response = http.get(url, headers=_headers(), timeout=timeout)
    except (requests.Timeout, requests.ConnectionError) as exc:
        raise Unreachable(f"cannot reach {url}: {exc}") from exc
    if response.status_code != 200:
        raise ProtocolError(response.status_code, response.text)
    try:
        payload = response.json()
        return BackendDescriptor(
            model=str(payload["model"]),
            latent_factor=int(payload["latent_factor"]),
            max_steps=int(payload["max_steps"]),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise ProtocolError(200, f"malformed health body: {response.text}") from exc


class RemoteBackend:
    """Pipeline-facing wrapper owning a connection pool for one endpoint."""

    def __init__(self, endpoint: str, timeout: float = 60.0, retries: int = 3, backoff: float = 0.5):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._session = requests.Session()

    def healthcheck(self) -> BackendDescriptor:
        return healthcheck(self.endpoint, timeout=min(self.timeout, 10.0), session=self._session)

    def run(self, job: InpaintJob) -> InpaintResult:
        return submit(
            job,
            self.endpoint,
            timeout=self.timeout,
            retries=self.retries,
            backoff=self.backoff,
            session=self._session,
        )

    def metadata(self) -> dict:
        desc = self.healthcheck()
        return {"kind": f"remote:{desc.model}", "latent_factor": desc.latent_factor}
