"""Per-image augmentation decisions: step budgets, prompts, and copy counts."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AllZeroRatios, DomainError

logger = logging.getLogger(__name__)

DEFAULT_PROMPT = "Generate a clean background"


@dataclass(frozen=True)
class PolicyConfig:
    max_steps: int = 50
    freedom: float = 0.5  # how far the step budget may shrink; must stay inside (0, 1)
    alpha: int = 1
    sampling_mode: str = "uniform"
    prompt_template: str = DEFAULT_PROMPT
    guidance_scale: float = 7.5
    erosion_kernel: int = 7

    def __post_init__(self):
        if self.max_steps < 1:
            raise DomainError(f"max_steps must be >= 1, got {self.max_steps}")
        if not (0.0 < self.freedom < 1.0):
            raise DomainError(f"freedom must lie strictly inside (0, 1), got {self.freedom}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be non-negative, got {self.alpha}")
        if self.sampling_mode not in ("uniform", "nonuniform"):
            raise DomainError(f"sampling_mode must be uniform or nonuniform, got {self.sampling_mode!r}")
        if self.guidance_scale < 0:
            raise DomainError(f"guidance_scale must be non-negative, got {self.guidance_scale}")
        if self.erosion_kernel < 1 or self.erosion_kernel % 2 == 0:
            raise DomainError(f"erosion_kernel must be a positive odd integer, got {self.erosion_kernel}")


def adaptive_steps(max_steps: int, freedom: float, ratio: float) -> int:
    """Shrink the step budget as the background fraction grows; round half up, floor at 1."""
    if max_steps < 1:
        raise DomainError(f"max_steps must be >= 1, got {max_steps}")
    if not (0.0 < freedom < 1.0):
        raise DomainError(f"freedom must lie strictly inside (0, 1), got {freedom}")
    if not (0.0 <= ratio <= 1.0):
        raise DomainError(f"ratio must lie in [0, 1], got {ratio}")
    raw = max_steps * (1.0 - freedom * ratio)
    return max(1, min(max_steps, int(math.floor(raw + 0.5))))


def _sanitize_prompt(template: str) -> str:
    cleaned = "".join(ch for ch in template if ch >= " " and ch != "\x7f")
    if cleaned != template:
        logger.warning("prompt template contained control characters; stripped")
    return cleaned


def prompt_for(image, cfg: PolicyConfig) -> str:
    """The template verbatim (sanitized); image content never leaks into the prompt."""
    return _sanitize_prompt(cfg.prompt_template)


def entry_seed(global_seed: int, image_id: int, copy_index: int) -> int:
    digest = hashlib.sha256(f"{global_seed}:{image_id}:{copy_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class PlanEntry:
    source_image_id: int
    copy_index: int
    seed: int
    prompt: str
    step_budget: int
    background_ratio: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "source_image_id": self.source_image_id,
                "copy_index": self.copy_index,
                "seed": self.seed,
                "prompt": self.prompt,
                "step_budget": self.step_budget,
                "background_ratio": self.background_ratio,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "PlanEntry":
        raw = json.loads(line)
        return cls(
            source_image_id=int(raw["source_image_id"]),
            copy_index=int(raw["copy_index"]),
            seed=int(raw["seed"]),
            prompt=str(raw["prompt"]),
            step_budget=int(raw["step_budget"]),
            background_ratio=float(raw["background_ratio"]),
        )


@dataclass(frozen=True)
class AugmentationPlan:
    entries: tuple = field(default_factory=tuple)

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.entries)

    @classmethod
    def from_jsonl(cls, text: str) -> "AugmentationPlan":
        entries = tuple(PlanEntry.from_json(line) for line in text.splitlines() if line.strip())
        return cls(entries)


def build_sampling_plan(
    images: Sequence[tuple], cfg: PolicyConfig, global_seed: int
) -> AugmentationPlan:
    """images: (image_id, background_ratio) pairs, in dataset order.

    Uniform mode gives every image exactly alpha copies.  Non-uniform mode draws
    alpha*N copies with replacement, weighting each image by its background ratio,
    so mostly-background scenes (small objects) are duplicated more often.
    """
    ids = [int(i) for i, _ in images]
    ratios = [float(r) for _, r in images]
    for r in ratios:
        if not (0.0 <= r <= 1.0):
            raise DomainError(f"background ratio must lie in [0, 1], got {r}")
    n = len(images)
    if cfg.alpha == 0 or n == 0:
        return AugmentationPlan(())

    if cfg.sampling_mode == "uniform":
        counts = [cfg.alpha] * n
    else:
        total_weight = sum(ratios)
        if total_weight == 0.0:
            raise AllZeroRatios("non-uniform sampling needs at least one non-zero background ratio")
        p = np.asarray(ratios, np.float64) / total_weight
        rng = np.random.default_rng(global_seed)
        draws = rng.choice(n, size=cfg.alpha * n, replace=True, p=p)
        counts = np.bincount(draws, minlength=n).tolist()

    prompt = _sanitize_prompt(cfg.prompt_template)
    entries = []
    for idx in range(n):
        budget = adaptive_steps(cfg.max_steps, cfg.freedom, ratios[idx])
        for copy_index in range(counts[idx]):
            entries.append(
                PlanEntry(
                    source_image_id=ids[idx],
                    copy_index=copy_index,
                    seed=entry_seed(global_seed, ids[idx], copy_index),
                    prompt=prompt,
                    step_budget=budget,
                    background_ratio=ratios[idx],
                )
            )
    seeds = [e.seed for e in entries]
    if len(set(seeds)) != len(seeds):
        raise DomainError("seed collision in plan; widen the per-entry hash")
    return AugmentationPlan(tuple(entries))
