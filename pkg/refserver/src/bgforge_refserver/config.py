from dataclasses import dataclass

MODES = ("mirror", "real")
DEFAULT_MODEL = "stabilityai/stable-diffusion-2-inpainting"


@dataclass(frozen=True)
class ServerConfig:
    """Service settings; mirror mode requires no model weights."""

    mode: str = "mirror"
    model: str = DEFAULT_MODEL
    device: str = "cuda"
    max_jobs: int = 4
    max_steps: int = 50
    latent_factor: int = 8  # image-to-latent downscale of SD-class models

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_jobs < 1:
            raise ValueError(f"max_jobs must be >= 1, got {self.max_jobs}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")

    @property
    def model_name(self) -> str:
        """The identifier advertised by /v1/health."""
        return "mirror" if self.mode == "mirror" else self.model
