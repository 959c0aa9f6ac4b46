"""Reference implementation of the bgforge inpainting wire protocol.

Two modes share one HTTP surface (see ../../docs/protocol.md): `mirror`
echoes the request image for integration tests without model weights,
`real` wraps an off-the-shelf latent-diffusion inpainting model.
"""

from .app import create_app, serve
from .config import ServerConfig

__all__ = ["ServerConfig", "create_app", "serve"]
__version__ = "0.1.0"
