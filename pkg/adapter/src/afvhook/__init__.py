"""Forward-hook bridge from pretrained torch models to AFV latent dumps."""

from .capture import (
    AttackUnavailableError,
    CaptureResult,
    LayerNotFoundError,
    capture,
    resolve_attack,
    weaken_params,
)
from .dumpfmt import write_dump

__version__ = "0.1.0"
__all__ = [
    "AttackUnavailableError",
    "CaptureResult",
    "LayerNotFoundError",
    "capture",
    "resolve_attack",
    "weaken_params",
    "write_dump",
]
