"""Complex-diffusion processes: sample them, solve their PDEs, cross-check the two."""

from .errors import (
    BoundViolationError,
    ConfigError,
    CwienerError,
    IllPosedError,
    InvalidSpecError,
    NumericalGuardError,
)
from .noise import DiffusionConstant, ParticleSpec, build_channel_covariance

__version__ = "0.1.0"

__all__ = [
    "BoundViolationError",
    "ConfigError",
    "CwienerError",
    "DiffusionConstant",
    "IllPosedError",
    "InvalidSpecError",
    "NumericalGuardError",
    "ParticleSpec",
    "build_channel_covariance",
    "__version__",
]
