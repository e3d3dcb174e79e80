"""Generative sampling of degenerate ground spaces with parameterized circuits."""
__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    CapabilityError,
    ConfigError,
    ContractError,
    MissingCacheError,
    TrainingDiverged,
)

__all__ = [
    "CapabilityError",
    "ConfigError",
    "ContractError",
    "MissingCacheError",
    "TrainingDiverged",
    "__version__",
]
