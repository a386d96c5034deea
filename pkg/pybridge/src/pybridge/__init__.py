"""Reference backend server: generation and fine-tuning over a small transformer runtime."""

__version__ = "0.1.0"

from .registry import ServedModelRegistry, UnknownModel
from .runtime import GenerationRuntime
from .server import create_app

__all__ = ["GenerationRuntime", "ServedModelRegistry", "UnknownModel", "create_app"]
