"""Single-shot execution shim for model-emitted Python code."""

from .runner import IMAGE_EXTENSIONS, run_request

__version__ = "0.1.0"

__all__ = ["IMAGE_EXTENSIONS", "run_request"]
