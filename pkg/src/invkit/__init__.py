"""invkit: forward models, classical and learned reconstruction for imaging inverse problems."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
