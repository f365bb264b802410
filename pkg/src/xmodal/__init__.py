"""Cross-modal alignment of pre-extracted audio and text embeddings."""
from ._jit import BACKEND

__all__ = ["BACKEND", "__version__"]

__version__ = "0.1.0"
