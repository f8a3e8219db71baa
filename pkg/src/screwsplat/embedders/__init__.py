"""Image embedders used by goal-directed control."""

from .base import Embedder
from .toy import ToyEmbedder

__all__ = ["Embedder", "ToyEmbedder"]
