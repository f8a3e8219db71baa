"""Abstract base for image embedders."""

from abc import ABC, abstractmethod

import torch


class Embedder(ABC):
    @abstractmethod
    def embed(self, image: torch.Tensor) -> torch.Tensor:
        """Map an (H, W, 3) image to a unit vector."""
        ...

    def embed_batch(self, images: list[torch.Tensor]) -> list[torch.Tensor]:
        """Embed several images. Default: sequential."""
        return [self.embed(image) for image in images]

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        return self.embed(image)
