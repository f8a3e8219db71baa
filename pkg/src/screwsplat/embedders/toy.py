"""Deterministic downsampling embedder."""

import torch
import torch.nn.functional as F

from screwsplat.embedders.base import Embedder


class ToyEmbedder(Embedder):
    """Bilinear downsample to size x size, flatten, subtract the mean, L2-normalize.

    Differentiable, so it also serves gradient-based goal search.
    """

    def __init__(self, size: int = 16):
        self.size = size

    def embed(self, image: torch.Tensor) -> torch.Tensor:
        x = image.permute(2, 0, 1).unsqueeze(0)
        x = F.interpolate(x, size=(self.size, self.size), mode="bilinear", align_corners=False)
        v = x.reshape(-1)
        v = v - v.mean()
        return v / torch.linalg.norm(v).clamp_min(1e-12)
