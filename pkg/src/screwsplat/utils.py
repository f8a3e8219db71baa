"""Utility functions."""

import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from screwsplat.config import DTYPE


def parse_size(text: str) -> tuple[int, int]:
    """Parse "WxH" into (width, height)."""
    match = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
    if not match:
        raise ValueError(f"size must look like 64x64, got {text!r}")
    width, height = int(match.group(1)), int(match.group(2))
    if width < 1 or height < 1:
        raise ValueError("size must be positive")
    return width, height


def parse_floats(text: str) -> list[float]:
    """Parse a comma-separated list such as "0.3,0.1"; empty text gives []."""
    text = text.strip()
    if not text:
        return []
    return [float(part) for part in text.split(",")]


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """round(255 * clamp(image, 0, 1)) as an (H, W, 3) uint8 array."""
    arr = image.detach().clamp(0.0, 1.0).numpy()
    return np.rint(arr * 255.0).astype(np.uint8)


def save_png(image: torch.Tensor, path: str | Path) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def load_png(path: str | Path) -> torch.Tensor:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr).to(DTYPE)
