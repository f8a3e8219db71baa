"""Image losses and the parsimony regularizer."""

from collections.abc import Sequence

import torch
import torch.nn.functional as F

from screwsplat.config import DTYPE, LossConfig
from screwsplat.errors import ShapeMismatchError, TooSmallError

C1 = 0.01**2
C2 = 0.03**2


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_pair(a, b)
    return torch.mean(torch.abs(a - b))


def gaussian_window(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=DTYPE) - size // 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim_map(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    """Per-channel SSIM over the valid region; images are (H, W, C) in [0, 1]."""
    _check_pair(a, b)
    h, w = a.shape[0], a.shape[1]
    if h < window or w < window:
        raise TooSmallError(f"image {h}x{w} is smaller than the {window}x{window} SSIM window")
    channels = a.shape[2]
    kernel = gaussian_window(window, sigma).to(a.dtype).expand(channels, 1, window, window)
    x = a.permute(2, 0, 1).unsqueeze(0)
    y = b.permute(2, 0, 1).unsqueeze(0)

    def blur(t):
        return F.conv2d(t, kernel, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    mu_xx, mu_yy, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    var_x = blur(x * x) - mu_xx
    var_y = blur(y * y) - mu_yy
    cov = blur(x * y) - mu_xy
    num = (2 * mu_xy + C1) * (2 * cov + C2)
    den = (mu_xx + mu_yy + C1) * (var_x + var_y + C2)
    return (num / den).squeeze(0)


def ssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    # per-channel means first, then averaged over channels
    return ssim_map(a, b, window, sigma).mean(dim=(-2, -1)).mean()


def dssim(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> torch.Tensor:
    return (1.0 - ssim(a, b, window, sigma)) / 2.0


def render_loss(a: torch.Tensor, b: torch.Tensor, cfg: LossConfig | None = None) -> torch.Tensor:
    """(1 - lambda) L1 + lambda D-SSIM."""
    cfg = cfg or LossConfig()
    lam = cfg.lambda_dssim
    loss = (1.0 - lam) * l1(a, b)
    if lam > 0:
        loss = loss + lam * dssim(a, b, cfg.ssim_window, cfg.ssim_sigma)
    return loss


def parsimony(gammas: torch.Tensor | Sequence[float], beta: float) -> torch.Tensor:
    """beta * sum_j sqrt(gamma_j)."""
    gammas = torch.as_tensor(gammas, dtype=DTYPE)
    if beta == 0 or gammas.numel() == 0:
        return gammas.sum() * 0.0
    return beta * torch.sqrt(gammas).sum()
