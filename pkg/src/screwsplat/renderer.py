"""Projection and front-to-back alpha blending of Gaussians into RGB images.

Images are float tensors of shape (H, W, 3). Pixel (row r, column c) is
centered at pixel coordinate (c, r).
"""

import logging
from dataclasses import dataclass

import torch

from screwsplat.config import DTYPE
from screwsplat.errors import SingularCovarianceError
from screwsplat.models import Camera
from screwsplat.splat_model import ArticulatedSplatModel, RenderGaussians, replicate

logger = logging.getLogger(__name__)

NEAR_PLANE = 0.01
DILATION = 0.3
ALPHA_FLOOR = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4
FOOTPRINT_SIGMAS = 3.0
ROW_CHUNK = 4


@dataclass
class Splats2D:
    means: torch.Tensor
    covs: torch.Tensor
    depths: torch.Tensor
    opacities: torch.Tensor
    colors: torch.Tensor
    radii: torch.Tensor
    index: torch.Tensor

    def __len__(self) -> int:
        return self.means.shape[0]


def _empty_splats() -> Splats2D:
    z = torch.zeros(0, dtype=DTYPE)
    return Splats2D(
        means=z.reshape(0, 2), covs=z.reshape(0, 2, 2), depths=z, opacities=z,
        colors=z.reshape(0, 3), radii=z, index=torch.zeros(0, dtype=torch.long),
    )


def project(gaussians: RenderGaussians, cam: Camera) -> Splats2D:
    """EWA projection into the image plane.

    Gaussians behind the near plane or whose 3-sigma footprint misses the image
    are culled, i.e. absent from the result; `index` maps back to the input.
    """
    if len(gaussians) == 0:
        return _empty_splats()
    r_wc = cam.rotation_tensor()
    p_cam = (gaussians.positions - cam.position_tensor()) @ r_wc
    depth_ok = p_cam[:, 2].detach() > NEAR_PLANE
    idx = torch.nonzero(depth_ok, as_tuple=False).reshape(-1)
    if idx.numel() == 0:
        return _empty_splats()

    p = p_cam[idx]
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    means = torch.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], dim=-1)

    zero = torch.zeros_like(z)
    jac = torch.stack(
        [
            torch.stack([cam.fx / z, zero, -cam.fx * x / (z * z)], dim=-1),
            torch.stack([zero, cam.fy / z, -cam.fy * y / (z * z)], dim=-1),
        ],
        dim=-2,
    )
    m = jac @ r_wc.T
    cov3 = gaussians.covariances()[idx]
    covs = m @ cov3 @ m.transpose(-1, -2) + DILATION * torch.eye(2, dtype=DTYPE)

    with torch.no_grad():
        a, b, d = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 1]
        lam = 0.5 * (a + d) + torch.sqrt((0.5 * (a - d)) ** 2 + b * b)
        radii = FOOTPRINT_SIGMAS * torch.sqrt(lam)
        mx, my = means[:, 0], means[:, 1]
        inside = (
            (mx + radii >= 0) & (mx - radii <= cam.width - 1)
            & (my + radii >= 0) & (my - radii <= cam.height - 1)
        )
    keep = torch.nonzero(inside, as_tuple=False).reshape(-1)
    return Splats2D(
        means=means[keep],
        covs=covs[keep],
        depths=z[keep],
        opacities=gaussians.opacities[idx][keep],
        colors=gaussians.colors[idx][keep],
        radii=radii[keep],
        index=idx[keep],
    )


def _conics(covs: torch.Tensor) -> torch.Tensor:
    a, b, c, d = covs[:, 0, 0], covs[:, 0, 1], covs[:, 1, 0], covs[:, 1, 1]
    det = a * d - b * c
    if bool((det.detach() <= 0).any()):
        raise SingularCovarianceError("projected covariance is not invertible after dilation")
    return torch.stack([d / det, -b / det, a / det], dim=-1)


def render(splats: Splats2D, cam: Camera, background: torch.Tensor | None = None) -> torch.Tensor:
    """Composite splats front to back over the background.

    Per pixel, alpha_i = o_i exp(-d^T cov^-1 d / 2); alphas below 1/255 are
    skipped and accumulation stops once transmittance drops below 1e-4.
    """
    h, w = cam.height, cam.width
    if background is None:
        background = torch.zeros(3, dtype=DTYPE)
    background = background.to(DTYPE)
    if len(splats) == 0:
        return background.expand(h, w, 3).clone()

    order = torch.argsort(splats.depths.detach(), stable=True)
    means = splats.means[order]
    conics = _conics(splats.covs[order])
    opacities = splats.opacities[order]
    colors = splats.colors[order]
    radii = splats.radii[order]

    xs = torch.arange(w, dtype=DTYPE)
    rows = []
    for r0 in range(0, h, ROW_CHUNK):
        r1 = min(r0 + ROW_CHUNK, h)
        ys = torch.arange(r0, r1, dtype=DTYPE)
        with torch.no_grad():
            my = means[:, 1].detach()
            sel = torch.nonzero((my + radii >= r0) & (my - radii <= r1 - 1), as_tuple=False).reshape(-1)
        n_pix = (r1 - r0) * w
        if sel.numel() == 0:
            rows.append(background.expand(n_pix, 3))
            continue
        px = torch.stack(torch.meshgrid(ys, xs, indexing="ij"), dim=-1).reshape(-1, 2).flip(-1)
        d = px.unsqueeze(0) - means[sel].unsqueeze(1)
        con = conics[sel]
        power = -0.5 * (
            con[:, 0:1] * d[..., 0] ** 2
            + 2.0 * con[:, 1:2] * d[..., 0] * d[..., 1]
            + con[:, 2:3] * d[..., 1] ** 2
        )
        alpha = opacities[sel].unsqueeze(1) * torch.exp(power)
        alpha = torch.where(alpha.detach() >= ALPHA_FLOOR, alpha, torch.zeros_like(alpha))
        one_minus = 1.0 - alpha
        trans = torch.cat([torch.ones(1, n_pix, dtype=DTYPE), torch.cumprod(one_minus, dim=0)[:-1]], dim=0)
        alive = trans.detach() >= MIN_TRANSMITTANCE
        alpha = torch.where(alive, alpha, torch.zeros_like(alpha))
        weights = alpha * trans
        color = weights.T @ colors[sel]
        final_t = torch.prod(1.0 - alpha, dim=0)
        rows.append(color + final_t.unsqueeze(-1) * background)
    image = torch.cat(rows, dim=0).reshape(h, w, 3)
    return image.clamp(0.0, 1.0)


def render_gaussians(gaussians: RenderGaussians, cam: Camera, background: torch.Tensor | None = None) -> torch.Tensor:
    return render(project(gaussians, cam), cam, background)


def render_model(
    model: ArticulatedSplatModel,
    theta: torch.Tensor | int,
    cam: Camera,
) -> torch.Tensor:
    """I = pi(theta): replicate at theta (or at configuration index theta), project, blend."""
    if isinstance(theta, int):
        gaussians = replicate(model, k=theta)
    else:
        theta = torch.as_tensor(theta, dtype=DTYPE)
        if theta.numel() != model.n_screws:
            raise ValueError(f"theta has {theta.numel()} entries, model has {model.n_screws} screws")
        gaussians = replicate(model, theta=theta.reshape(-1))
    return render_gaussians(gaussians, cam, model.background)
