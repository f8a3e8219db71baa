"""Screw primitives, part-aware Gaussians and joint-angle vectors.

Parameters are stored unconstrained (logits, log-scales, raw 6-vectors) and
mapped into their valid ranges by the properties below.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.spatial import cKDTree
from torch import nn

from screwsplat.config import DTYPE, InitConfig
from screwsplat.errors import DegenerateAxisError, InvalidConfigError
from screwsplat.kinematics import (
    normalize_raw_axes,
    normalize_screw,
    quaternion_multiply,
    quaternion_to_rotation,
    screw_exp_batch,
    screw_quaternion,
)
from screwsplat.models import GaussianRecord, JointType, ModelDocument, ScrewAxis, ScrewRecord

logger = logging.getLogger(__name__)

RENDER_THRESHOLD = 0.1

GAUSSIAN_PARAMS = (
    "positions",
    "quaternions",
    "log_scales",
    "opacity_logits",
    "colors",
    "part_logits",
)
SCREW_PARAMS = ("raw_axes", "confidence_logits")
PARAM_NAMES = GAUSSIAN_PARAMS + SCREW_PARAMS + ("thetas",)


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class RenderGaussians:
    """Replicated Gaussians ready for projection, one row per replica."""

    positions: torch.Tensor
    rotations: torch.Tensor
    scales: torch.Tensor
    opacities: torch.Tensor
    colors: torch.Tensor
    source: torch.Tensor
    part: torch.Tensor

    def __len__(self) -> int:
        return self.positions.shape[0]

    def covariances(self) -> torch.Tensor:
        return covariance(self.rotations, self.scales)


def covariance(rotations: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """Sigma = R diag(s)^2 R^T."""
    rs = rotations * scales.unsqueeze(-2)
    return rs @ rs.transpose(-1, -2)


class ArticulatedSplatModel(nn.Module):
    def __init__(
        self,
        positions: torch.Tensor,
        quaternions: torch.Tensor,
        log_scales: torch.Tensor,
        opacity_logits: torch.Tensor,
        colors: torch.Tensor,
        part_logits: torch.Tensor,
        raw_axes: torch.Tensor,
        is_revolute: torch.Tensor,
        confidence_logits: torch.Tensor,
        thetas: torch.Tensor,
        background: torch.Tensor | None = None,
    ):
        super().__init__()
        self.positions = nn.Parameter(positions.to(DTYPE))
        self.quaternions = nn.Parameter(quaternions.to(DTYPE))
        self.log_scales = nn.Parameter(log_scales.to(DTYPE))
        self.opacity_logits = nn.Parameter(opacity_logits.to(DTYPE))
        self.colors = nn.Parameter(colors.to(DTYPE))
        self.part_logits = nn.Parameter(part_logits.to(DTYPE))
        self.raw_axes = nn.Parameter(raw_axes.to(DTYPE).reshape(-1, 6))
        self.confidence_logits = nn.Parameter(confidence_logits.to(DTYPE).reshape(-1))
        self.thetas = nn.Parameter(thetas.to(DTYPE))
        self.register_buffer("is_revolute", is_revolute.to(torch.bool).reshape(-1))
        if background is None:
            background = torch.zeros(3, dtype=DTYPE)
        self.register_buffer("background", background.to(DTYPE))

    # -- sizes --

    @property
    def n_gaussians(self) -> int:
        return self.positions.shape[0]

    @property
    def n_screws(self) -> int:
        return self.raw_axes.shape[0]

    @property
    def n_configs(self) -> int:
        return self.thetas.shape[0]

    # -- constrained views --

    @property
    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    @property
    def rotations(self) -> torch.Tensor:
        return quaternion_to_rotation(self.quaternions)

    @property
    def part_probs(self) -> torch.Tensor:
        return torch.softmax(self.part_logits, dim=-1)

    @property
    def confidences(self) -> torch.Tensor:
        return torch.sigmoid(self.confidence_logits)

    @property
    def axes(self) -> torch.Tensor:
        return normalize_raw_axes(self.raw_axes, self.is_revolute)

    def joint_types(self) -> list[JointType]:
        return [JointType.REVOLUTE if r else JointType.PRISMATIC for r in self.is_revolute.tolist()]

    def screw_axis(self, j: int) -> ScrewAxis:
        return normalize_screw(self.raw_axes[j].detach(), self.joint_types()[j])

    def screw_axes(self) -> list[ScrewAxis]:
        return [self.screw_axis(j) for j in range(self.n_screws)]

    def part_assignment(self) -> torch.Tensor:
        """argmax part per Gaussian: 0 static, j + 1 for screw j."""
        return torch.argmax(self.part_logits.detach(), dim=-1)

    def covariances(self) -> torch.Tensor:
        return covariance(self.rotations, self.scales)

    def parameter_dict(self) -> dict[str, nn.Parameter]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    # -- in-place maintenance --

    @torch.no_grad()
    def normalize_(self) -> None:
        """Project parameters back onto their constraint sets after an optimizer step."""
        self.quaternions.div_(torch.linalg.norm(self.quaternions, dim=-1, keepdim=True))
        raw = self.raw_axes
        rev = self.is_revolute
        if rev.any():
            raw[rev, :3] = raw[rev, :3] / torch.linalg.norm(raw[rev, :3], dim=-1, keepdim=True)
        if (~rev).any():
            raw[~rev, 3:] = raw[~rev, 3:] / torch.linalg.norm(raw[~rev, 3:], dim=-1, keepdim=True)
        self.colors.clamp_(0.0, 1.0)

    def _replace(self, name: str, value: torch.Tensor) -> None:
        setattr(self, name, nn.Parameter(value.detach().clone()))

    @torch.no_grad()
    def keep_gaussians(self, mask: torch.Tensor) -> torch.Tensor:
        """Drop Gaussians where mask is False; returns the kept indices."""
        index = torch.nonzero(mask, as_tuple=False).reshape(-1)
        for name in GAUSSIAN_PARAMS:
            self._replace(name, getattr(self, name)[index])
        return index

    @torch.no_grad()
    def remove_screws(self, remove: torch.Tensor, merge: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Remove screws flagged in `remove`.

        Part mass of screws flagged in `merge` moves into the static slot; mass
        of the other removed screws is dropped and the simplex renormalizes.
        Returns (kept screw indices, kept part-logit columns).
        """
        keep = torch.nonzero(~remove, as_tuple=False).reshape(-1)
        logits = self.part_logits.detach().clone()
        merged_cols = torch.nonzero(merge & remove, as_tuple=False).reshape(-1) + 1
        if merged_cols.numel():
            stacked = torch.cat([logits[:, :1], logits[:, merged_cols]], dim=1)
            logits[:, 0] = torch.logsumexp(stacked, dim=1)
        columns = torch.cat([torch.zeros(1, dtype=torch.long), keep + 1])
        self._replace("part_logits", logits[:, columns])
        self._replace("raw_axes", self.raw_axes[keep])
        self._replace("confidence_logits", self.confidence_logits[keep])
        self._replace("thetas", self.thetas[:, keep])
        self.is_revolute = self.is_revolute[keep]
        return keep, columns

    @torch.no_grad()
    def move_gaussians_(self, axes: torch.Tensor, theta: torch.Tensor, index: torch.Tensor | None = None) -> None:
        """T_i <- exp([S_i] theta_i) T_i for the selected Gaussians."""
        if index is None:
            index = torch.arange(self.n_gaussians)
        rotation, translation = screw_exp_batch(axes, theta)
        mu = self.positions[index]
        self.positions[index] = (rotation @ mu.unsqueeze(-1)).squeeze(-1) + translation
        q = quaternion_multiply(screw_quaternion(axes, theta), self.quaternions[index])
        self.quaternions[index] = q / torch.linalg.norm(q, dim=-1, keepdim=True)

    # -- serialization --

    def to_document(self) -> ModelDocument:
        types = self.joint_types()
        return ModelDocument(
            background=tuple(self.background.tolist()),
            screws=[
                ScrewRecord(raw_axis=tuple(raw), joint_type=t, confidence_logit=c)
                for raw, t, c in zip(
                    self.raw_axes.detach().tolist(), types, self.confidence_logits.detach().tolist()
                )
            ],
            gaussians=[
                GaussianRecord(
                    position=tuple(p), rotation=tuple(q), log_scale=tuple(s),
                    opacity_logit=o, color=tuple(c), part_logits=m,
                )
                for p, q, s, o, c, m in zip(
                    self.positions.detach().tolist(),
                    self.quaternions.detach().tolist(),
                    self.log_scales.detach().tolist(),
                    self.opacity_logits.detach().tolist(),
                    self.colors.detach().tolist(),
                    self.part_logits.detach().tolist(),
                )
            ],
            joint_angles=self.thetas.detach().tolist(),
        )

    @classmethod
    def from_document(cls, doc: ModelDocument) -> "ArticulatedSplatModel":
        n_s = len(doc.screws)
        gs = doc.gaussians

        def table(rows, width):
            return torch.tensor(rows, dtype=DTYPE).reshape(-1, width)

        n_a = len(doc.joint_angles)
        return cls(
            positions=table([g.position for g in gs], 3),
            quaternions=table([g.rotation for g in gs], 4),
            log_scales=table([g.log_scale for g in gs], 3),
            opacity_logits=torch.tensor([g.opacity_logit for g in gs], dtype=DTYPE),
            colors=table([g.color for g in gs], 3),
            part_logits=table([g.part_logits for g in gs], n_s + 1),
            raw_axes=table([s.raw_axis for s in doc.screws], 6),
            is_revolute=torch.tensor([s.joint_type == JointType.REVOLUTE for s in doc.screws], dtype=torch.bool),
            confidence_logits=torch.tensor([s.confidence_logit for s in doc.screws], dtype=DTYPE),
            thetas=torch.tensor(doc.joint_angles, dtype=DTYPE).reshape(n_a, n_s),
            background=torch.tensor(doc.background, dtype=DTYPE),
        )

    def clone(self) -> "ArticulatedSplatModel":
        return ArticulatedSplatModel.from_document(self.to_document())


def save_model(model: ArticulatedSplatModel, path: str | Path) -> None:
    Path(path).write_text(model.to_document().model_dump_json(indent=1))


def load_model(path: str | Path) -> ArticulatedSplatModel:
    return ArticulatedSplatModel.from_document(ModelDocument.model_validate_json(Path(path).read_text()))


def _sample_raw_axis(generator: torch.Generator, half_range: float, joint_type: JointType) -> torch.Tensor:
    while True:
        raw = (torch.rand(6, generator=generator, dtype=DTYPE) * 2 - 1) * half_range
        try:
            normalize_screw(raw, joint_type)
        except DegenerateAxisError:
            continue
        if joint_type == JointType.REVOLUTE:
            raw[:3] /= torch.linalg.norm(raw[:3])
        else:
            raw[3:] /= torch.linalg.norm(raw[3:])
        return raw


def nearest_neighbor_scale(positions: torch.Tensor, k: int = 3, fallback: float = 0.01) -> torch.Tensor:
    """Mean distance to the k nearest other points, per point."""
    n = positions.shape[0]
    k = min(k, n - 1)
    if k <= 0:
        return torch.full((n,), fallback, dtype=DTYPE)
    dist, _ = cKDTree(positions.numpy()).query(positions.numpy(), k=k + 1)
    scale = np.maximum(dist[:, 1:].mean(axis=1), 1e-7)
    return torch.from_numpy(scale).to(DTYPE)


def init_model(cfg: InitConfig, seed: int) -> ArticulatedSplatModel:
    """Random initial model: uniform cube positions, uniform part simplices, 8+8 screws."""
    if cfg.n_gaussians <= 0 or cfg.n_configs <= 0:
        raise InvalidConfigError("n_gaussians and n_configs must be positive")
    g = torch.Generator().manual_seed(seed)
    n = cfg.n_gaussians
    positions = (torch.rand(n, 3, generator=g, dtype=DTYPE) * 2 - 1) * cfg.cube_half_width
    log_scales = torch.log(nearest_neighbor_scale(positions, fallback=0.01 * cfg.cube_half_width))
    quaternions = torch.zeros(n, 4, dtype=DTYPE)
    quaternions[:, 0] = 1.0
    colors = torch.rand(n, 3, generator=g, dtype=DTYPE)

    types = [JointType.REVOLUTE] * cfg.n_revolute + [JointType.PRISMATIC] * cfg.n_prismatic
    n_s = len(types)
    raw_axes = torch.stack(
        [_sample_raw_axis(g, cfg.axis_sample_range, t) for t in types]
    ) if n_s else torch.zeros(0, 6, dtype=DTYPE)

    model = ArticulatedSplatModel(
        positions=positions,
        quaternions=quaternions,
        log_scales=log_scales.unsqueeze(-1).repeat(1, 3),
        opacity_logits=torch.full((n,), logit(cfg.initial_opacity), dtype=DTYPE),
        colors=colors,
        part_logits=torch.zeros(n, n_s + 1, dtype=DTYPE),
        raw_axes=raw_axes,
        is_revolute=torch.tensor([t == JointType.REVOLUTE for t in types], dtype=torch.bool),
        confidence_logits=torch.full((n_s,), logit(cfg.initial_confidence), dtype=DTYPE),
        thetas=torch.zeros(cfg.n_configs, n_s, dtype=DTYPE),
        background=torch.tensor(cfg.background, dtype=DTYPE),
    )
    logger.debug("Initialized %d Gaussians and %d screws", n, n_s)
    return model


def replicate(
    model: ArticulatedSplatModel,
    k: int | None = None,
    theta: torch.Tensor | None = None,
    threshold: float = RENDER_THRESHOLD,
) -> RenderGaussians:
    """Replicate every Gaussian once per part.

    The static replica keeps pose T_i and opacity sigma_i m_i0; the replica of
    screw j moves to exp([S_j] theta_j) T_i with opacity sigma_i gamma_j m_ij.
    Screws with confidence below `threshold` emit no replicas.
    """
    if theta is None:
        theta = model.thetas[0 if k is None else k]
    theta = torch.as_tensor(theta, dtype=DTYPE)
    n = model.n_gaussians
    sigma = model.opacities
    m = model.part_probs
    rot = model.rotations
    scales = model.scales
    gamma = model.confidences
    active = torch.nonzero(gamma.detach() >= threshold, as_tuple=False).reshape(-1)

    positions = [model.positions]
    rotations = [rot]
    opacities = [sigma * m[:, 0]]
    parts = [torch.zeros(n, dtype=torch.long)]
    if active.numel():
        r_j, t_j = screw_exp_batch(model.axes[active], theta[active])
        positions.append(
            (torch.einsum("jab,nb->jna", r_j, model.positions) + t_j.unsqueeze(1)).reshape(-1, 3)
        )
        rotations.append(torch.einsum("jab,nbc->jnac", r_j, rot).reshape(-1, 3, 3))
        opacities.append((sigma.unsqueeze(0) * gamma[active].unsqueeze(1) * m[:, active + 1].T).reshape(-1))
        parts.append((active + 1).repeat_interleave(n))
    copies = 1 + active.numel()
    return RenderGaussians(
        positions=torch.cat(positions),
        rotations=torch.cat(rotations),
        scales=scales.repeat(copies, 1),
        opacities=torch.cat(opacities),
        colors=model.colors.repeat(copies, 1),
        source=torch.arange(n).repeat(copies),
        part=torch.cat(parts),
    )


@torch.no_grad()
def canonicalize(model: ArticulatedSplatModel, m: int) -> None:
    """Re-base poses and joint angles on configuration m.

    Each Gaussian moves along the screw of its argmax part by theta_m, then
    theta_m is subtracted from every configuration, so theta_m becomes zero.
    """
    theta_m = model.thetas[m].detach().clone()
    part = model.part_assignment()
    movable = torch.nonzero(part > 0, as_tuple=False).reshape(-1)
    if movable.numel():
        j = part[movable] - 1
        model.move_gaussians_(model.axes.detach()[j], theta_m[j], movable)
    model.thetas.sub_(theta_m)
