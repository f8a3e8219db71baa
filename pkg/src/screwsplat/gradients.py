"""Training loss, its reverse-mode gradients, and a finite-difference check."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import torch

from screwsplat.config import LossConfig
from screwsplat.errors import InvalidStepError, NonFiniteLossError, ShapeMismatchError
from screwsplat.losses import parsimony, render_loss
from screwsplat.models import Observation
from screwsplat.renderer import render_model
from screwsplat.splat_model import PARAM_NAMES, ArticulatedSplatModel

logger = logging.getLogger(__name__)

ABS_FLOOR = 1e-6


class LossTerms(NamedTuple):
    total: torch.Tensor
    render: torch.Tensor
    parsimony: torch.Tensor


@dataclass
class ParamGradients:
    """One gradient tensor per parameter group, shaped like the live parameter."""

    grads: dict[str, torch.Tensor]

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.grads[name]

    def items(self):
        return self.grads.items()

    def all_finite(self) -> bool:
        return all(bool(torch.isfinite(g).all()) for g in self.grads.values())


def training_loss(
    model: ArticulatedSplatModel,
    batch: Sequence[Observation],
    loss_cfg: LossConfig | None = None,
) -> LossTerms:
    """L = sum over the batch of L_render + beta * sum_j sqrt(gamma_j)."""
    loss_cfg = loss_cfg or LossConfig()
    render = torch.zeros((), dtype=model.positions.dtype)
    for obs in batch:
        if tuple(obs.image.shape) != (obs.camera.height, obs.camera.width, 3):
            raise ShapeMismatchError(
                f"target image {tuple(obs.image.shape)} does not match camera "
                f"{obs.camera.height}x{obs.camera.width}"
            )
        image = render_model(model, obs.config_index, obs.camera)
        render = render + render_loss(image, obs.image, loss_cfg)
    pars = parsimony(model.confidences, loss_cfg.beta)
    return LossTerms(render + pars, render, pars)


def backward(
    model: ArticulatedSplatModel,
    batch: Sequence[Observation],
    loss_cfg: LossConfig | None = None,
) -> tuple[float, ParamGradients]:
    if not batch:
        raise ValueError("backward needs a nonempty batch")
    model.zero_grad(set_to_none=True)
    terms = training_loss(model, batch, loss_cfg)
    if not torch.isfinite(terms.total):
        raise NonFiniteLossError(f"loss is {float(terms.total)}")
    terms.total.backward()
    grads = {}
    for name, param in model.parameter_dict().items():
        g = param.grad
        grads[name] = torch.zeros_like(param) if g is None else g.detach().clone()
    return float(terms.total), ParamGradients(grads)


def relative_error(analytic: float, numeric: float) -> float:
    diff = abs(analytic - numeric)
    if diff <= ABS_FLOOR:
        return 0.0
    return diff / max(abs(analytic), abs(numeric))


def fd_errors(
    model: ArticulatedSplatModel,
    batch: Sequence[Observation],
    loss_cfg: LossConfig | None = None,
    h: float = 1e-4,
    sample: int = 8,
    seed: int = 0,
    gradients: ParamGradients | None = None,
) -> dict[str, float]:
    """Max relative error per parameter group over `sample` random entries of each.

    Central differences (L(p + h) - L(p - h)) / 2h are compared against
    `gradients`, or against backward() when none are given.
    """
    if h <= 0:
        raise InvalidStepError(f"finite-difference step must be positive, got {h}")
    if sample < 1:
        raise InvalidStepError("sample must be at least 1")
    if gradients is None:
        _, gradients = backward(model, batch, loss_cfg)
    g = torch.Generator().manual_seed(seed)
    errors: dict[str, float] = {}
    with torch.no_grad():
        for name in PARAM_NAMES:
            param = getattr(model, name)
            flat = param.view(-1)
            if flat.numel() == 0:
                continue
            picks = torch.randperm(flat.numel(), generator=g)[:sample].tolist()
            worst = 0.0
            for i in picks:
                original = float(flat[i])
                flat[i] = original + h
                plus = float(training_loss(model, batch, loss_cfg).total)
                flat[i] = original - h
                minus = float(training_loss(model, batch, loss_cfg).total)
                flat[i] = original
                numeric = (plus - minus) / (2 * h)
                analytic = float(gradients[name].reshape(-1)[i])
                worst = max(worst, relative_error(analytic, numeric))
            errors[name] = worst
    logger.debug("Finite-difference errors: %s", errors)
    return errors


def fd_check(
    model: ArticulatedSplatModel,
    batch: Sequence[Observation],
    loss_cfg: LossConfig | None = None,
    h: float = 1e-4,
    sample: int = 8,
    seed: int = 0,
    gradients: ParamGradients | None = None,
) -> float:
    errors = fd_errors(model, batch, loss_cfg, h, sample, seed, gradients)
    return max(errors.values(), default=0.0)
