"""Geometry, motion and appearance metrics for fitted models."""

import itertools
import logging
import math
from collections.abc import Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from screwsplat.config import DTYPE
from screwsplat.errors import EmptySelectionError, EmptySetError, ShapeMismatchError, TypeMismatchError
from screwsplat.kinematics import line_line_distance, screw_exp_batch
from screwsplat.losses import ssim
from screwsplat.models import AxisMatch, EvalReport, Observation, ScrewAxis
from screwsplat.renderer import render_model
from screwsplat.splat_model import ArticulatedSplatModel

logger = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 6
UNMATCHABLE = 1e6
MIN_MSE = 1e-12

PartSelector = str | int


# -- geometry --


@torch.no_grad()
def posed_gaussians(model: ArticulatedSplatModel, k: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    """Means and rotation matrices with every Gaussian moved along its argmax part at theta_k."""
    positions = model.positions.detach().clone()
    rotations = model.rotations.detach().clone()
    part = model.part_assignment()
    movable = torch.nonzero(part > 0, as_tuple=False).reshape(-1)
    if movable.numel() and model.n_configs:
        j = part[movable] - 1
        r, t = screw_exp_batch(model.axes.detach()[j], model.thetas.detach()[k, j])
        positions[movable] = (r @ positions[movable].unsqueeze(-1)).squeeze(-1) + t
        rotations[movable] = r @ rotations[movable]
    return positions, rotations


def sample_points(
    model: ArticulatedSplatModel,
    part: PartSelector,
    n: int = 2048,
    seed: int = 0,
    k: int = 0,
) -> np.ndarray:
    """Draw n points from the model's Gaussians posed at configuration k.

    `part` is "static", "whole" or a screw index j. Gaussians are chosen with
    probability proportional to opacity times the selected part mass, then a
    point is drawn uniformly from the chosen Gaussian's 1-sigma ellipsoid.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    with torch.no_grad():
        sigma = model.opacities.detach()
        probs = model.part_probs.detach()
        assignment = model.part_assignment()
        if part == "whole":
            weight = sigma
        elif part == "static":
            weight = sigma * probs[:, 0] * (assignment == 0)
        else:
            j = int(part)
            weight = sigma * probs[:, j + 1] * (assignment == j + 1)
        weight = weight.numpy()
    total = weight.sum()
    if total <= 0:
        raise EmptySelectionError(f"no Gaussian carries mass for part {part!r}")
    positions, rotations = posed_gaussians(model, k)
    scales = model.scales.detach().numpy()
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(weight), size=n, p=weight / total)
    direction = rng.normal(size=(n, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.random(n) ** (1.0 / 3.0)
    local = direction * radius[:, None] * scales[chosen]
    offsets = np.einsum("nab,nb->na", rotations.numpy()[chosen], local)
    return positions.numpy()[chosen] + offsets


def chamfer(p: np.ndarray, q: np.ndarray) -> float:
    """Bi-directional mean squared nearest-neighbour distance."""
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0 or len(q) == 0:
        raise EmptySetError("chamfer distance needs two nonempty point sets")
    d_pq, _ = cKDTree(q).query(p)
    d_qp, _ = cKDTree(p).query(q)
    return float(np.mean(d_pq**2) + np.mean(d_qp**2))


# -- motion --


def angular_error(a: ScrewAxis, b: ScrewAxis) -> float:
    """Angle between axis directions in degrees, in [0, 90]."""
    if a.joint_type != b.joint_type:
        raise TypeMismatchError(f"cannot compare {a.joint_type.value} and {b.joint_type.value} axes")
    cos = abs(float(a.direction() @ b.direction()))
    return math.degrees(math.acos(min(cos, 1.0)))


def position_error(a: ScrewAxis, b: ScrewAxis) -> float:
    return line_line_distance(a, b)


def pair_cost(a: ScrewAxis, b: ScrewAxis) -> float:
    if a.joint_type != b.joint_type:
        return math.inf
    cost = angular_error(a, b) / 180.0
    if a.is_revolute:
        cost += position_error(a, b)
    return cost


def _exhaustive(cost: np.ndarray) -> list[tuple[int, int]]:
    n_gt, n_pred = cost.shape
    best: tuple[int, float, list[tuple[int, int]]] = (0, 0.0, [])
    options = [None, *range(n_pred)]
    for choice in itertools.product(options, repeat=n_gt):
        picked = [c for c in choice if c is not None]
        if len(set(picked)) != len(picked):
            continue
        pairs = [(i, c) for i, c in enumerate(choice) if c is not None]
        if any(not np.isfinite(cost[i, c]) for i, c in pairs):
            continue
        total = float(sum(cost[i, c] for i, c in pairs))
        if len(pairs) > best[0] or (len(pairs) == best[0] and total < best[1]):
            best = (len(pairs), total, pairs)
    return best[2]


def match_axes(gt: Sequence[ScrewAxis], pred: Sequence[ScrewAxis]) -> list[AxisMatch]:
    """Minimum-cost bipartite matching of predicted to ground-truth axes.

    Maximizes the number of same-type pairs first, then minimizes the summed
    cost ang/180 (+ pos for revolute axes). One entry per GT axis.
    """
    cost = np.array([[pair_cost(g, p) for p in pred] for g in gt], dtype=np.float64).reshape(len(gt), len(pred))
    if len(gt) <= EXHAUSTIVE_LIMIT and len(pred) <= EXHAUSTIVE_LIMIT:
        pairs = _exhaustive(cost)
    else:
        finite = np.where(np.isfinite(cost), cost, UNMATCHABLE)
        rows, cols = linear_sum_assignment(finite)
        pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if np.isfinite(cost[i, j])]
    by_gt = dict(pairs)
    matches = []
    for i, g in enumerate(gt):
        j = by_gt.get(i)
        if j is None:
            matches.append(AxisMatch(gt_index=i, pred_index=None))
            continue
        p = pred[j]
        matches.append(
            AxisMatch(
                gt_index=i,
                pred_index=j,
                ang_err=angular_error(g, p),
                pos_err=position_error(g, p) if g.is_revolute else None,
            )
        )
    return matches


def matching_cost(matches: Sequence[AxisMatch]) -> float:
    total = 0.0
    for m in matches:
        if m.pred_index is None:
            continue
        total += m.ang_err / 180.0 + (m.pos_err or 0.0)
    return total


# -- appearance --


def psnr(a: torch.Tensor, b: torch.Tensor) -> float:
    """-10 log10(MSE) on the [0, 1] range; +inf when the images agree."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    mse = float(torch.mean((a.detach() - b.detach()) ** 2))
    if mse < MIN_MSE:
        return math.inf
    return -10.0 * math.log10(mse)


def ssim_metric(a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5) -> float:
    return float(ssim(a.detach(), b.detach(), window, sigma))


def midpoint_theta(model: ArticulatedSplatModel, i: int) -> torch.Tensor:
    """Fitted joint angles halfway between configurations i and i + 1."""
    thetas = model.thetas.detach()
    return 0.5 * (thetas[i] + thetas[i + 1])


@torch.no_grad()
def appearance(
    model: ArticulatedSplatModel,
    observations: Sequence[Observation],
    midpoint: bool = False,
) -> tuple[float, float]:
    """Mean PSNR and SSIM of renders against the observations.

    With midpoint=True, config_index i names the configuration halfway
    between training configurations i and i + 1.
    """
    if not observations:
        raise ValueError("no observations to score")
    psnrs, ssims = [], []
    for obs in observations:
        theta = midpoint_theta(model, obs.config_index) if midpoint else obs.config_index
        image = render_model(model, theta, obs.camera)
        psnrs.append(psnr(image, obs.image))
        window = min(11, obs.camera.width, obs.camera.height)
        window -= 1 - window % 2
        ssims.append(ssim_metric(image, obs.image, window))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def evaluate(
    pred: ArticulatedSplatModel,
    gt: ArticulatedSplatModel,
    gt_screws: Sequence[ScrewAxis] | None = None,
    holdout: Sequence[Observation] | None = None,
    n_points: int = 2048,
    seed: int = 0,
    object_name: str = "",
) -> EvalReport:
    """Compare a fitted model against ground truth, both posed at configuration 0."""
    gt_screws = list(gt_screws) if gt_screws is not None else gt.screw_axes()
    matches = match_axes(gt_screws, pred.screw_axes())

    def cd(pred_part, gt_part):
        try:
            return chamfer(
                sample_points(pred, pred_part, n_points, seed),
                sample_points(gt, gt_part, n_points, seed + 1),
            )
        except EmptySelectionError:
            return None

    report = EvalReport(
        object_name=object_name,
        cd_static=cd("static", "static"),
        cd_movable=[None if m.pred_index is None else cd(m.pred_index, m.gt_index) for m in matches],
        cd_whole=cd("whole", "whole"),
        ang_err=[m.ang_err for m in matches if m.ang_err is not None],
        pos_err=[m.pos_err for m in matches if m.pos_err is not None],
        n_predicted_screws=pred.n_screws,
        matching=matches,
    )
    if holdout:
        report.psnr, report.ssim = appearance(pred, holdout, midpoint=True)
    logger.info("Evaluated %s: %d/%d axes matched", object_name or "model", len(report.ang_err), len(gt_screws))
    return report
