"""Using a fitted model as a renderer: state estimation, goal control, trajectory planning."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from screwsplat.bayesopt import SearchSpace, bayes_opt
from screwsplat.config import DTYPE, ControlConfig, LossConfig
from screwsplat.embedders import Embedder
from screwsplat.errors import (
    DeadScrewError,
    DegenerateGoalError,
    EmptyObservationsError,
    EmptyPartError,
    OutOfLimitsError,
    ShapeMismatchError,
)
from screwsplat.kinematics import screw_exp_batch
from screwsplat.losses import render_loss
from screwsplat.models import Camera, Trajectory
from screwsplat.renderer import render_model
from screwsplat.splat_model import RENDER_THRESHOLD, ArticulatedSplatModel

logger = logging.getLogger(__name__)

DEGENERATE_LOSS = 2.0
MIN_SHIFT = 1e-9
LIMIT_TOL = 1e-9

View = tuple[Camera, torch.Tensor]


@dataclass
class GoalSpec:
    """Per-camera current images and unit goal directions in embedding space."""

    cameras: list[Camera]
    current_images: list[torch.Tensor]
    current_embeddings: list[torch.Tensor]
    goal_deltas: list[torch.Tensor]

    @classmethod
    def from_exemplars(
        cls,
        cameras: Sequence[Camera],
        current_images: Sequence[torch.Tensor],
        goal_images: Sequence[torch.Tensor],
        embedder: Embedder,
    ) -> "GoalSpec":
        """Goal direction = embed(goal exemplar) - embed(current image), per camera."""
        if not (len(cameras) == len(current_images) == len(goal_images)) or not cameras:
            raise ShapeMismatchError("need one current and one goal image per camera")
        embeddings, deltas = [], []
        with torch.no_grad():
            currents = embedder.embed_batch(list(current_images))
            goals = embedder.embed_batch(list(goal_images))
            for e_c, e_g in zip(currents, goals):
                delta = e_g - e_c
                norm = torch.linalg.norm(delta)
                if norm < MIN_SHIFT:
                    raise DegenerateGoalError("goal exemplar embeds onto the current image")
                embeddings.append(e_c)
                deltas.append(delta / norm)
        return cls(list(cameras), list(current_images), embeddings, deltas)


def _theta(theta) -> torch.Tensor:
    return torch.as_tensor(np.asarray(theta, dtype=np.float64) if not torch.is_tensor(theta) else theta, dtype=DTYPE)


def directional_terms(theta: torch.Tensor, model: ArticulatedSplatModel, goal: GoalSpec, embedder: Embedder) -> torch.Tensor:
    """Differentiable mean of 1 - cos(Delta I(theta), Delta T) over the goal cameras."""
    terms = []
    rendered = embedder.embed_batch([render_model(model, theta, cam) for cam in goal.cameras])
    for e_i, e_c, delta_t in zip(rendered, goal.current_embeddings, goal.goal_deltas):
        delta_i = e_i - e_c
        norm = torch.linalg.norm(delta_i)
        if norm < MIN_SHIFT:
            terms.append(torch.tensor(DEGENERATE_LOSS, dtype=DTYPE))
        else:
            terms.append(1.0 - torch.dot(delta_i / norm, delta_t))
    return torch.stack(terms).mean()


def directional_loss(theta, model: ArticulatedSplatModel, goal: GoalSpec, embedder: Embedder) -> float:
    with torch.no_grad():
        return float(directional_terms(_theta(theta), model, goal, embedder))


def similarity_loss(
    theta,
    model: ArticulatedSplatModel,
    goal_images: Sequence[torch.Tensor],
    cameras: Sequence[Camera],
    embedder: Embedder,
) -> float:
    """Mean 1 - cos(embed(render), embed(goal)); the non-directional alternative."""
    theta = _theta(theta)
    with torch.no_grad():
        terms = [
            1.0 - float(torch.dot(embedder(render_model(model, theta, cam)), embedder(goal)))
            for cam, goal in zip(cameras, goal_images)
        ]
    return float(np.mean(terms))


def estimate_loss(
    theta,
    model: ArticulatedSplatModel,
    observations: Sequence[View],
    loss_cfg: LossConfig | None = None,
) -> float:
    """Mean render loss of pi(theta) against (camera, image) views of the current state."""
    if not observations:
        raise EmptyObservationsError("state estimation needs at least one view")
    theta = _theta(theta)
    with torch.no_grad():
        losses = [float(render_loss(render_model(model, theta, cam), image, loss_cfg)) for cam, image in observations]
    return float(np.mean(losses))


def search_space(model: ArticulatedSplatModel) -> SearchSpace:
    return SearchSpace.from_thetas(model.thetas.detach().numpy())


def estimate_state(
    model: ArticulatedSplatModel,
    observations: Sequence[View],
    seed: int = 0,
    cfg: ControlConfig | None = None,
    loss_cfg: LossConfig | None = None,
) -> np.ndarray:
    """Current joint angles by BO over the estimate loss within the fitted joint limits."""
    cfg = cfg or ControlConfig()
    if not observations:
        raise EmptyObservationsError("state estimation needs at least one view")
    if model.n_screws == 0:
        return np.zeros(0)
    result = bayes_opt(
        lambda x: estimate_loss(x, model, observations, loss_cfg),
        search_space(model),
        n_calls=cfg.n_calls,
        n_random=cfg.n_random,
        seed=seed,
        n_candidates=cfg.n_candidates,
        noise=cfg.noise,
    )
    logger.info("Estimated joint state %s (loss %.5f)", np.round(result.x, 4).tolist(), result.value)
    return result.x


def control_to_goal(
    model: ArticulatedSplatModel,
    goal: GoalSpec,
    embedder: Embedder,
    seed: int = 0,
    cfg: ControlConfig | None = None,
) -> np.ndarray:
    """Joint angles whose render moves in the goal direction, by BO over the directional loss."""
    cfg = cfg or ControlConfig()
    if model.n_screws == 0:
        return np.zeros(0)
    result = bayes_opt(
        lambda x: directional_loss(x, model, goal, embedder),
        search_space(model),
        n_calls=cfg.n_calls,
        n_random=cfg.n_random,
        seed=seed,
        n_candidates=cfg.n_candidates,
        noise=cfg.noise,
    )
    logger.info("Goal joint state %s (loss %.5f)", np.round(result.x, 4).tolist(), result.value)
    return result.x


def gradient_descent_to_goal(
    model: ArticulatedSplatModel,
    goal: GoalSpec,
    embedder: Embedder,
    theta0,
    steps: int = 50,
    lr: float = 0.05,
) -> np.ndarray:
    """Adam on theta through the renderer and embedder, clipped to the fitted limits."""
    space = search_space(model)
    lower = torch.tensor(space.lower, dtype=DTYPE)
    upper = torch.tensor(space.upper, dtype=DTYPE)
    theta = torch.nn.Parameter(_theta(theta0).clone())
    optimizer = torch.optim.Adam([theta], lr=lr)
    best_x, best_y = theta.detach().clone(), float("inf")
    for _ in range(steps):
        optimizer.zero_grad(set_to_none=True)
        loss = directional_terms(theta, model, goal, embedder)
        if float(loss) < best_y:
            best_x, best_y = theta.detach().clone(), float(loss)
        if loss.requires_grad:
            loss.backward()
            optimizer.step()
        with torch.no_grad():
            theta.copy_(torch.maximum(torch.minimum(theta, upper), lower))
    final = directional_loss(theta.detach(), model, goal, embedder)
    if final < best_y:
        best_x = theta.detach().clone()
    return best_x.numpy()


def goal_reached(theta, target, space: SearchSpace, tol: float = 0.1) -> bool:
    """True if every joint is within tol times its range of the target."""
    theta = np.asarray(theta, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    span = space.span()
    free = span > 0
    return bool(np.all(np.abs(theta - target)[free] <= tol * span[free]))


def affordance_point(model: ArticulatedSplatModel, j: int, robot_base=(0.0, -2.0, 0.0)) -> np.ndarray:
    """Representative contact point on the part moved by screw j.

    Revolute: centroid of part Gaussians at or beyond the 90th percentile of
    distance to the axis. Prismatic: centroid of those at or below the 20th
    percentile of |axis coordinate| measured from the robot base.
    """
    members = torch.nonzero(model.part_assignment() == j + 1, as_tuple=False).reshape(-1)
    if members.numel() == 0:
        raise EmptyPartError(f"no Gaussian belongs to screw {j}")
    mu = model.positions.detach()[members].numpy()
    axis = model.screw_axis(j)
    if axis.is_revolute:
        w = axis.direction().numpy()
        rel = mu - axis.point().numpy()
        dist = np.linalg.norm(rel - np.outer(rel @ w, w), axis=1)
        subset = mu[dist >= np.quantile(dist, 0.9)]
    else:
        v = axis.direction().numpy()
        coord = np.abs((mu - np.asarray(robot_base)) @ v)
        subset = mu[coord <= np.quantile(coord, 0.2)]
    return subset.mean(axis=0)


def plan_trajectory(
    model: ArticulatedSplatModel,
    j: int,
    theta_c: float,
    theta_t: float,
    offset: float = 0.05,
    n_steps: int = 20,
    grip_orientation=None,
    robot_base=(0.0, -2.0, 0.0),
    theta_ref: float = 0.0,
) -> Trajectory:
    """Tip path along screw j from just before theta_c to theta_t.

    tips[i] = exp([S] t_i) exp(-[S] theta_ref) p for t_i evenly spaced in
    [theta_c - offset * sign(theta_t - theta_c), theta_t].
    """
    if not 0 <= j < model.n_screws or float(model.confidences[j]) < RENDER_THRESHOLD:
        raise DeadScrewError(f"screw {j} is not an active screw of this model")
    if n_steps < 2:
        raise ValueError("a trajectory needs at least 2 steps")
    space = search_space(model)
    lo, hi = space.lower[j], space.upper[j]
    for name, value in (("theta_c", theta_c), ("theta_t", theta_t)):
        if not lo - LIMIT_TOL <= value <= hi + LIMIT_TOL:
            raise OutOfLimitsError(f"{name}={value} outside joint limits [{lo}, {hi}]")

    p = torch.as_tensor(affordance_point(model, j, robot_base), dtype=DTYPE)
    start = theta_c - offset * float(np.sign(theta_t - theta_c))
    samples = torch.linspace(start, theta_t, n_steps, dtype=DTYPE)
    axis = model.screw_axis(j).as_tensor()
    r_ref, t_ref = screw_exp_batch(axis, torch.tensor(-theta_ref, dtype=DTYPE))
    p_rest = r_ref @ p + t_ref
    r, t = screw_exp_batch(axis.expand(n_steps, 6), samples)
    tips = (r @ p_rest).reshape(n_steps, 3) + t
    rotation = np.eye(3) if grip_orientation is None else np.asarray(grip_orientation, dtype=np.float64)
    tip_list = [tuple(row) for row in tips.tolist()]
    return Trajectory(
        screw_index=j,
        affordance_point=tuple(p.tolist()),
        theta_samples=samples.tolist(),
        tip_points=tip_list,
        gripper_rotation=tuple(tuple(row) for row in rotation.tolist()),
        gripper_translations=tip_list,
    )
