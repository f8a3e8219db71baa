"""The fitting loop: Adam steps, periodic re-initialization, screw selection and pruning."""

import csv
import logging
import math
import tempfile
from collections import deque
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import torch

from screwsplat.config import FitConfig, InitConfig, LossConfig
from screwsplat.errors import EmptyObservationsError, NonFiniteLossError
from screwsplat.gradients import training_loss
from screwsplat.metrics import appearance
from screwsplat.models import Observation
from screwsplat.splat_model import (
    GAUSSIAN_PARAMS,
    RENDER_THRESHOLD,
    ArticulatedSplatModel,
    canonicalize,
    init_model,
    logit,
    save_model,
)

logger = logging.getLogger(__name__)

MIN_CONFIGS = 2
MIN_CAMERAS = 4
LOG_COLUMNS = ("iteration", "total", "render", "parsimony", "active_screws")


class LossRecord(NamedTuple):
    iteration: int
    total: float
    render: float
    parsimony: float
    active_screws: int


@dataclass
class TrainState:
    optimizer: torch.optim.Adam
    generator: torch.Generator
    iteration: int = 0
    history: deque = field(default_factory=lambda: deque(maxlen=1000))


@dataclass
class SelectionResult:
    low_confidence: list[int]
    short_interval: list[int]
    removed_gaussians: int

    @property
    def removed(self) -> list[int]:
        return sorted(self.low_confidence + self.short_interval)


def make_optimizer(model: ArticulatedSplatModel, cfg: FitConfig) -> torch.optim.Adam:
    groups = [
        {"params": [model.positions], "lr": cfg.lr_position, "name": "positions"},
        {"params": [model.quaternions], "lr": cfg.lr_rotation, "name": "quaternions"},
        {"params": [model.log_scales], "lr": cfg.lr_scale, "name": "log_scales"},
        {"params": [model.opacity_logits], "lr": cfg.lr_opacity, "name": "opacity_logits"},
        {"params": [model.colors], "lr": cfg.lr_color, "name": "colors"},
        {"params": [model.part_logits], "lr": cfg.lr_part_logits, "name": "part_logits"},
        {"params": [model.raw_axes], "lr": cfg.lr_raw_axis, "name": "raw_axes"},
        {"params": [model.confidence_logits], "lr": cfg.lr_confidence_logit, "name": "confidence_logits"},
        {"params": [model.thetas], "lr": cfg.lr_theta, "name": "thetas"},
    ]
    return torch.optim.Adam(groups, lr=0.0, betas=(0.9, 0.999), eps=1e-15)


def new_state(model: ArticulatedSplatModel, cfg: FitConfig) -> TrainState:
    return TrainState(
        optimizer=make_optimizer(model, cfg),
        generator=torch.Generator().manual_seed(cfg.seed),
        history=deque(maxlen=cfg.loss_history),
    )


def position_lr(iteration: int, cfg: FitConfig) -> float:
    """Log-linear decay from lr_position to lr_position_final."""
    t = min(max(iteration / cfg.iterations, 0.0), 1.0)
    return math.exp((1 - t) * math.log(cfg.lr_position) + t * math.log(cfg.lr_position_final))


def _group(optimizer: torch.optim.Optimizer, name: str) -> dict:
    for group in optimizer.param_groups:
        if group["name"] == name:
            return group
    raise KeyError(name)


def sync_optimizer(
    optimizer: torch.optim.Optimizer,
    model: ArticulatedSplatModel,
    selections: dict[str, tuple[int, torch.Tensor]] | None = None,
) -> None:
    """Point every group at the model's current tensors.

    Moment buffers of replaced parameters are sliced with `selections[name] =
    (dim, index)` so they stay aligned with the surviving rows or columns.
    """
    selections = selections or {}
    for group in optimizer.param_groups:
        old = group["params"][0]
        new = getattr(model, group["name"])
        if old is new:
            continue
        state = optimizer.state.pop(old, None)
        if state and group["name"] in selections:
            dim, index = selections[group["name"]]
            for key in ("exp_avg", "exp_avg_sq"):
                state[key] = state[key].index_select(dim, index).contiguous()
            optimizer.state[new] = state
        group["params"][0] = new


def reset_moments(optimizer: torch.optim.Optimizer, names: Sequence[str]) -> None:
    for name in names:
        param = _group(optimizer, name)["params"][0]
        state = optimizer.state.get(param)
        if state:
            state["exp_avg"].zero_()
            state["exp_avg_sq"].zero_()


def n_active(model: ArticulatedSplatModel) -> int:
    return int((model.confidences.detach() >= RENDER_THRESHOLD).sum())


def train_step(
    model: ArticulatedSplatModel,
    state: TrainState,
    minibatch: Sequence[Observation],
    loss_cfg: LossConfig | None = None,
) -> LossRecord:
    """One Adam step on the minibatch, then renormalization of quaternions and raw axes."""
    state.optimizer.zero_grad(set_to_none=True)
    terms = training_loss(model, minibatch, loss_cfg)
    if not torch.isfinite(terms.total):
        raise NonFiniteLossError(f"loss is {float(terms.total)} at iteration {state.iteration + 1}")
    terms.total.backward()
    state.optimizer.step()
    model.normalize_()
    state.iteration += 1
    record = LossRecord(
        state.iteration, float(terms.total), float(terms.render), float(terms.parsimony), n_active(model)
    )
    state.history.append(record)
    return record


@torch.no_grad()
def periodic_reset(model: ArticulatedSplatModel, state: TrainState, initial_confidence: float = 0.9) -> int:
    """Canonicalize on a random configuration m, then reset confidences and part simplices.

    Returns m.
    """
    m = int(torch.randint(model.n_configs, (1,), generator=state.generator))
    canonicalize(model, m)
    model.confidence_logits.fill_(logit(initial_confidence))
    model.part_logits.zero_()
    reset_moments(
        state.optimizer, ("positions", "quaternions", "part_logits", "confidence_logits", "thetas")
    )
    logger.info("Periodic reset at iteration %d, canonical configuration %d", state.iteration, m)
    return m


@torch.no_grad()
def opacity_reset(model: ArticulatedSplatModel, value: float = 0.05, state: TrainState | None = None) -> None:
    """sigma <- min(sigma, value)."""
    model.opacity_logits.clamp_(max=logit(value))
    if state is not None:
        reset_moments(state.optimizer, ("opacity_logits",))


def prune_transparent(model: ArticulatedSplatModel, state: TrainState | None, threshold: float = 0.005) -> int:
    """Remove Gaussians with sigma below threshold; returns how many went."""
    keep = model.opacities.detach() >= threshold
    removed = int((~keep).sum())
    if removed:
        index = model.keep_gaussians(keep)
        if state is not None:
            sync_optimizer(state.optimizer, model, {name: (0, index) for name in GAUSSIAN_PARAMS})
        logger.info("Pruned %d transparent Gaussians, %d left", removed, model.n_gaussians)
    return removed


@torch.no_grad()
def select_screws(
    model: ArticulatedSplatModel,
    cfg: FitConfig,
    state: TrainState | None = None,
    generator: torch.Generator | None = None,
) -> SelectionResult:
    """Drop low-confidence screws and screws that barely move.

    Criterion 1 (gamma < confidence_threshold) removes the screw along with
    Gaussians that belong to it (argmax part and mass > 0.5). Criterion 2
    (joint interval below the per-type threshold) re-bases the screw's
    Gaussians onto the static part at a randomly chosen observed angle.
    """
    if generator is None:
        generator = state.generator if state is not None else torch.Generator().manual_seed(cfg.seed)
    n_s = model.n_screws
    if n_s == 0:
        return SelectionResult([], [], 0)
    gamma = model.confidences
    thetas = model.thetas
    interval = thetas.max(dim=0).values - thetas.min(dim=0).values
    threshold = torch.where(
        model.is_revolute,
        torch.full_like(interval, cfg.interval_threshold_revolute),
        torch.full_like(interval, cfg.interval_threshold_prismatic),
    )
    low = gamma < cfg.confidence_threshold
    short = ~low & (interval < threshold)
    remove = low | short
    if not remove.any():
        return SelectionResult([], [], 0)

    part = model.part_assignment()
    probs = model.part_probs
    drop = torch.zeros(model.n_gaussians, dtype=torch.bool)
    for j in torch.nonzero(low, as_tuple=False).reshape(-1).tolist():
        drop |= (part == j + 1) & (probs[:, j + 1] > 0.5)

    axes = model.axes
    for j in torch.nonzero(short, as_tuple=False).reshape(-1).tolist():
        members = torch.nonzero((part == j + 1) & ~drop, as_tuple=False).reshape(-1)
        if members.numel() == 0:
            continue
        k = int(torch.randint(model.n_configs, (1,), generator=generator))
        n = members.numel()
        model.move_gaussians_(
            axes[j].expand(n, 6), thetas[k, j].expand(n), members
        )

    keep, columns = model.remove_screws(remove, merge=short)
    selections = {
        "raw_axes": (0, keep),
        "confidence_logits": (0, keep),
        "thetas": (1, keep),
        "part_logits": (1, columns),
    }
    if state is not None:
        sync_optimizer(state.optimizer, model, selections)
    removed_gaussians = int(drop.sum())
    if removed_gaussians:
        index = model.keep_gaussians(~drop)
        if state is not None:
            sync_optimizer(state.optimizer, model, {name: (0, index) for name in GAUSSIAN_PARAMS})
    result = SelectionResult(
        low_confidence=torch.nonzero(low, as_tuple=False).reshape(-1).tolist(),
        short_interval=torch.nonzero(short, as_tuple=False).reshape(-1).tolist(),
        removed_gaussians=removed_gaussians,
    )
    logger.info(
        "Screw selection removed %s (low confidence) and %s (short interval); %d screws left",
        result.low_confidence, result.short_interval, model.n_screws,
    )
    return result


def is_periodic_reset(iteration: int, cfg: FitConfig) -> bool:
    return iteration % cfg.reset_interval == 0 and iteration + cfg.reset_interval <= cfg.selection_iteration


def is_opacity_reset(iteration: int, cfg: FitConfig) -> bool:
    return (
        iteration % cfg.opacity_reset_interval == 0
        and iteration < cfg.selection_iteration
        and not is_periodic_reset(iteration, cfg)
    )


def group_by_config(observations: Sequence[Observation]) -> dict[int, list[Observation]]:
    if not observations:
        raise EmptyObservationsError("fit needs observations")
    groups: dict[int, list[Observation]] = {}
    for obs in observations:
        groups.setdefault(obs.config_index, []).append(obs)
    if sorted(groups) != list(range(len(groups))):
        raise EmptyObservationsError(f"configuration indices must be 0..n-1, got {sorted(groups)}")
    if len(groups) < MIN_CONFIGS:
        raise EmptyObservationsError(f"fit needs at least {MIN_CONFIGS} configurations, got {len(groups)}")
    thin = [k for k, obs in groups.items() if len(obs) < MIN_CAMERAS]
    if thin:
        raise EmptyObservationsError(f"configurations {thin} have fewer than {MIN_CAMERAS} cameras")
    return groups


class LossLog:
    """CSV loss log, one row per iteration."""

    def __init__(self, path: str | Path):
        self._file = open(path, "w", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(LOG_COLUMNS)

    def write(self, record: LossRecord) -> None:
        self._writer.writerow(record)

    def close(self) -> None:
        self._file.close()


def _dump(model: ArticulatedSplatModel, dump_dir: Path | None, iteration: int) -> str:
    directory = Path(dump_dir) if dump_dir is not None else Path(tempfile.gettempdir())
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"nonfinite_it{iteration:06d}.json"
    save_model(model, path)
    return str(path)


def fit(
    observations: Sequence[Observation],
    cfg: FitConfig | None = None,
    loss_cfg: LossConfig | None = None,
    init_cfg: InitConfig | None = None,
    model: ArticulatedSplatModel | None = None,
    log_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    dump_dir: str | Path | None = None,
) -> ArticulatedSplatModel:
    """Fit an articulated model to multi-configuration observations."""
    cfg = cfg or FitConfig()
    loss_cfg = loss_cfg or LossConfig()
    init_cfg = init_cfg or InitConfig()
    groups = group_by_config(observations)
    if model is None:
        model = init_model(init_cfg.model_copy(update={"n_configs": len(groups)}), cfg.seed)
    state = new_state(model, cfg)
    log = LossLog(log_path) if log_path is not None else None
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    logger.info(
        "Fitting %d observations over %d configurations, %d iterations",
        len(observations), len(groups), cfg.iterations,
    )
    try:
        for it in range(1, cfg.iterations + 1):
            _group(state.optimizer, "positions")["lr"] = position_lr(it - 1, cfg)
            pick = int(torch.randint(len(observations), (1,), generator=state.generator))
            try:
                record = train_step(model, state, [observations[pick]], loss_cfg)
            except NonFiniteLossError as e:
                path = _dump(model, dump_dir, it)
                logger.error("Non-finite loss at iteration %d, state dumped to %s", it, path)
                raise NonFiniteLossError(str(e), dump_path=path) from e
            if log is not None:
                log.write(record)
            if it % cfg.log_interval == 0:
                logger.info(
                    "it %d  loss %.5f  render %.5f  parsimony %.5f  active screws %d",
                    *record,
                )
            if is_periodic_reset(it, cfg):
                periodic_reset(model, state, init_cfg.initial_confidence)
            elif is_opacity_reset(it, cfg):
                prune_transparent(model, state, cfg.prune_opacity)
                opacity_reset(model, cfg.opacity_reset_value, state)
            if it == cfg.selection_iteration:
                select_screws(model, cfg, state)
            if cfg.checkpoint_interval and checkpoint_dir is not None and it % cfg.checkpoint_interval == 0:
                save_model(model, Path(checkpoint_dir) / f"checkpoint_{it:06d}.json")
    finally:
        if log is not None:
            log.close()
    # survivors must still satisfy both criteria after fine-tuning
    select_screws(model, cfg, state)
    logger.info("Fit finished with %d screws and %d Gaussians", model.n_screws, model.n_gaussians)
    return model


@dataclass
class SweepResult:
    best_beta: float
    model: ArticulatedSplatModel
    scores: dict[float, float]


def sweep_parsimony(
    observations: Sequence[Observation],
    betas: Sequence[float],
    cfg: FitConfig | None = None,
    loss_cfg: LossConfig | None = None,
    init_cfg: InitConfig | None = None,
    holdout: Sequence[Observation] | None = None,
    score: Callable[[ArticulatedSplatModel], float] | None = None,
) -> SweepResult:
    """Fit once per beta and keep the highest-scoring model.

    The default score is mean PSNR on the held-out midpoint views, or on the
    training views when no holdout is given.
    """
    if not betas:
        raise ValueError("need at least one beta")
    loss_cfg = loss_cfg or LossConfig()
    if score is None:
        if holdout:
            score = lambda m: appearance(m, holdout, midpoint=True)[0]  # noqa: E731
        else:
            score = lambda m: appearance(m, observations)[0]  # noqa: E731
    scores: dict[float, float] = {}
    best: tuple[float, float, ArticulatedSplatModel] | None = None
    for beta in betas:
        model = fit(observations, cfg, loss_cfg.model_copy(update={"beta": beta}), init_cfg)
        value = score(model)
        scores[beta] = value
        logger.info("beta %.4f: score %.3f with %d screws", beta, value, model.n_screws)
        if best is None or value > best[1]:
            best = (beta, value, model)
    return SweepResult(best_beta=best[0], model=best[2], scores=scores)
