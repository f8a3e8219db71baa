"""Gaussian-process Bayesian optimization with Expected Improvement."""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.stats import norm, qmc
from sklearn.gaussian_process import GaussianProcessRegressor
from sklearn.gaussian_process.kernels import RBF

from screwsplat.errors import DegenerateSpaceError

logger = logging.getLogger(__name__)

MAX_DIM = 6
LENGTH_SCALE_GRID = np.geomspace(1e-2, 1e1, 31)


class SearchSpace(BaseModel):
    """Per-joint box [lower_j, upper_j]."""

    model_config = ConfigDict(frozen=True)

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @model_validator(mode="after")
    def _check(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower and upper bounds need the same length")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("every lower bound must be <= its upper bound")
        return self

    @classmethod
    def from_thetas(cls, thetas) -> "SearchSpace":
        """Element-wise min and max of fitted joint-angle vectors, shape (n_a, n_s)."""
        arr = np.asarray(thetas, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] == 0:
            return cls(lower=(), upper=())
        return cls(lower=tuple(arr.min(axis=0).tolist()), upper=tuple(arr.max(axis=0).tolist()))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def free_dims(self) -> list[int]:
        return [j for j, (lo, hi) in enumerate(zip(self.lower, self.upper)) if hi > lo]

    def span(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=np.float64), self.lower, self.upper)


@dataclass
class BayesOptResult:
    x: np.ndarray
    value: float
    history: list[tuple[np.ndarray, float]] = field(default_factory=list)


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float) -> np.ndarray:
    """EI for minimization: (best - mu) Phi(z) + sigma phi(z), z = (best - mu) / sigma."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    improvement = best - mean
    safe = np.where(std > 1e-12, std, 1.0)
    z = improvement / safe
    ei = improvement * norm.cdf(z) + safe * norm.pdf(z)
    return np.where(std > 1e-12, np.maximum(ei, 0.0), np.maximum(improvement, 0.0))


def _log_grid_optimizer(obj_func, initial_theta, bounds, sweeps: int = 2):
    """Maximum-likelihood length scales by coordinate-wise search over a log grid."""
    theta = np.array(initial_theta, dtype=np.float64)
    best_value = obj_func(theta, eval_gradient=False)
    log_grid = np.log(LENGTH_SCALE_GRID)
    for _ in range(sweeps):
        for k, (lo, hi) in enumerate(bounds):
            for t in log_grid[(log_grid >= lo) & (log_grid <= hi)]:
                trial = theta.copy()
                trial[k] = t
                value = obj_func(trial, eval_gradient=False)
                if value < best_value:
                    theta, best_value = trial, value
    return theta, best_value


def make_surrogate(dim: int = 1, noise: float = 1e-6) -> GaussianProcessRegressor:
    """GP over the unit cube with one RBF length scale per free joint."""
    return GaussianProcessRegressor(
        kernel=RBF(length_scale=np.full(dim, 0.2), length_scale_bounds=(1e-3, 1e2)),
        alpha=noise,
        normalize_y=True,
        optimizer=_log_grid_optimizer,
    )


def bayes_opt(
    objective: Callable[[np.ndarray], float],
    space: SearchSpace,
    n_calls: int = 50,
    n_random: int = 10,
    seed: int = 0,
    n_candidates: int = 2048,
    noise: float = 1e-6,
) -> BayesOptResult:
    """Minimize `objective` over `space`; returns the best evaluated point.

    Joints with lower == upper are held fixed and dropped from the search.
    """
    if not 1 <= n_random < n_calls:
        raise ValueError("need 1 <= n_random < n_calls")
    free = space.free_dims()
    if not free:
        raise DegenerateSpaceError("every joint has lower == upper; nothing to search")
    if len(free) > MAX_DIM:
        raise DegenerateSpaceError(f"search space has {len(free)} free dimensions, at most {MAX_DIM} supported")
    if len(free) < space.dim:
        logger.warning("Holding fixed joints %s", sorted(set(range(space.dim)) - set(free)))

    lower = np.asarray(space.lower, dtype=np.float64)
    span = space.span()

    def to_space(u: np.ndarray) -> np.ndarray:
        x = lower.copy()
        x[free] = lower[free] + u * span[free]
        return x

    rng = np.random.default_rng(seed)
    sobol = qmc.Sobol(d=len(free), scramble=True, seed=rng)
    units: list[np.ndarray] = []
    values: list[float] = []
    history: list[tuple[np.ndarray, float]] = []

    def evaluate(u: np.ndarray) -> None:
        x = to_space(u)
        y = float(objective(x))
        units.append(u)
        values.append(y)
        history.append((x, y))

    for u in rng.random((n_random, len(free))):
        evaluate(u)
    logger.debug("Random phase done, best %.6f", min(values))

    for call in range(n_random, n_calls):
        gp = make_surrogate(len(free), noise)
        gp.fit(np.asarray(units), np.asarray(values))
        candidates = sobol.random(n_candidates)
        mean, std = gp.predict(candidates, return_std=True)
        ei = expected_improvement(mean, std, min(values))
        evaluate(candidates[int(np.argmax(ei))])
        logger.debug("Call %d: y=%.6f best=%.6f", call + 1, values[-1], min(values))

    best = int(np.argmin(values))
    return BayesOptResult(x=history[best][0], value=values[best], history=history)
