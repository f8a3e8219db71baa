"""Shared test fixtures."""

import math

import pytest
import torch

from screwsplat.config import DTYPE, LossConfig, SynthConfig
from screwsplat.models import Camera, Observation, ScrewAxis
from screwsplat.renderer import render_model
from screwsplat.scenes import hemisphere_cameras, make_object, preset, set_configs, synthesize
from screwsplat.splat_model import ArticulatedSplatModel, logit

HARD = -1000.0


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def camera(width=8, height=8, focal=8.0, distance=4.0) -> Camera:
    """Camera on the -z axis looking along +z; camera axes coincide with world axes."""
    return Camera(
        fx=focal, fy=focal, cx=(width - 1) / 2, cy=(height - 1) / 2,
        width=width, height=height,
        rotation=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
        position=(0.0, 0.0, -distance),
    )


def build_model(
    positions,
    screws=(),
    gammas=None,
    thetas=None,
    opacity=0.8,
    part_probs=None,
    scale=0.1,
    colors=None,
) -> ArticulatedSplatModel:
    """Hand-built model; part_probs rows may contain exact zeros."""
    positions = torch.as_tensor(positions, dtype=DTYPE).reshape(-1, 3)
    n, n_s = positions.shape[0], len(screws)
    if part_probs is None:
        part_logits = torch.zeros(n, n_s + 1, dtype=DTYPE)
    else:
        probs = torch.as_tensor(part_probs, dtype=DTYPE).reshape(n, n_s + 1)
        part_logits = torch.where(probs > 0, torch.log(probs.clamp_min(1e-300)), torch.full_like(probs, HARD))
    gammas = [0.9] * n_s if gammas is None else gammas
    thetas = [[0.0] * n_s] if thetas is None else thetas
    raw = [s.omega + tuple(s.point().tolist()) if s.is_revolute else (0.0, 0.0, 0.0) + s.v for s in screws]
    quaternions = torch.zeros(n, 4, dtype=DTYPE)
    quaternions[:, 0] = 1.0
    if colors is None:
        colors = torch.full((n, 3), 0.5, dtype=DTYPE)
    return ArticulatedSplatModel(
        positions=positions,
        quaternions=quaternions,
        log_scales=torch.full((n, 3), math.log(scale), dtype=DTYPE),
        opacity_logits=torch.full((n,), logit(opacity), dtype=DTYPE),
        colors=torch.as_tensor(colors, dtype=DTYPE),
        part_logits=part_logits,
        raw_axes=torch.tensor(raw, dtype=DTYPE).reshape(n_s, 6),
        is_revolute=torch.tensor([s.is_revolute for s in screws], dtype=torch.bool),
        confidence_logits=torch.tensor([logit(g) for g in gammas], dtype=DTYPE),
        thetas=torch.tensor(thetas, dtype=DTYPE).reshape(len(thetas), n_s),
    )


def random_scene(seed: int):
    """8x8 images, 5 large Gaussians, one revolute and one prismatic screw, 2 configurations.

    Gaussians are wide enough that every alpha stays above the 1/255 floor.
    """
    g = torch.Generator().manual_seed(seed)

    def uniform(*shape, lo=0.0, hi=1.0):
        return lo + (hi - lo) * torch.rand(*shape, generator=g, dtype=DTYPE)

    n = 5
    screws = [
        ScrewAxis.revolute_through((0.2, -0.1, 1.0), tuple(uniform(3, lo=-0.1, hi=0.1).tolist())),
        ScrewAxis.prismatic_along((1.0, 0.5, 0.2)),
    ]
    model = build_model(
        uniform(n, 3, lo=-0.3, hi=0.3),
        screws,
        gammas=[0.7, 0.6],
        thetas=uniform(2, 2, lo=0.1, hi=0.4).tolist(),
        opacity=0.4,
        scale=3.0,
        colors=uniform(n, 3, lo=0.2, hi=0.8),
    )
    with torch.no_grad():
        model.part_logits.copy_(uniform(n, 3, lo=-0.5, hi=0.5))
        model.log_scales.add_(uniform(n, 3, lo=-0.1, hi=0.1))
        q = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE) + uniform(n, 4, lo=-0.2, hi=0.2)
        model.quaternions.copy_(q / torch.linalg.norm(q, dim=-1, keepdim=True))
        model.opacity_logits.add_(uniform(n, lo=-0.3, hi=0.3))
    cam = camera()
    batch = [Observation(k, cam, uniform(8, 8, 3)) for k in range(2)]
    return model, batch, LossConfig(ssim_window=5)


@pytest.fixture
def cam8():
    return camera()


@pytest.fixture
def laptop():
    """Ground-truth laptop with configurations closed and half-open."""
    obj = make_object(preset("laptop"), seed=0)
    set_configs(obj.model, [[0.0], [math.pi / 4]])
    return obj


@pytest.fixture
def laptop_views(laptop):
    """Two 16x16 views per configuration of the laptop fixture."""
    cams = hemisphere_cameras(4, image_size=(16, 16))[1:3]
    with torch.no_grad():
        return [Observation(k, c, render_model(laptop.model, k, c)) for k in range(2) for c in cams]


@pytest.fixture(scope="session")
def laptop_dataset():
    """Synthetic laptop dataset: 4 cameras, 2 configurations, 16x16 images."""
    return synthesize(preset("laptop"), SynthConfig(n_cameras=4, n_configs=2, width=16, height=16), seed=0)
