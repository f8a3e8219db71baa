"""Synthetic articulated objects, hemisphere camera rigs and observation datasets.

Dataset directory layout:

    dataset.json          DatasetManifest (spec, seed, cameras, configs, GT screws, file lists)
    gt_model.json         ground-truth model document, joint_angles = training configs
    img_k{K}_c{C}.png     training view of configuration K from camera C
    holdout_k{K}_c{C}.png view of the midpoint between configurations K and K + 1
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import torch
from pydantic import ValidationError

from screwsplat.config import DTYPE, SynthConfig
from screwsplat.errors import InvalidSpecError, OutOfLimitsError, ShapeMismatchError
from screwsplat.models import (
    Camera,
    DatasetManifest,
    JointSpec,
    Observation,
    ObservationRecord,
    ObjectSpec,
    PartSpec,
    ScrewAxis,
)
from screwsplat.renderer import render_model
from screwsplat.splat_model import ArticulatedSplatModel, load_model, logit, save_model
from screwsplat.utils import load_png, save_png

logger = logging.getLogger(__name__)

HARD_LOGIT = -1000.0
GT_CONFIDENCE_LOGIT = 40.0
GT_OPACITY = 0.95
COLOR_JITTER = 0.04
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


# -- presets --


def _laptop() -> ObjectSpec:
    return ObjectSpec(
        name="laptop",
        parts=[
            PartSpec(name="base", shape="slab", center=(0.0, 0.0, -0.025), extent=(0.8, 0.6, 0.05),
                     color=(0.3, 0.3, 0.35), gaussian_count=250),
            PartSpec(name="lid", shape="slab", center=(0.0, 0.3, 0.3), extent=(0.8, 0.05, 0.6),
                     color=(0.85, 0.45, 0.2), gaussian_count=250, attached_screw=0),
        ],
        joints=[
            JointSpec(axis=ScrewAxis.revolute_through((-1.0, 0.0, 0.0), (0.0, 0.3, 0.0)),
                      lower=0.0, upper=math.pi / 2),
        ],
    )


def _drawer() -> ObjectSpec:
    return ObjectSpec(
        name="drawer",
        parts=[
            PartSpec(name="cabinet", shape="box", center=(0.0, 0.0, 0.0), extent=(0.8, 0.8, 0.6),
                     color=(0.55, 0.4, 0.25), gaussian_count=300),
            PartSpec(name="front", shape="slab", center=(0.0, -0.44, 0.0), extent=(0.6, 0.05, 0.4),
                     color=(0.2, 0.5, 0.8), gaussian_count=200, attached_screw=0),
        ],
        joints=[
            JointSpec(axis=ScrewAxis.prismatic_along((0.0, -1.0, 0.0)), lower=0.0, upper=0.4),
        ],
    )


def _storage3() -> ObjectSpec:
    return ObjectSpec(
        name="storage-3",
        parts=[
            PartSpec(name="cabinet", shape="box", center=(0.0, 0.0, 0.0), extent=(1.0, 0.6, 1.0),
                     color=(0.6, 0.6, 0.55), gaussian_count=300),
            PartSpec(name="left-door", shape="slab", center=(-0.25, -0.33, 0.22), extent=(0.48, 0.04, 0.5),
                     color=(0.8, 0.3, 0.3), gaussian_count=120, attached_screw=0),
            PartSpec(name="right-door", shape="slab", center=(0.25, -0.33, 0.22), extent=(0.48, 0.04, 0.5),
                     color=(0.3, 0.7, 0.3), gaussian_count=120, attached_screw=1),
            PartSpec(name="drawer", shape="slab", center=(0.0, -0.33, -0.28), extent=(0.9, 0.04, 0.35),
                     color=(0.25, 0.35, 0.8), gaussian_count=120, attached_screw=2),
        ],
        joints=[
            JointSpec(axis=ScrewAxis.revolute_through((0.0, 0.0, -1.0), (-0.5, -0.33, 0.0)),
                      lower=0.0, upper=1.2),
            JointSpec(axis=ScrewAxis.revolute_through((0.0, 0.0, 1.0), (0.5, -0.33, 0.0)),
                      lower=0.0, upper=1.2),
            JointSpec(axis=ScrewAxis.prismatic_along((0.0, -1.0, 0.0)), lower=0.0, upper=0.3),
        ],
    )


def _static() -> ObjectSpec:
    return ObjectSpec(
        name="static",
        parts=[
            PartSpec(name="block", shape="box", center=(0.0, 0.0, 0.0), extent=(0.8, 0.6, 0.5),
                     color=(0.7, 0.5, 0.3), gaussian_count=300),
        ],
    )


PRESETS = {
    "laptop": _laptop,
    "drawer": _drawer,
    "storage-3": _storage3,
    "static": _static,
}


def preset(name: str) -> ObjectSpec:
    if name not in PRESETS:
        raise InvalidSpecError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def parse_spec(data: dict | str) -> ObjectSpec:
    try:
        if isinstance(data, str):
            return ObjectSpec.model_validate_json(data)
        return ObjectSpec.model_validate(data)
    except ValidationError as e:
        raise InvalidSpecError(str(e)) from e


def fit_unit_sphere(spec: ObjectSpec) -> ObjectSpec:
    """Shrink the object about the origin until every part box lies inside the unit sphere."""
    reach = 0.0
    for part in spec.parts:
        for sx in (-1, 1):
            for sy in (-1, 1):
                for sz in (-1, 1):
                    corner = [c + s * e / 2 for c, s, e in zip(part.center, (sx, sy, sz), part.extent)]
                    reach = max(reach, math.sqrt(sum(x * x for x in corner)))
    if reach <= 1.0:
        return spec
    f = 1.0 / reach
    logger.info("Scaling object %s by %.4f to fit the unit sphere", spec.name, f)
    parts = [
        p.model_copy(update={
            "center": tuple(c * f for c in p.center),
            "extent": tuple(e * f for e in p.extent),
        })
        for p in spec.parts
    ]
    joints = []
    for joint in spec.joints:
        if joint.axis.is_revolute:
            point = tuple((joint.axis.point() * f).tolist())
            joints.append(joint.model_copy(update={"axis": ScrewAxis.revolute_through(joint.axis.omega, point)}))
        else:
            joints.append(joint.model_copy(update={"lower": joint.lower * f, "upper": joint.upper * f}))
    return spec.model_copy(update={"parts": parts, "joints": joints})


# -- object construction --


def _sample_surface(part: PartSpec, n: int, g: torch.Generator) -> tuple[torch.Tensor, float]:
    """n points on the part surface and the surface area."""
    center = torch.tensor(part.center, dtype=DTYPE)
    half = torch.tensor(part.extent, dtype=DTYPE) / 2
    if part.shape == "cylinder-shell":
        phi = torch.rand(n, generator=g, dtype=DTYPE) * 2 * math.pi
        z = (torch.rand(n, generator=g, dtype=DTYPE) * 2 - 1) * half[2]
        pts = torch.stack([half[0] * torch.cos(phi), half[1] * torch.sin(phi), z], dim=-1)
        # Ramanujan's ellipse perimeter
        a, b = float(half[0]), float(half[1])
        perimeter = math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))
        return pts + center, perimeter * 2 * float(half[2])
    # box and slab: faces chosen by area
    hx, hy, hz = half.tolist()
    areas = torch.tensor([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy], dtype=DTYPE) * 4
    face = torch.multinomial(areas / areas.sum(), n, replacement=True, generator=g)
    uv = torch.rand(n, 2, generator=g, dtype=DTYPE) * 2 - 1
    axis = face // 2
    sign = torch.where(face % 2 == 0, 1.0, -1.0).to(DTYPE)
    pts = torch.zeros(n, 3, dtype=DTYPE)
    others = torch.tensor([[1, 2], [0, 2], [0, 1]])[axis]
    rows = torch.arange(n)
    pts[rows, axis] = sign * half[axis]
    pts[rows, others[:, 0]] = uv[:, 0] * half[others[:, 0]]
    pts[rows, others[:, 1]] = uv[:, 1] * half[others[:, 1]]
    return pts + center, float(areas.sum())


class SyntheticObject(NamedTuple):
    model: ArticulatedSplatModel
    screws: list[ScrewAxis]
    spec: ObjectSpec


def make_object(spec: ObjectSpec | dict, seed: int = 0) -> SyntheticObject:
    """Ground-truth model: one-hot part assignments, every planted screw at gamma = 1."""
    if not isinstance(spec, ObjectSpec):
        spec = parse_spec(spec)
    spec = fit_unit_sphere(spec)
    g = torch.Generator().manual_seed(seed)
    n_s = len(spec.joints)
    positions, colors, log_scales, part_logits = [], [], [], []
    for part in spec.parts:
        n = part.gaussian_count
        pts, area = _sample_surface(part, n, g)
        positions.append(pts)
        jitter = (torch.rand(n, 3, generator=g, dtype=DTYPE) * 2 - 1) * COLOR_JITTER
        colors.append((torch.tensor(part.color, dtype=DTYPE) + jitter).clamp(0.0, 1.0))
        spacing = math.sqrt(area / n)
        log_scales.append(torch.full((n, 3), math.log(0.6 * spacing), dtype=DTYPE))
        slot = 0 if part.attached_screw is None else part.attached_screw + 1
        logits = torch.full((n, n_s + 1), HARD_LOGIT, dtype=DTYPE)
        logits[:, slot] = 0.0
        part_logits.append(logits)
    total = sum(p.gaussian_count for p in spec.parts)
    quaternions = torch.zeros(total, 4, dtype=DTYPE)
    quaternions[:, 0] = 1.0
    screws = [joint.axis for joint in spec.joints]
    raw_axes = torch.tensor(
        [s.omega + tuple(s.point().tolist()) if s.is_revolute else (0.0, 0.0, 0.0) + s.v for s in screws],
        dtype=DTYPE,
    ).reshape(n_s, 6)
    model = ArticulatedSplatModel(
        positions=torch.cat(positions),
        quaternions=quaternions,
        log_scales=torch.cat(log_scales),
        opacity_logits=torch.full((total,), logit(GT_OPACITY), dtype=DTYPE),
        colors=torch.cat(colors),
        part_logits=torch.cat(part_logits),
        raw_axes=raw_axes,
        is_revolute=torch.tensor([s.is_revolute for s in screws], dtype=torch.bool),
        confidence_logits=torch.full((n_s,), GT_CONFIDENCE_LOGIT, dtype=DTYPE),
        thetas=torch.zeros(1, n_s, dtype=DTYPE),
    )
    logger.debug("Built %s: %d Gaussians, %d screws", spec.name, total, n_s)
    return SyntheticObject(model, screws, spec)


def set_configs(model: ArticulatedSplatModel, configs: Sequence[Sequence[float]]) -> None:
    """Replace the model's joint-angle vectors."""
    thetas = torch.tensor([list(c) for c in configs], dtype=DTYPE).reshape(len(configs), model.n_screws)
    model.thetas = torch.nn.Parameter(thetas)


# -- cameras --


def look_at(position: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """World-from-camera rotation with columns (right, down, forward); world up is +z."""
    forward = target - position
    forward = forward / torch.linalg.norm(forward)
    up = torch.tensor([0.0, 0.0, 1.0], dtype=DTYPE)
    right = torch.linalg.cross(forward, up)
    if torch.linalg.norm(right) < 1e-9:
        right = torch.linalg.cross(forward, torch.tensor([1.0, 0.0, 0.0], dtype=DTYPE))
    right = right / torch.linalg.norm(right)
    down = torch.linalg.cross(forward, right)
    return torch.stack([right, down, forward], dim=1)


def hemisphere_cameras(
    n: int,
    radius: float = 2.6,
    target=(0.0, 0.0, 0.0),
    image_size: tuple[int, int] = (64, 64),
    focal: float | None = None,
) -> list[Camera]:
    """n cameras on a Fibonacci hemisphere above `target`, all looking at it.

    Camera i sits at height z_i = 1 - i / n (unit sphere), so camera 0 is at the pole.
    """
    if n < 1:
        raise ValueError("need at least one camera")
    width, height = image_size
    focal = focal if focal is not None else 1.1 * max(width, height)
    center = torch.tensor(target, dtype=DTYPE)
    cameras = []
    for i in range(n):
        z = 1.0 - i / n
        r = math.sqrt(max(0.0, 1.0 - z * z))
        phi = i * GOLDEN_ANGLE
        position = center + radius * torch.tensor([r * math.cos(phi), r * math.sin(phi), z], dtype=DTYPE)
        rotation = look_at(position, center)
        cameras.append(
            Camera(
                fx=focal, fy=focal, cx=(width - 1) / 2, cy=(height - 1) / 2,
                width=width, height=height,
                rotation=tuple(tuple(row) for row in rotation.tolist()),
                position=tuple(position.tolist()),
            )
        )
    return cameras


# -- configurations --


def evenly_spaced_configs(spec: ObjectSpec, n: int = 5) -> list[list[float]]:
    """n joint vectors spaced evenly across the limits of every joint."""
    if not spec.joints:
        return [[] for _ in range(n)]
    steps = [i / (n - 1) if n > 1 else 0.0 for i in range(n)]
    return [[j.lower + t * (j.upper - j.lower) for j in spec.joints] for t in steps]


def random_configs(spec: ObjectSpec, n: int = 5, seed: int = 0) -> list[list[float]]:
    g = torch.Generator().manual_seed(seed)
    if not spec.joints:
        return [[] for _ in range(n)]
    lower = torch.tensor([j.lower for j in spec.joints], dtype=DTYPE)
    upper = torch.tensor([j.upper for j in spec.joints], dtype=DTYPE)
    u = torch.rand(n, len(spec.joints), generator=g, dtype=DTYPE)
    return (lower + u * (upper - lower)).tolist()


def default_configs(spec: ObjectSpec, n: int = 5, seed: int = 0) -> list[list[float]]:
    """Evenly spaced for single-joint objects, seeded-random for multi-joint ones."""
    if len(spec.joints) > 1:
        return random_configs(spec, n, seed)
    return evenly_spaced_configs(spec, n)


def midpoint_configs(configs: Sequence[Sequence[float]]) -> list[list[float]]:
    return [[(a + b) / 2 for a, b in zip(c0, c1)] for c0, c1 in zip(configs[:-1], configs[1:])]


def check_limits(spec: ObjectSpec, config: Sequence[float]) -> None:
    if len(config) != len(spec.joints):
        raise OutOfLimitsError(f"config has {len(config)} entries, object has {len(spec.joints)} joints")
    for j, (value, joint) in enumerate(zip(config, spec.joints)):
        if not joint.lower <= value <= joint.upper:
            raise OutOfLimitsError(f"joint {j}: {value} outside [{joint.lower}, {joint.upper}]")


# -- datasets --


@torch.no_grad()
def generate_dataset(
    obj: SyntheticObject,
    configs: Sequence[Sequence[float]],
    cameras: Sequence[Camera],
) -> list[Observation]:
    """One observation per (configuration, camera), rendered with the GT model."""
    for config in configs:
        check_limits(obj.spec, config)
    set_configs(obj.model, configs)
    return [
        Observation(k, cam, render_model(obj.model, k, cam))
        for k in range(len(configs))
        for cam in cameras
    ]


@torch.no_grad()
def render_holdout(
    obj: SyntheticObject,
    configs: Sequence[Sequence[float]],
    cameras: Sequence[Camera],
) -> list[Observation]:
    """Views at arbitrary configurations, without touching the model's stored configs."""
    views = []
    for k, config in enumerate(configs):
        check_limits(obj.spec, config)
        theta = torch.tensor(list(config), dtype=DTYPE)
        views.extend(Observation(k, cam, render_model(obj.model, theta, cam)) for cam in cameras)
    return views


@dataclass
class Dataset:
    manifest: DatasetManifest
    observations: list[Observation]
    holdout: list[Observation]
    gt_model: ArticulatedSplatModel | None = None

    @property
    def n_configs(self) -> int:
        return len(self.manifest.configs)


def synthesize(spec: ObjectSpec, cfg: SynthConfig | None = None, seed: int = 0) -> Dataset:
    """Build object, rig, training configurations and midpoint holdout in one go."""
    cfg = cfg or SynthConfig()
    obj = make_object(spec, seed)
    cameras = hemisphere_cameras(
        cfg.n_cameras, cfg.camera_radius, cfg.target, (cfg.width, cfg.height), cfg.focal
    )
    configs = default_configs(obj.spec, cfg.n_configs, seed)
    holdout_configs = midpoint_configs(configs)
    observations = generate_dataset(obj, configs, cameras)
    holdout = render_holdout(obj, holdout_configs, cameras)
    manifest = DatasetManifest(
        spec=obj.spec,
        seed=seed,
        cameras=cameras,
        configs=configs,
        holdout_configs=holdout_configs,
        gt_screws=obj.screws,
        observations=[
            ObservationRecord(config_index=o.config_index, camera_index=i % len(cameras),
                              file=f"img_k{o.config_index}_c{i % len(cameras)}.png")
            for i, o in enumerate(observations)
        ],
        holdout=[
            ObservationRecord(config_index=o.config_index, camera_index=i % len(cameras),
                              file=f"holdout_k{o.config_index}_c{i % len(cameras)}.png")
            for i, o in enumerate(holdout)
        ],
    )
    logger.info(
        "Synthesized %s: %d training and %d holdout views", obj.spec.name, len(observations), len(holdout)
    )
    return Dataset(manifest, observations, holdout, obj.model)


def save_dataset(dataset: Dataset, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for record, obs in zip(dataset.manifest.observations, dataset.observations):
        save_png(obs.image, directory / record.file)
    for record, obs in zip(dataset.manifest.holdout, dataset.holdout):
        save_png(obs.image, directory / record.file)
    if dataset.gt_model is not None:
        save_model(dataset.gt_model, directory / "gt_model.json")
    path = directory / "dataset.json"
    path.write_text(dataset.manifest.model_dump_json(indent=1))
    return path


def _load_views(directory: Path, records: Sequence[ObservationRecord], cameras: Sequence[Camera]) -> list[Observation]:
    views = []
    for record in records:
        cam = cameras[record.camera_index]
        image = load_png(directory / record.file)
        if tuple(image.shape) != (cam.height, cam.width, 3):
            raise ShapeMismatchError(
                f"{record.file} is {image.shape[1]}x{image.shape[0]}, camera expects {cam.width}x{cam.height}"
            )
        views.append(Observation(record.config_index, cam, image))
    return views


def load_dataset(directory: str | Path) -> Dataset:
    """Read a dataset directory; raises FileNotFoundError without dataset.json."""
    directory = Path(directory)
    manifest = DatasetManifest.model_validate_json((directory / "dataset.json").read_text())
    observations = _load_views(directory, manifest.observations, manifest.cameras)
    holdout = _load_views(directory, manifest.holdout, manifest.cameras)
    gt_path = directory / "gt_model.json"
    gt_model = load_model(gt_path) if gt_path.exists() else None
    return Dataset(manifest, observations, holdout, gt_model)


def dataset_views(
    dataset: Dataset,
    config_index: int,
    camera_indices: Sequence[int] | None = None,
) -> list[tuple[Camera, torch.Tensor]]:
    """(camera, image) training views of one configuration, optionally from selected cameras."""
    if not 0 <= config_index < dataset.n_configs:
        raise OutOfLimitsError(f"config index {config_index} outside [0, {dataset.n_configs})")
    wanted = None if camera_indices is None else set(camera_indices)
    views = [
        (obs.camera, obs.image)
        for record, obs in zip(dataset.manifest.observations, dataset.observations)
        if record.config_index == config_index and (wanted is None or record.camera_index in wanted)
    ]
    if not views:
        raise OutOfLimitsError(f"no views of configuration {config_index} from cameras {sorted(wanted or [])}")
    return views
